"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SLMP"                 magic
    u16                     format version
    u32                     header length in bytes
    header                  UTF-8 JSON (sorted keys): metadata + tensor table
    payload                 raw float32 tensors, in tensor-table order
    u32                     CRC32 of the payload

The tensor table is a list of ``{"name", "shape"}`` entries.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SLMP"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    """Everything needed to rebuild a network and resume its optimizer."""

    architecture: list
    input_shape: list
    n_classes: int
    neuron: dict
    tensors: dict
    meta: dict = field(default_factory=dict)


def to_bytes(ckpt):
    table = []
    chunks = []
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = {
        "architecture": ckpt.architecture,
        "input_shape": list(ckpt.input_shape),
        "n_classes": ckpt.n_classes,
        "neuron": ckpt.neuron,
        "meta": ckpt.meta,
        "tensors": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(chunks)
    return (
        MAGIC
        + struct.pack("<HI", VERSION, len(head))
        + head
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )


def from_bytes(blob):
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 10
    if len(blob) < start + hlen + 4:
        raise CheckpointError("checkpoint is truncated")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    payload_start = start + hlen
    sizes = [int(np.prod(t["shape"])) * 4 for t in header["tensors"]]
    payload_end = payload_start + sum(sizes)
    if len(blob) != payload_end + 4:
        raise CheckpointError("checkpoint is truncated or has trailing bytes")
    payload = blob[payload_start:payload_end]
    (crc,) = struct.unpack_from("<I", blob, payload_end)
    if crc != zlib.crc32(payload):
        raise CheckpointError("checksum mismatch")
    tensors = {}
    offset = 0
    for entry, size in zip(header["tensors"], sizes):
        arr = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        offset += size
    for name, arr in tensors.items():
        if name.endswith(".mask") and not np.all((arr == 0) | (arr == 1)):
            raise CheckpointError(f"mask {name} is not binary")
    return Checkpoint(
        header["architecture"],
        header["input_shape"],
        header["n_classes"],
        header["neuron"],
        tensors,
        header["meta"],
    )


def save_checkpoint(path, ckpt):
    blob = to_bytes(ckpt)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


# ---------------------------------------------------------------------------
# network <-> checkpoint
# ---------------------------------------------------------------------------


def checkpoint_from_network(net, architecture, neuron, velocity=None, meta=None):
    tensors = {}
    for i, layer in net.prunable_layers():
        tensors[f"layer{i}.weight"] = layer.weights
        tensors[f"layer{i}.mask"] = layer.mask
    if velocity is not None:
        for (i, _), v in zip(net.prunable_layers(), velocity):
            tensors[f"layer{i}.momentum"] = v
    return Checkpoint(
        list(architecture),
        list(net.input_shape),
        int(net.n_classes),
        dict(neuron),
        tensors,
        dict(meta or {}),
    )


def network_from_checkpoint(ckpt):
    from .dynamics import build_network
    from .numerics import make_rng

    net = build_network(ckpt.architecture, tuple(ckpt.input_shape), ckpt.n_classes, make_rng(0))
    for i, layer in net.prunable_layers():
        try:
            w = ckpt.tensors[f"layer{i}.weight"]
            m = ckpt.tensors[f"layer{i}.mask"]
        except KeyError as exc:
            raise CheckpointError(f"checkpoint is missing tensors for layer {i}") from exc
        if w.shape != layer.weights.shape:
            raise CheckpointError(f"layer {i} shape {w.shape} does not match architecture")
        layer.weights = w.copy()
        layer.mask = m.copy()
    velocity = None
    if all(f"layer{i}.momentum" in ckpt.tensors for i, _ in net.prunable_layers()):
        velocity = [ckpt.tensors[f"layer{i}.momentum"].copy() for i, _ in net.prunable_layers()]
    return net, velocity
