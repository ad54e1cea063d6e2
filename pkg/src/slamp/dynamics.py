"""Integrate-and-fire layers and multi-timestep network rollout.

Membrane update for a spiking layer at step ``t``::

    H_t = H_{t-1} * (1 - S_{t-1}) + I_t + H_reset * S_{t-1}
    S_t = [H_t >= h]

Reset takes effect one step after the spike: a neuron that fired at ``t-1``
starts step ``t`` from ``H_reset`` instead of its previous potential.
``I_t`` is the masked-weight transform of the layer's input at ``t``.

The last layer of a network is a non-spiking integrator; its logits are
``sum_t I_t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .numerics import DTYPE, DimensionError


@dataclass(frozen=True)
class NeuronConfig:
    threshold: float = 1.0
    reset: float = 0.0
    timesteps: int = 2

    def __post_init__(self):
        if int(self.timesteps) != self.timesteps or self.timesteps < 1:
            raise ValueError("timesteps must be a positive integer")
        if not self.threshold > self.reset:
            raise ValueError("threshold must exceed the reset potential")


def _check_binary(s, what):
    if not np.all((s == 0) | (s == 1)):
        raise ValueError(f"{what} must be binary")


def if_step(h_prev, s_prev, current, cfg, check=True):
    """One integrate-and-fire update. Returns ``(H_new, S_new)``.

    Fires when ``H_new >= threshold`` (a neuron sitting exactly at threshold
    spikes).
    """
    h_prev = np.asarray(h_prev)
    s_prev = np.asarray(s_prev)
    current = np.asarray(current)
    if check:
        if not (h_prev.shape == s_prev.shape == current.shape):
            raise DimensionError(
                f"shape mismatch: H {h_prev.shape}, S {s_prev.shape}, I {current.shape}"
            )
        _check_binary(s_prev, "previous spikes")
    dtype = current.dtype
    h_new = h_prev * (1 - s_prev) + current + dtype.type(cfg.reset) * s_prev
    s_new = (h_new >= dtype.type(cfg.threshold)).astype(dtype)
    return h_new, s_new


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class DenseLayer:
    """Fully connected layer. ``weights`` is (in, out)."""

    kind = "dense"
    prunable = True

    def __init__(self, weights, mask=None, spiking=True):
        self.weights = np.ascontiguousarray(weights)
        if self.weights.ndim != 2:
            raise DimensionError("dense weights must be (in, out)")
        self.mask = (
            np.ones_like(self.weights) if mask is None else np.asarray(mask, self.weights.dtype)
        )
        if self.mask.shape != self.weights.shape:
            raise DimensionError("mask shape must match weights")
        _check_binary(self.mask, "mask")
        self.spiking = spiking
        self.membrane = None
        self.prev_spikes = None

    @property
    def input_shape(self):
        return (self.weights.shape[0],)

    @property
    def output_shape(self):
        return (self.weights.shape[1],)

    @property
    def effective_weights(self):
        return self.mask * self.weights

    def current(self, x):
        """Input current for a batch of inputs shaped (N, in)."""
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.weights.shape[0]:
            raise DimensionError(f"expected {self.weights.shape[0]} inputs, got {x.shape[1]}")
        return numerics.matmul(x, self.effective_weights)


class ConvLayer:
    """Convolutional IF layer. ``weights`` is (C_out, C_in, k, k)."""

    kind = "conv"
    prunable = True
    spiking = True

    def __init__(self, weights, input_shape, stride=1, padding=0, mask=None):
        self.weights = np.ascontiguousarray(weights)
        if self.weights.ndim != 4:
            raise DimensionError("conv weights must be (C_out, C_in, k, k)")
        self.mask = (
            np.ones_like(self.weights) if mask is None else np.asarray(mask, self.weights.dtype)
        )
        if self.mask.shape != self.weights.shape:
            raise DimensionError("mask shape must match weights")
        _check_binary(self.mask, "mask")
        self.input_shape = tuple(input_shape)
        self.stride = stride
        self.padding = padding
        if self.input_shape[0] != self.weights.shape[1]:
            raise DimensionError("input channels do not match kernel")
        k = self.weights.shape[2]
        self.output_shape = (
            self.weights.shape[0],
            numerics.conv_output_size(self.input_shape[1], k, stride, padding),
            numerics.conv_output_size(self.input_shape[2], k, stride, padding),
        )
        self.membrane = None
        self.prev_spikes = None

    @property
    def kernel_size(self):
        return self.weights.shape[2]

    @property
    def effective_weights(self):
        return self.mask * self.weights

    def columns(self, x):
        x = x.reshape((x.shape[0],) + self.input_shape)
        return numerics.im2col(x, self.kernel_size, self.stride, self.padding)[0]

    def current(self, x):
        x = x.reshape((x.shape[0],) + self.input_shape)
        return numerics.conv2d(x, self.effective_weights, self.stride, self.padding)


class AvgPoolLayer:
    """Parameter-free pooling; forwards real-valued pooled spikes as current."""

    kind = "avgpool"
    prunable = False
    spiking = False
    weights = None
    mask = None

    def __init__(self, size, input_shape):
        self.size = size
        self.input_shape = tuple(input_shape)
        c, h, w = self.input_shape
        if h % size or w % size:
            raise DimensionError(f"pool size {size} does not divide {h}x{w}")
        self.output_shape = (c, h // size, w // size)
        self.membrane = None
        self.prev_spikes = None

    def current(self, x):
        x = x.reshape((x.shape[0],) + self.input_shape)
        return numerics.avgpool2d(x, self.size)


class Network:
    """Ordered stack of layers ending in a non-spiking dense integrator."""

    def __init__(self, layers):
        if not layers:
            raise ValueError("network has no layers")
        self.layers = list(layers)
        out = self.layers[-1]
        if out.kind != "dense" or out.spiking:
            raise ValueError("last layer must be a non-spiking dense integrator")
        # bumped whenever weights or masks change; stale tapes are rejected
        self.version = 0

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    @property
    def input_shape(self):
        return self.layers[0].input_shape

    @property
    def n_classes(self):
        return self.layers[-1].output_shape[0]

    @property
    def dtype(self):
        return self.prunable_layers()[0][1].weights.dtype

    def prunable_layers(self):
        return [(i, layer) for i, layer in enumerate(self.layers) if layer.prunable]

    def weights(self):
        return [layer.weights for _, layer in self.prunable_layers()]

    def masks(self):
        return [layer.mask for _, layer in self.prunable_layers()]

    def astype(self, dtype):
        """Copy of the network with weights cast to ``dtype``."""
        layers = []
        for layer in self.layers:
            if layer.kind == "dense":
                layers.append(DenseLayer(layer.weights.astype(dtype), layer.mask.astype(dtype), layer.spiking))
            elif layer.kind == "conv":
                layers.append(
                    ConvLayer(
                        layer.weights.astype(dtype),
                        layer.input_shape,
                        layer.stride,
                        layer.padding,
                        layer.mask.astype(dtype),
                    )
                )
            else:
                layers.append(AvgPoolLayer(layer.size, layer.input_shape))
        return Network(layers)

    def touch(self):
        self.version += 1


def reset_network(net):
    """Clear membranes and last spikes; weights and masks are untouched."""
    for layer in net:
        layer.membrane = None
        layer.prev_spikes = None
    return net


def _zero_state(layer, n, dtype):
    shape = (n,) + tuple(layer.output_shape)
    return np.zeros(shape, dtype), np.zeros(shape, dtype)


def layer_forward_t(layer, s_in, cfg):
    """Advance ``layer`` by one timestep on a batch ``s_in`` (N, *input_shape).

    Mutates the layer's membrane and last-spike state and returns its output:
    spikes for IF layers, pooled values for pooling, and the updated membrane
    for the output integrator.
    """
    s_in = np.asarray(s_in)
    if s_in.shape[1:] != tuple(layer.input_shape) and s_in.reshape(s_in.shape[0], -1).shape[1] != int(
        np.prod(layer.input_shape)
    ):
        raise DimensionError(f"layer expects input {layer.input_shape}, got {s_in.shape[1:]}")
    current = layer.current(s_in)
    if layer.kind == "avgpool":
        return current
    n = s_in.shape[0]
    if layer.membrane is None:
        layer.membrane, layer.prev_spikes = _zero_state(layer, n, current.dtype)
    if not layer.spiking:
        layer.membrane = layer.membrane + current
        return layer.membrane
    layer.membrane, layer.prev_spikes = if_step(layer.membrane, layer.prev_spikes, current, cfg)
    return layer.prev_spikes


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


@dataclass
class SpikeRecord:
    """Per-layer activity of one rollout, every array indexed (t, batch, ...).

    ``inputs[i]`` is what layer ``i`` received (network input for layer 0),
    ``spikes[i]`` its output (``None`` for the integrator), ``membranes[i]``
    its potentials (IF layers only, when recorded).
    """

    inputs: list
    spikes: list
    membranes: list | None = None
    logits: np.ndarray | None = None

    @property
    def timesteps(self):
        return self.inputs[0].shape[0]

    @property
    def batch_size(self):
        return self.inputs[0].shape[1]


@dataclass
class TapeNode:
    """Saved activations of one layer over all timesteps."""

    op: str
    layer_index: int
    inputs: np.ndarray
    membranes: np.ndarray | None = None
    spikes: np.ndarray | None = None
    surrogate_input: bool = False


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    version: int = -1
    relaxed: object = None
    cfg: NeuronConfig | None = None


def relaxed_spike(u, cfg, width):
    """Smooth primitive of the triangle surrogate, centred on the threshold."""
    z = (u - cfg.threshold) / width
    lo = 0.5 * (z + 1) ** 2
    hi = 1 - 0.5 * (1 - z) ** 2
    out = np.where(z < 0, lo, hi)
    out = np.where(z <= -1, 0, out)
    out = np.where(z >= 1, 1, out)
    return out.astype(u.dtype)


def _run_if(current, cfg, relaxed=None):
    """Time recursion of an IF layer on precomputed currents (T, N, ...)."""
    steps = current.shape[0]
    h = np.zeros_like(current)
    s = np.zeros_like(current)
    h_prev = np.zeros_like(current[0])
    s_prev = np.zeros_like(current[0])
    reset = current.dtype.type(cfg.reset)
    thr = current.dtype.type(cfg.threshold)
    for t in range(steps):
        h_t = h_prev * (1 - s_prev) + current[t] + reset * s_prev
        if relaxed is None:
            s_t = (h_t >= thr).astype(current.dtype)
        else:
            s_t = relaxed_spike(h_t, cfg, relaxed.width)
        h[t] = h_t
        s[t] = s_t
        h_prev, s_prev = h_t, s_t
    return h, s


def network_forward(net, inputs, cfg, record=False, relaxed=None, tape=None):
    """Simulate ``net`` over T timesteps.

    ``inputs`` is (T, N, *input_shape): binary spikes or analog currents for
    the first layer. Membranes start at zero for every sample. Returns
    ``(logits, record)`` where ``record`` is a :class:`SpikeRecord` (or
    ``None`` when ``record`` is false). With ``relaxed`` set to a surrogate
    config, spikes are replaced by the smooth primitive of the surrogate
    derivative (used for gradient checking).

    Passing a :class:`Tape` stores what backward needs.
    """
    inputs = np.asarray(inputs)
    if inputs.ndim < 3:
        raise DimensionError("inputs must be (T, N, *input_shape)")
    steps, n = inputs.shape[:2]
    if steps != cfg.timesteps:
        raise DimensionError(f"input has {steps} timesteps, config expects {cfg.timesteps}")
    reset_network(net)
    x = inputs.astype(net.dtype, copy=False)
    rec_inputs, rec_spikes, rec_membranes = [], [], []
    if tape is not None:
        tape.nodes = []
        tape.version = net.version
        tape.relaxed = relaxed
        tape.cfg = cfg
    logits = None
    for i, layer in enumerate(net):
        flat = x.reshape((steps * n,) + x.shape[2:])
        current = layer.current(flat)
        current = current.reshape((steps, n) + current.shape[1:])
        node = TapeNode(layer.kind, i, x) if tape is not None else None
        if record:
            rec_inputs.append(x)
        if layer.kind == "avgpool":
            y = current
            if record:
                rec_spikes.append(y)
                rec_membranes.append(None)
        elif layer.spiking:
            h, s = _run_if(current, cfg, relaxed)
            layer.membrane, layer.prev_spikes = h[-1], s[-1]
            y = s
            if node is not None:
                node.membranes, node.spikes = h, s
            if record:
                rec_spikes.append(s)
                rec_membranes.append(h)
        else:
            acc = current[0].copy()
            for t in range(1, steps):
                acc = acc + current[t]
            layer.membrane = acc
            logits = acc
            y = None
            if record:
                rec_spikes.append(None)
                rec_membranes.append(None)
        if node is not None:
            tape.nodes.append(node)
        x = y
    numerics.check_finite(logits, "logits")
    rec = SpikeRecord(rec_inputs, rec_spikes, rec_membranes, logits) if record else None
    return logits, rec


def build_network(architecture, input_shape, n_classes, rng, dtype=DTYPE):
    """Instantiate layers from a list of layer descriptors.

    Descriptors are dicts with ``kind`` in {dense, conv, avgpool, output}.
    Weights are drawn uniformly in ``±scale * sqrt(3 / fan_in)``.
    """
    layers = []
    shape = tuple(input_shape)
    descriptors = list(architecture)
    if not descriptors or descriptors[-1].get("kind") != "output":
        descriptors.append({"kind": "output"})
    for desc in descriptors:
        kind = desc["kind"]
        scale = desc.get("init_scale", 1.0)
        if kind in ("dense", "output"):
            fan_in = int(np.prod(shape))
            units = n_classes if kind == "output" else desc["units"]
            bound = scale * np.sqrt(3.0 / fan_in)
            w = numerics.rng_uniform(rng, (fan_in, units), -bound, bound).astype(dtype)
            layers.append(DenseLayer(w, spiking=kind == "dense"))
            shape = (units,)
        elif kind == "conv":
            if len(shape) != 3:
                raise DimensionError("conv layer needs (C, H, W) input")
            k = desc.get("kernel", 3)
            fan_in = shape[0] * k * k
            bound = scale * np.sqrt(3.0 / fan_in)
            w = numerics.rng_uniform(rng, (desc["channels"], shape[0], k, k), -bound, bound).astype(dtype)
            layer = ConvLayer(w, shape, desc.get("stride", 1), desc.get("padding", 0))
            layers.append(layer)
            shape = layer.output_shape
        elif kind == "avgpool":
            layer = AvgPoolLayer(desc.get("size", 2), shape)
            layers.append(layer)
            shape = layer.output_shape
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return Network(layers)
