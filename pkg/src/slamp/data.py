"""Synthetic datasets and spike encoders.

Static datasets hold images in [0, 1] and are presented to the network either
as a constant input current on every timestep (``direct``) or as Bernoulli
spike trains (``poisson``). Event datasets carry their own binary spike
trains of shape (T, *input_shape) per sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .numerics import DTYPE

ENCODINGS = ("direct", "poisson", "native-events")


def _check_unit_interval(x):
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("values must lie in [0, 1]")


def encode_direct(image, timesteps):
    """Repeat ``image`` as the input current of every timestep."""
    image = np.asarray(image, dtype=DTYPE)
    _check_unit_interval(image)
    return np.ascontiguousarray(np.broadcast_to(image, (timesteps,) + image.shape))


def encode_poisson(image, timesteps, rng):
    """Independent Bernoulli(pixel) spikes at every timestep."""
    image = np.asarray(image, dtype=DTYPE)
    _check_unit_interval(image)
    return numerics.rng_bernoulli(rng, image, (timesteps,) + image.shape)


@dataclass
class Dataset:
    """Labelled samples. ``inputs`` is (N, *shape) for static encodings and
    (N, T, *shape) for native events."""

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    encoding: str = "direct"
    split: str = "train"

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label out of range")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.inputs.shape[2:] if self.encoding == "native-events" else self.inputs.shape[1:]

    @property
    def timesteps(self):
        return self.inputs.shape[1] if self.encoding == "native-events" else None

    def frames(self, idx, timesteps, rng=None):
        """Network input (T, len(idx), *input_shape) for the selected samples."""
        x = self.inputs[idx]
        if self.encoding == "direct":
            return np.ascontiguousarray(np.broadcast_to(x, (timesteps,) + x.shape))
        if self.encoding == "poisson":
            if rng is None:
                raise ValueError("poisson encoding needs an rng")
            return numerics.rng_bernoulli(rng, x, (timesteps,) + x.shape)
        if x.shape[1] != timesteps:
            raise ValueError(f"events have {x.shape[1]} timesteps, expected {timesteps}")
        return np.ascontiguousarray(np.swapaxes(x, 0, 1))

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes, self.encoding, self.split)


def _shape(dims):
    return (dims,) if np.isscalar(dims) else tuple(dims)


def _labels(n_classes, per_class):
    return np.repeat(np.arange(n_classes, dtype=np.int64), per_class)


def static_prototypes(rng, n_classes, dims, silent=None):
    protos = numerics.rng_uniform(rng, (n_classes,) + _shape(dims))
    if silent is not None:
        protos.reshape(n_classes, -1)[:, silent] = 0
    return protos


def gen_static_classes(
    rng,
    n_classes,
    dims,
    samples_per_class,
    noise,
    prototypes=None,
    silent=None,
    split="train",
    encoding="direct",
):
    """Gaussian clouds around per-class prototypes, clipped to [0, 1].

    ``silent`` lists flat input indices forced to zero in every sample (a dead
    input patch).
    """
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if prototypes is None:
        prototypes = static_prototypes(rng, n_classes, dims, silent)
    labels = _labels(n_classes, samples_per_class)
    x = prototypes[labels]
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape).astype(DTYPE)
    x = np.clip(x, 0, 1).astype(DTYPE)
    if silent is not None:
        x.reshape(len(x), -1)[:, silent] = 0
    return Dataset(x, labels, n_classes, encoding, split)


def event_rates(rng, n_classes, dims, base_rate=0.2, contrast=0.5):
    """Per-class spike-rate maps ``clip(base + contrast * (u - 1/2))``, u ~ U[0,1)."""
    u = rng.random((n_classes,) + _shape(dims))
    rates = np.clip(base_rate + contrast * (u - 0.5), 0, 1)
    return rates


def gen_event_classes(rng, n_classes, dims, timesteps, samples_per_class, rates=None, base_rate=0.2, contrast=0.5, split="train"):
    """Bernoulli spike trains drawn independently per timestep from class rate maps."""
    if rates is None:
        rates = event_rates(rng, n_classes, dims, base_rate, contrast)
    rates = np.asarray(rates)
    if np.any(rates < 0) or np.any(rates > 1):
        raise ValueError("rates must lie in [0, 1]")
    labels = _labels(n_classes, samples_per_class)
    per_sample = rates[labels][:, None]
    shape = (len(labels), timesteps) + rates.shape[1:]
    spikes = numerics.rng_bernoulli(rng, np.broadcast_to(per_sample, shape), shape)
    return Dataset(spikes, labels, n_classes, "native-events", split)
