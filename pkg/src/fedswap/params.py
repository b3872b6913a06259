"""Flat decoder parameter vectors, the pairwise distance metric, and weighted aggregation.

Every decoder in a simulation is represented as one float64 vector whose
layout is fixed by a shared :class:`LayerManifest`, so vectors from
different clients are directly comparable coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    ManifestMismatch,
    ZeroNormVector,
)

__all__ = [
    "ParamVector",
    "AggregationWeights",
    "LayerManifest",
    "cosine_distance",
    "weighted_average",
]


def _as_readonly_f64(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParamVector:
    """An immutable flat decoder: float64 values in canonical manifest order."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_readonly_f64(self.values, "values")
        if arr.size < 1:
            raise ValueError("ParamVector must hold at least one entry")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ParamVector entries must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __repr__(self) -> str:  # avoid dumping long arrays
        return f"ParamVector(dim={self.dim})"


@dataclass(frozen=True, eq=False)
class AggregationWeights:
    """Per-client aggregation weights; non-negative and summing to one."""

    weights: np.ndarray

    _SUM_TOL = 1e-9

    def __post_init__(self):
        arr = _as_readonly_f64(self.weights, "weights")
        if arr.size < 1:
            raise EmptyInput("at least one weight is required")
        if np.any(arr < 0.0):
            raise ValueError("weights must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > self._SUM_TOL:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "weights", arr)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "AggregationWeights":
        """Weights proportional to local dataset sizes: w_i = n_i / sum(n)."""
        if len(sizes) == 0:
            raise EmptyInput("at least one dataset size is required")
        if any(s <= 0 for s in sizes):
            raise ValueError("dataset sizes must be positive")
        total = sum(sizes)
        return cls(np.array([s / total for s in sizes], dtype=np.float64))

    def __len__(self) -> int:
        return int(self.weights.size)


@dataclass(frozen=True)
class LayerManifest:
    """Canonical flattening order for a decoder: a fixed sequence of layer shapes.

    All clients in a simulation register the same manifest, which makes the
    assumption of identical decoder architectures checkable.
    """

    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        shapes = tuple(tuple(int(d) for d in s) for s in self.shapes)
        if not shapes:
            raise ValueError("manifest must declare at least one layer")
        for s in shapes:
            if any(d < 1 for d in s):
                raise ValueError(f"layer shape {s} has a non-positive dimension")
        object.__setattr__(self, "shapes", shapes)

    @property
    def dim(self) -> int:
        return int(sum(int(np.prod(s)) for s in self.shapes))

    def flatten(self, layers: Sequence[np.ndarray]) -> ParamVector:
        """Concatenate layer arrays into one ParamVector, in manifest order."""
        if len(layers) != len(self.shapes):
            raise ManifestMismatch(
                f"expected {len(self.shapes)} layers, got {len(layers)}"
            )
        parts = []
        for arr, shape in zip(layers, self.shapes):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ManifestMismatch(
                    f"layer shape {arr.shape} does not match manifest shape {shape}"
                )
            parts.append(arr.reshape(-1))
        return ParamVector(np.concatenate(parts))

    def unflatten(self, vec: ParamVector) -> list[np.ndarray]:
        """Split a ParamVector back into layer arrays. Exact inverse of flatten."""
        if vec.dim != self.dim:
            raise ManifestMismatch(
                f"vector of dim {vec.dim} does not match manifest dim {self.dim}"
            )
        out = []
        offset = 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(vec.values[offset : offset + size].reshape(shape).copy())
            offset += size
        return out


def cosine_distance(a: ParamVector, b: ParamVector) -> float:
    """Cosine distance 1 - (a.b)/(|a||b|), in [0, 2].

    Raises ZeroNormVector for a zero-magnitude input: a zero decoder signals
    a degenerate or untrained model and must not be hidden by a default value.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims differ: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormVector("cosine distance undefined for zero-norm vector")
    cos = float(np.dot(a.values, b.values)) / (na * nb)
    # clamp rounding excursions so the result stays in [0, 2] exactly
    cos = min(1.0, max(-1.0, cos))
    return 1.0 - cos


def weighted_average(
    decoders: Sequence[ParamVector], w: AggregationWeights
) -> ParamVector:
    """Elementwise weighted average sum_i w_i * g_i of same-dim decoders."""
    if len(decoders) == 0:
        raise EmptyInput("no decoders to average")
    if len(decoders) != len(w):
        raise DimensionMismatch(
            f"{len(decoders)} decoders but {len(w)} weights"
        )
    dim = decoders[0].dim
    for i, d in enumerate(decoders):
        if d.dim != dim:
            raise DimensionMismatch(f"decoder {i} has dim {d.dim}, expected {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    for weight, dec in zip(w.weights, decoders):
        acc += weight * dec.values
    return ParamVector(acc)
