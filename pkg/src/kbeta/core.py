"""Shared numeric plumbing: parameter trees, pooled norms, seeded RNG, finite differences.

Parameter trees are plain ``dict[str, np.ndarray]``. All tree-walking code must go
through :func:`tree_items` so iteration order is lexicographic by path regardless of
insertion order. Array dtype doubles as the precision mode (float64 default, float32
for the low-precision equivalence checks); scalar bookkeeping stays in python floats
so float32 arrays are never silently promoted.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Iterator

import numpy as np

ParamTree = dict[str, np.ndarray]

# Generator algorithm is part of the reproducibility contract: Philox is counter-based
# and bit-stable across platforms for a fixed key and call sequence.
RNG_ALGORITHM = "philox4x64"


def tree_items(tree: ParamTree) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (path, tensor) pairs sorted lexicographically by path."""
    for path in sorted(tree):
        yield path, tree[path]


def tree_map(fn: Callable[[np.ndarray], np.ndarray], tree: ParamTree) -> ParamTree:
    return {path: fn(t) for path, t in tree_items(tree)}


def tree_copy(tree: ParamTree) -> ParamTree:
    return {path: t.copy() for path, t in tree_items(tree)}


def validate_same_structure(a: ParamTree, b: ParamTree) -> None:
    """Error unless both trees have identical paths and per-path shapes."""
    if sorted(a) != sorted(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise ValueError(f"tree paths differ: only-left={only_a} only-right={only_b}")
    for path, t in tree_items(a):
        if t.shape != b[path].shape:
            raise ValueError(
                f"shape mismatch at '{path}': {t.shape} vs {b[path].shape}"
            )


def pooled_l2_norm(tensors: Iterable[np.ndarray]) -> float:
    """L2 norm of the concatenation of all entries.

    Accumulates the sum of squares in float64 regardless of input dtype; the result
    feeds scalar EMA bookkeeping, not the parameter update itself. Raises on any
    non-finite entry.
    """
    acc = 0.0
    for t in tensors:
        flat = np.asarray(t, dtype=np.float64).ravel()
        if not np.isfinite(flat).all():
            raise FloatingPointError("non-finite value in pooled norm input")
        acc += float(np.dot(flat, flat))
    return math.sqrt(acc)


class Rng:
    """Seeded random stream with a fixed, documented algorithm (Philox4x64).

    ``Rng(seed)`` opens the stream keyed ``(seed, 0)``; :meth:`for_stream` opens a
    decorrelated stream keyed ``(base_seed, stream)``. Identical (algorithm, key, call
    sequence) gives identical output on every platform. Stream 0 is reserved by the
    harness for parameter init; stream ``s >= 1`` generates the batch for step ``s``.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
        )

    @classmethod
    def for_stream(cls, base_seed: int, stream: int) -> "Rng":
        return cls(base_seed, stream)

    def uniform_int(self, lo: int, hi: int, n: int | tuple[int, ...]) -> np.ndarray:
        """Integers uniform over the closed range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        return self._gen.integers(lo, hi + 1, size=n, dtype=np.int64)

    def normal(self, n: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.standard_normal(size=n)

    def uniform(self, n: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.random(size=n)


def finite_diff_grad(
    loss_fn: Callable[[ParamTree], float],
    params: ParamTree,
    h: float = 1e-5,
) -> ParamTree:
    """Central-difference gradient of ``loss_fn`` at ``params``, coordinate by coordinate.

    Oracle-grade and O(2 * n_coords) loss evaluations; float64 trees only, since the
    h^2 truncation error is meaningless at float32 resolution.
    """
    grads: ParamTree = {}
    for path, t in tree_items(params):
        if t.dtype != np.float64:
            raise TypeError(f"finite differences require float64 trees, got {t.dtype} at '{path}'")
        g = np.zeros_like(t)
        flat = t.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params)
            flat[i] = orig - h
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[path] = g
    return grads
