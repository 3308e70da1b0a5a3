"""Seeded base measures and the Monte-Carlo reduction contract.

Every Monte-Carlo average in the package goes through :func:`block_sums`:
the sample index range is cut into (at most) ten contiguous jackknife
blocks, each block into fixed-size chunks, and each chunk is reduced by
balanced pairwise summation.  The layout depends only on ``N``, so the
result does not depend on how many worker threads evaluate the chunks.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

RNG_ALGORITHM = "numpy.Philox4x32-10/SeedSequence-spawn-per-16384"
GEN_CHUNK = 16384
REDUCE_CHUNK = 4096
JACKKNIFE_BLOCKS = 10

_threads = 1

KINDS = ("standard-normal", "uniform-box", "user-tabulated-quantile")


class EvaluationError(ValueError):
    """A per-sample evaluation produced NaN or infinity."""

    def __init__(self, index: int, message: str = "non-finite evaluation"):
        super().__init__(f"{message} at sample index {index}")
        self.index = index


def set_threads(k: Optional[int]) -> None:
    """Cap the number of worker threads used for chunk evaluation."""
    global _threads
    if k is None:
        k = os.cpu_count() or 1
    if k < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(k)


def get_threads() -> int:
    return _threads


@dataclass(frozen=True)
class BaseMeasure:
    """Law of the latent variable z on Z."""

    kind: str = "standard-normal"
    dim: int = 1
    low: Optional[tuple] = None
    high: Optional[tuple] = None
    quantile_u: Optional[tuple] = None
    quantile_q: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown base measure kind {self.kind!r}; expected one of {KINDS}")
        if int(self.dim) < 1:
            raise ValueError("base measure dimension must be a positive integer")
        if self.kind == "uniform-box":
            if self.low is None or self.high is None:
                raise ValueError("uniform-box needs low and high bounds")
            lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ValueError("uniform-box bounds must have length dim")
            if not np.all(hi > lo):
                raise ValueError("uniform-box requires high > low in every coordinate")
        if self.kind == "user-tabulated-quantile":
            if self.dim != 1:
                raise ValueError("tabulated quantile measures are one-dimensional only")
            u = np.asarray(self.quantile_u, float)
            q = np.asarray(self.quantile_q, float)
            if u.ndim != 1 or u.shape != q.shape or u.size < 2:
                raise ValueError("tabulated quantile needs matching u and Q grids of length >= 2")
            if np.any(u <= 0) or np.any(u >= 1) or np.any(np.diff(u) <= 0):
                raise ValueError("quantile u grid must be strictly increasing inside (0, 1)")
            if np.any(np.diff(q) < 0):
                raise ValueError("tabulated quantile is not monotone (Q must be nondecreasing)")

    @classmethod
    def standard_normal(cls, dim: int = 1) -> "BaseMeasure":
        return cls("standard-normal", dim)

    @classmethod
    def uniform_box(cls, low: Sequence[float], high: Sequence[float]) -> "BaseMeasure":
        low, high = tuple(float(v) for v in low), tuple(float(v) for v in high)
        return cls("uniform-box", len(low), low, high)

    @classmethod
    def tabulated_quantile(cls, u: Sequence[float], q: Sequence[float]) -> "BaseMeasure":
        return cls("user-tabulated-quantile", 1, quantile_u=tuple(map(float, u)),
                   quantile_q=tuple(map(float, q)))

    @property
    def is_standard_normal(self) -> bool:
        return self.kind == "standard-normal"

    def _draw_chunk(self, gen: np.random.Generator, m: int) -> np.ndarray:
        if self.kind == "standard-normal":
            return gen.standard_normal((m, self.dim))
        if self.kind == "uniform-box":
            lo, hi = np.asarray(self.low), np.asarray(self.high)
            return lo + (hi - lo) * gen.random((m, self.dim))
        u = gen.random(m)
        return np.interp(u, self.quantile_u, self.quantile_q)[:, None]


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Immutable batch of N latent samples with its seed provenance."""

    measure: BaseMeasure
    seed: int
    count: int
    points: np.ndarray = field(repr=False)
    rng: str = RNG_ALGORITHM

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.count


def draw(measure: BaseMeasure, seed: int, N: int) -> SampleBatch:
    """Draw ``N`` i.i.d. samples from ``measure``.

    Chunk ``c`` of ``GEN_CHUNK`` samples is generated by its own Philox
    stream keyed by ``SeedSequence(seed, spawn_key=(c,))``, so chunks can
    be produced in any order and the batch is a pure function of
    ``(measure, seed, N)``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"sample count must be a positive integer, got {N!r}")
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise ValueError("seed must be an integer in [0, 2**64)")
    N, seed = int(N), int(seed)
    starts = list(range(0, N, GEN_CHUNK))

    def gen_chunk(c):
        ss = np.random.SeedSequence(seed, spawn_key=(c,))
        gen = np.random.Generator(np.random.Philox(ss))
        return measure._draw_chunk(gen, min(GEN_CHUNK, N - starts[c]))

    chunks = _map(gen_chunk, range(len(starts)))
    points = np.ascontiguousarray(np.concatenate(chunks, axis=0), dtype=float)
    if not np.all(np.isfinite(points)):
        raise EvaluationError(int(np.argmin(np.isfinite(points).all(axis=1))), "non-finite sample")
    points.setflags(write=False)
    return SampleBatch(measure, seed, N, points)


def pairwise_sum(values) -> np.ndarray:
    """Balanced pairwise sum along axis 0; the tree depends only on the length."""
    a = np.asarray(values, dtype=float)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    while a.shape[0] > 1:
        if a.shape[0] % 2:
            a = np.concatenate([a[:-1:2] + a[1::2], a[-1:]])
        else:
            a = a[0::2] + a[1::2]
    return a[0]


def block_bounds(N: int) -> np.ndarray:
    """Boundaries of the contiguous jackknife blocks (``np.array_split`` layout)."""
    B = min(JACKKNIFE_BLOCKS, N)
    sizes = np.full(B, N // B)
    sizes[: N % B] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def block_sums(N: int, evaluate: Callable[[int, int], np.ndarray],
               threads: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-block sums of per-sample terms.

    ``evaluate(lo, hi)`` returns the terms for samples ``lo..hi-1`` stacked
    on axis 0.  Returns ``(sums, counts)`` with ``sums`` of shape
    ``(B, *term_shape)``.
    """
    bounds = block_bounds(N)
    tasks = []
    for b in range(len(bounds) - 1):
        for lo in range(bounds[b], bounds[b + 1], REDUCE_CHUNK):
            tasks.append((b, lo, min(lo + REDUCE_CHUNK, bounds[b + 1])))

    def run(task):
        _, lo, hi = task
        terms = np.asarray(evaluate(lo, hi), dtype=float)
        if terms.shape[0] != hi - lo:
            raise ValueError("evaluation returned the wrong number of rows")
        ok = np.isfinite(terms.reshape(hi - lo, -1)).all(axis=1)
        if not ok.all():
            raise EvaluationError(lo + int(np.argmin(ok)))
        return pairwise_sum(terms)

    chunk_sums = _map(run, tasks, threads)
    sums = []
    for b in range(len(bounds) - 1):
        sums.append(pairwise_sum([s for (blk, _, _), s in zip(tasks, chunk_sums) if blk == b]))
    return np.stack(sums), np.diff(bounds)


def total_mean(sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
    return pairwise_sum(sums) / counts.sum()


def jackknife_se(sums: np.ndarray, counts: np.ndarray,
                 estimator: Callable[[np.ndarray], np.ndarray] = lambda m: m) -> np.ndarray:
    """Delete-one-block jackknife standard error of ``estimator(mean)``."""
    B = len(counts)
    full = pairwise_sum(sums)
    if B < 2:
        return np.full(np.shape(estimator(full / counts.sum())), np.nan)
    loo = np.stack([np.asarray(estimator((full - sums[b]) / (counts.sum() - counts[b])))
                    for b in range(B)])
    dev = loo - loo.mean(axis=0)
    return np.sqrt((B - 1) / B * np.sum(dev ** 2, axis=0))


def expect(batch: SampleBatch, f: Callable[[np.ndarray], np.ndarray],
           threads: Optional[int] = None, with_stderr: bool = False):
    """Monte-Carlo mean of ``f`` over the batch.

    ``f`` is vectorized: it maps an ``(m, n1)`` slice of latent points to
    ``m`` values (or ``m`` stacked arrays).  A non-finite value raises
    :class:`EvaluationError` carrying the global sample index.
    """
    pts = batch.points
    sums, counts = block_sums(batch.count, lambda lo, hi: f(pts[lo:hi]), threads)
    mean = total_mean(sums, counts)
    mean = float(mean) if mean.ndim == 0 else mean
    if with_stderr:
        se = jackknife_se(sums, counts)
        return mean, (float(se) if np.ndim(se) == 0 else se)
    return mean


def _map(fn, items, threads: Optional[int] = None) -> list:
    items = list(items)
    k = _threads if threads is None else threads
    if k <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, items))
