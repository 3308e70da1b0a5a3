"""Potential and interaction energies on pushforward families, and the
energy-augmented action.

Both energies are expectations under the latent measure:
``V(rho) = E V(g(theta, z))`` and
``W(rho) = E_{z1, z2 iid} w(g(theta, z1), g(theta, z2))``.
The augmented action integrates ``kinetic + sign * (V + W)`` along a path;
``sign = -1`` (energies subtracted) is the default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geodesic import (ActionReport, KineticModel, NonConvergence, OptimizerOptions, ParamPath,
                       _check_path, action, minimize_path)
from .potential_space import PotentialBasis
from .pushforward import MapFamily
from .sampler import SampleBatch, block_bounds, block_sums, jackknife_se, pairwise_sum

ALL_PAIRS_MAX_N = 10_000
_ROW_BLOCK = 256


class DivergenceError(NonConvergence):
    """The augmented action fell below the configured floor."""


# --- linear potentials V(x) ------------------------------------------------

@dataclass(frozen=True)
class ConstantPotential:
    value: float = 0.0

    def __call__(self, x):
        return np.full(x.shape[:-1], float(self.value))

    def grad(self, x):
        return np.zeros_like(x)


@dataclass(frozen=True)
class QuadraticPotential:
    """``scale * |x - center|^2``."""

    center: tuple = (0.0,)
    scale: float = 1.0

    def __call__(self, x):
        return self.scale * np.sum((x - np.asarray(self.center)) ** 2, axis=-1)

    def grad(self, x):
        return 2 * self.scale * (x - np.asarray(self.center))


@dataclass(frozen=True)
class PolynomialPotential:
    """Sum of ``coef * prod_i x_i**e_i`` over ``terms = ((coef, (e_1..e_n)), ...)``."""

    terms: tuple

    @classmethod
    def from_coefficients(cls, coefficients) -> "PolynomialPotential":
        """1D polynomial ``sum_k c_k x^k``."""
        return cls(tuple((float(c), (k,)) for k, c in enumerate(coefficients)))

    def __call__(self, x):
        out = np.zeros(x.shape[:-1])
        for coef, exps in self.terms:
            out = out + coef * np.prod(x ** np.asarray(exps), axis=-1)
        return out

    def grad(self, x):
        out = np.zeros_like(x)
        for coef, exps in self.terms:
            exps = np.asarray(exps)
            for i, e in enumerate(exps):
                if e:
                    lower = exps.copy()
                    lower[i] -= 1
                    out[..., i] += coef * e * np.prod(x ** lower, axis=-1)
        return out


@dataclass(frozen=True)
class ShiftedPotential:
    base: object
    shift: float

    def __call__(self, x):
        return self.base(x) + self.shift

    def grad(self, x):
        return self.base.grad(x)


# --- symmetric interactions w(x, y) ----------------------------------------

@dataclass(frozen=True)
class ConstantInteraction:
    value: float = 0.0

    def __call__(self, x, y):
        return np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], float(self.value))

    def grad_x(self, x, y):
        return np.zeros(np.broadcast_shapes(x.shape, y.shape))


@dataclass(frozen=True)
class QuadraticInteraction:
    """``scale * |x - y|^2``."""

    scale: float = 1.0

    def __call__(self, x, y):
        return self.scale * np.sum((x - y) ** 2, axis=-1)

    def grad_x(self, x, y):
        return 2 * self.scale * (x - y)


@dataclass(frozen=True)
class GaussianKernel:
    """``scale * exp(-|x - y|^2 / (2 bandwidth^2))``."""

    bandwidth: float = 1.0
    scale: float = 1.0

    def __call__(self, x, y):
        return self.scale * np.exp(-0.5 * np.sum((x - y) ** 2, axis=-1) / self.bandwidth ** 2)

    def grad_x(self, x, y):
        return -(x - y) / self.bandwidth ** 2 * self(x, y)[..., None]


def check_symmetric(w, n: int, probes: int = 64, seed: int = 0) -> bool:
    rng = np.random.Generator(np.random.Philox(seed))
    x, y = rng.standard_normal((probes, n)), rng.standard_normal((probes, n))
    return bool(np.array_equal(w(x, y), w(y, x)))


def _is_zero(obj) -> bool:
    return obj is None or (isinstance(obj, (ConstantPotential, ConstantInteraction)) and obj.value == 0)


# --- estimators --------------------------------------------------------------

def linear_energy(fam: MapFamily, theta, batch: SampleBatch, V, with_stderr: bool = False,
                  threads=None):
    """Monte-Carlo estimate of ``E V(g(theta, z))``."""
    theta = fam.check(theta)
    pts = batch.points
    sums, counts = block_sums(batch.count, lambda lo, hi: V(fam._forward(theta, pts[lo:hi])), threads)
    value = float(pairwise_sum(sums) / counts.sum())
    if with_stderr:
        return value, float(jackknife_se(sums, counts))
    return value


def linear_energy_grad(fam: MapFamily, theta, batch: SampleBatch, V, threads=None) -> np.ndarray:
    """``E[grad_theta g  grad V(g)]`` (chain rule, no differencing)."""
    theta = fam.check(theta)
    pts = batch.points

    def terms(lo, hi):
        z = pts[lo:hi]
        return np.einsum("mkn,mn->mk", fam._jacobian(theta, z), V.grad(fam._forward(theta, z)))

    sums, counts = block_sums(batch.count, terms, threads)
    return pairwise_sum(sums) / counts.sum()


def _default_pairing(N):
    return "all-pairs" if N <= ALL_PAIRS_MAX_N else "split-batch"


def _all_pairs_rows(x, lo, hi, fn):
    """Per-row, per-column-block sums of ``fn(x_i, x_j)`` over j != i, shape (m, B, ...)."""
    bounds = block_bounds(len(x))
    rows = []
    for r0 in range(lo, hi, _ROW_BLOCK):
        r1 = min(r0 + _ROW_BLOCK, hi)
        W = fn(x[r0:r1, None, :], x[None, :, :])
        idx = np.arange(r0, r1)
        W[idx - r0, idx] = 0.0
        per_block = [pairwise_sum(np.moveaxis(W[:, a:b], 1, 0)) for a, b in zip(bounds[:-1], bounds[1:])]
        rows.append(np.stack(per_block, axis=1))
    return np.concatenate(rows, axis=0)


def interaction_energy(fam: MapFamily, theta, batch: SampleBatch, w, pairing: Optional[str] = None,
                       with_stderr: bool = False, threads=None):
    """Estimate ``E w(g(z1), g(z2))`` for independent ``z1, z2``.

    ``all-pairs`` averages over ordered pairs ``i != j`` (a U-statistic,
    O(N^2)); ``split-batch`` pairs sample ``i`` of the first half with
    sample ``i`` of the second half (O(N)).  The default is all-pairs up to
    N = 10^4.
    """
    theta = fam.check(theta)
    N = batch.count
    pairing = pairing or _default_pairing(N)
    x = fam._forward(theta, batch.points)
    if pairing == "all-pairs":
        if N < 2:
            raise ValueError("all-pairs interaction needs at least two samples")
        S, counts = block_sums(N, lambda lo, hi: _all_pairs_rows(x, lo, hi, w), threads)
        total = pairwise_sum(pairwise_sum(S))
        value = float(total / (N * (N - 1)))
        if not with_stderr:
            return value
        B = len(counts)
        loo = np.array([(total - S[b].sum() - S[:, b].sum() + S[b, b]) /
                        ((N - counts[b]) * (N - counts[b] - 1)) for b in range(B)])
        se = math.sqrt((B - 1) / B * np.sum((loo - loo.mean()) ** 2))
        return value, se
    if pairing == "split-batch":
        h = N // 2
        if h < 1:
            raise ValueError("split-batch interaction needs at least two samples")
        sums, counts = block_sums(h, lambda lo, hi: w(x[lo:hi], x[h + lo:h + hi]), threads)
        value = float(pairwise_sum(sums) / counts.sum())
        if with_stderr:
            return value, float(jackknife_se(sums, counts))
        return value
    raise ValueError(f"unknown pairing {pairing!r}; expected 'all-pairs' or 'split-batch'")


def interaction_energy_grad(fam: MapFamily, theta, batch: SampleBatch, w,
                            pairing: Optional[str] = None, threads=None) -> np.ndarray:
    """Parameter gradient of :func:`interaction_energy` via the chain rule."""
    theta = fam.check(theta)
    N = batch.count
    pairing = pairing or _default_pairing(N)
    pts = batch.points
    x = fam._forward(theta, pts)
    if pairing == "all-pairs":
        def terms(lo, hi):
            rows = _all_pairs_rows(x, lo, hi, w.grad_x).sum(axis=1)
            return np.einsum("mkn,mn->mk", fam._jacobian(theta, pts[lo:hi]), rows)

        sums, _ = block_sums(N, terms, threads)
        return 2 * pairwise_sum(sums) / (N * (N - 1))
    h = N // 2

    def split_terms(lo, hi):
        xa, xb = x[lo:hi], x[h + lo:h + hi]
        Ja, Jb = fam._jacobian(theta, pts[lo:hi]), fam._jacobian(theta, pts[h + lo:h + hi])
        return (np.einsum("mkn,mn->mk", Ja, w.grad_x(xa, xb))
                + np.einsum("mkn,mn->mk", Jb, w.grad_x(xb, xa)))

    if pairing != "split-batch":
        raise ValueError(f"unknown pairing {pairing!r}")
    sums, counts = block_sums(h, split_terms, threads)
    return pairwise_sum(sums) / counts.sum()


# --- augmented action ----------------------------------------------------------

class ExtendedModel:
    """Kinetic segments plus ``sign * dt * (V + W)`` evaluated at segment midpoints."""

    def __init__(self, kinetic: KineticModel, V=None, w=None, sign: float = -1.0,
                 pairing: Optional[str] = None):
        self.kinetic, self.V, self.w, self.sign, self.pairing = kinetic, V, w, float(sign), pairing

    def energy(self, theta) -> float:
        fam, batch = self.kinetic.fam, self.kinetic.batch
        e = 0.0
        if not _is_zero(self.V):
            e += linear_energy(fam, theta, batch, self.V)
        if not _is_zero(self.w):
            e += interaction_energy(fam, theta, batch, self.w, self.pairing)
        return e

    def energy_grad(self, theta) -> np.ndarray:
        fam, batch = self.kinetic.fam, self.kinetic.batch
        g = np.zeros(fam.d)
        if not _is_zero(self.V):
            g = g + linear_energy_grad(fam, theta, batch, self.V)
        if not _is_zero(self.w):
            g = g + interaction_energy_grad(fam, theta, batch, self.w, self.pairing)
        return g

    def segments(self, path: ParamPath) -> np.ndarray:
        kin = self.kinetic.segments(path)
        dt = 1.0 / path.K
        pot = np.array([self.sign * dt * self.energy(mid) for mid in path.midpoints])
        return kin + pot

    def gradient(self, path: ParamPath) -> np.ndarray:
        grad = self.kinetic.gradient(path)
        dt = 1.0 / path.K
        for k, mid in enumerate(path.midpoints):
            ge = 0.5 * self.sign * dt * self.energy_grad(mid)
            grad[k] += ge
            grad[k + 1] += ge
        return grad


def extended_action(fam: MapFamily, path: ParamPath, batch: SampleBatch,
                    basis: Optional[PotentialBasis], V=None, w=None, sign: float = -1.0,
                    metric_kind: str = "wasserstein", pairing: Optional[str] = None,
                    ridge=None, threads=None) -> float:
    """Midpoint rule for ``int_0^1 [q(theta, thetadot) + sign * (V + W)] dt``."""
    _check_path(fam, path)
    kin = action(fam, path, batch, basis, metric_kind, ridge, threads=threads).segment_energies
    if _is_zero(V) and _is_zero(w):
        return float(pairwise_sum(kin))
    model = ExtendedModel(KineticModel(fam, batch, basis, metric_kind, ridge, threads=threads),
                          V, w, sign, pairing)
    dt = 1.0 / path.K
    pot = np.array([sign * dt * model.energy(mid) for mid in path.midpoints])
    return float(pairwise_sum(kin + pot))


def extended_geodesic_solve(fam: MapFamily, theta0, theta1, K: int, batch: SampleBatch,
                            basis: Optional[PotentialBasis], V=None, w=None, sign: float = -1.0,
                            opts: Optional[OptimizerOptions] = None, metric_kind: str = "wasserstein",
                            pairing: Optional[str] = None, floor: float = -1e6, ridge=None,
                            threads=None) -> tuple[ParamPath, ActionReport]:
    """Stationary path of the augmented action from the straight-line start.

    Raises :class:`DivergenceError` when the action drops below ``floor``
    (the functional can be unbounded below).  The report's ``action`` is
    the augmented value; ``distance`` is left empty.
    """
    opts = opts or OptimizerOptions()
    if K < 2:
        raise ValueError("extended_geodesic_solve needs K >= 2")
    theta0, theta1 = fam.check(theta0), fam.check(theta1)
    init = ParamPath.linear(theta0, theta1, K)
    init = ParamPath(np.vstack([theta0, [fam.project(k) for k in init.knots[1:-1]], theta1]))
    kinetic = KineticModel(fam, batch, basis, metric_kind, ridge, opts.fd_step, threads)
    model = ExtendedModel(kinetic, V, w, sign, pairing)
    path, trace, status = minimize_path(lambda p: pairwise_sum(model.segments(p)), model.gradient,
                                        init, fam, opts, floor=floor)
    kin = action(fam, path, batch, basis, metric_kind, ridge, threads=threads)
    seg = model.segments(path)
    report = ActionReport(float(pairwise_sum(seg)), seg, kin.projection_residuals, None, None,
                          metric_kind, trace, status == "converged", status)
    if status == "diverged":
        raise DivergenceError(f"augmented action fell below floor {floor:g} "
                              f"(value {trace[-1][1]:.6g} at iteration {trace[-1][0]})", path, report)
    return path, report
