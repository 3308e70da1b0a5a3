"""Map metric and Wasserstein pullback metric on parameter space.

The map metric is ``E[J J^T]`` with ``J = grad_theta g``.  The Wasserstein
metric replaces each map velocity ``v_k = J^T e_k`` by its L2(rho)
projection ``grad Phi_k`` onto the span of basis gradients, which is the
Galerkin form of ``-div(rho grad Phi) = <grad_theta rho, thetadot>``:

    E[grad psi_j . grad Phi] = E[grad psi_j . v]   for every j.

All sample averages are accumulated per jackknife block as sufficient
statistics (normal matrix, right-hand sides, map Gram matrix), so one pass
over the batch yields the estimate and its block-jackknife error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .potential_space import LatticeRBF, PotentialBasis, PotentialCoefficients, grad_phi
from .pushforward import MapFamily
from .sampler import SampleBatch, block_sums, expect, jackknife_se, pairwise_sum

RANK_RTOL = 1e-12
DEFAULT_RIDGE_SCALE = 1e-10
REFINE_STEPS = 3


class RankDeficientBasis(np.linalg.LinAlgError):
    def __init__(self, directions: list[str]):
        self.directions = directions
        super().__init__("normal matrix is rank deficient along basis directions: "
                         + "; ".join(directions) + " (enable ridge regularization or change the basis)")


@dataclass(frozen=True, eq=False)
class MetricTensor:
    M: np.ndarray
    kind: str
    n_samples: int
    basis: Optional[PotentialBasis] = None
    stderr: Optional[np.ndarray] = field(default=None, repr=False)

    def quadratic(self, thetadot) -> float:
        thetadot = np.atleast_1d(np.asarray(thetadot, float))
        return float(thetadot @ self.M @ thetadot)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.M)[0])


def _bind(fam, theta, batch, basis):
    if isinstance(basis, LatticeRBF):
        return basis.bind(fam._forward(theta, batch.points))
    return basis


class GalerkinStats:
    """Per-block sums of the per-sample Gram matrix of ``F = [grad psi | J^T]``.

    ``F_i`` is ``(n, J + d)``; its Gram matrix ``F_i^T F_i`` holds the normal
    matrix block (J, J), the right-hand sides (J, d) and the map metric
    term (d, d).
    """

    def __init__(self, fam: MapFamily, theta, batch: SampleBatch,
                 basis: Optional[PotentialBasis], threads=None):
        self.theta = theta = fam.check(theta)
        self.fam, self.batch = fam, batch
        self.basis = None if basis is None else _bind(fam, theta, batch, basis)
        self.d = fam.d
        J = self.J = 0 if basis is None else self.basis.size
        pts = batch.points

        def evaluate(lo, hi):
            z = pts[lo:hi]
            F = fam._jacobian(theta, z).transpose(0, 2, 1)
            if J:
                F = np.concatenate([self.basis.gradients(fam._forward(theta, z)), F], axis=2)
            return np.matmul(F.transpose(0, 2, 1), F).reshape(hi - lo, -1)

        self.sums, self.counts = block_sums(batch.count, evaluate, threads)

    def unpack(self, flat):
        J = self.J
        O = np.asarray(flat).reshape(J + self.d, J + self.d)
        return O[:J, :J], O[:J, J:], O[J:, J:]

    def mean(self) -> np.ndarray:
        return pairwise_sum(self.sums) / self.counts.sum()

    def jackknife(self, estimator) -> np.ndarray:
        return jackknife_se(self.sums, self.counts, estimator)

    def leave_one_out(self):
        full = pairwise_sum(self.sums)
        N = self.counts.sum()
        return [(full - self.sums[b]) / (N - self.counts[b]) for b in range(len(self.counts))]


def _factor(gram, ridge, labels):
    J = gram.shape[0]
    if ridge is None:
        w, V = np.linalg.eigh(gram)
        tol = RANK_RTOL * max(w[-1], np.finfo(float).tiny)
        if w[0] <= tol:
            dirs = []
            for k in np.nonzero(w <= tol)[0]:
                vec = V[:, k]
                top = np.argsort(-np.abs(vec))[:3]
                dirs.append(" + ".join(f"{vec[j]:+.3g}*{labels[j]}" for j in top if abs(vec[j]) > 1e-8))
            raise RankDeficientBasis(dirs)
        lam = DEFAULT_RIDGE_SCALE * np.trace(gram) / J
    else:
        lam = float(ridge)
    return scipy.linalg.cho_factor(gram + lam * np.eye(J), lower=True)


def _coefficients(stats: GalerkinStats, flat, ridge):
    """Normal-equation solve for all d right-hand sides.

    With the default ridge the shifted factor only preconditions: a few
    steps of iterative refinement remove the ridge bias, so the
    least-squares residual stays orthogonal to the basis span.  An explicit
    ridge is a genuine Tikhonov penalty and is left in place.
    """
    gram, cross, _ = stats.unpack(flat)
    fac = _factor(gram, ridge, stats.basis.labels())
    C = scipy.linalg.cho_solve(fac, cross)
    if ridge is None:
        for _ in range(REFINE_STEPS):
            C = C + scipy.linalg.cho_solve(fac, cross - gram @ C)
    return C, gram


def _wasserstein_matrix(stats, flat, ridge):
    C, gram = _coefficients(stats, flat, ridge)
    M = C.T @ gram @ C
    return 0.5 * (M + M.T)


def metric_map(fam: MapFamily, theta, batch: SampleBatch, threads=None,
               with_stderr: bool = True) -> MetricTensor:
    """``E[grad_theta g grad_theta g^T]`` over the batch."""
    stats = GalerkinStats(fam, theta, batch, None, threads)
    M = stats.unpack(stats.mean())[2]
    M = 0.5 * (M + M.T)
    se = stats.jackknife(lambda f: stats.unpack(f)[2]) if with_stderr else None
    return MetricTensor(M, "map", batch.count, None, se)


def metric_wasserstein(fam: MapFamily, theta, batch: SampleBatch, basis: PotentialBasis,
                       ridge: Optional[float] = None, threads=None,
                       with_stderr: bool = True) -> MetricTensor:
    """Gram matrix of the projected potentials ``grad Phi_k`` for ``thetadot = e_k``.

    All ``d`` right-hand sides share one Cholesky factorization.
    """
    stats = GalerkinStats(fam, theta, batch, basis, threads)
    M = _wasserstein_matrix(stats, stats.mean(), ridge)
    se = stats.jackknife(lambda f: _wasserstein_matrix(stats, f, ridge)) if with_stderr else None
    return MetricTensor(M, "wasserstein", batch.count, stats.basis, se)


def metric_pair(fam, theta, batch, basis, ridge=None, threads=None):
    """(G_map, G_W) from a single pass over the batch."""
    stats = GalerkinStats(fam, theta, batch, basis, threads)
    flat = stats.mean()
    gmap = stats.unpack(flat)[2]
    G_map = MetricTensor(0.5 * (gmap + gmap.T), "map", batch.count, None,
                         stats.jackknife(lambda f: stats.unpack(f)[2]))
    G_W = MetricTensor(_wasserstein_matrix(stats, flat, ridge), "wasserstein", batch.count,
                       stats.basis, stats.jackknife(lambda f: _wasserstein_matrix(stats, f, ridge)))
    return G_map, G_W


def solve_potential(fam: MapFamily, theta, thetadot, batch: SampleBatch,
                    basis: PotentialBasis, ridge: Optional[float] = None,
                    threads=None) -> PotentialCoefficients:
    """Least-squares potential whose gradient best matches the map velocity.

    Minimizes ``mean_i |grad Phi_c(x_i) - J_i^T thetadot|^2`` over ``c``,
    with ``x_i = g(theta, z_i)``.
    """
    thetadot = np.atleast_1d(np.asarray(thetadot, float))
    if thetadot.shape != (fam.d,):
        raise ValueError(f"thetadot must have length {fam.d}")
    stats = GalerkinStats(fam, theta, batch, basis, threads)
    C, _ = _coefficients(stats, stats.mean(), ridge)
    return PotentialCoefficients(C @ thetadot, stats.basis)


def projection_residual(fam: MapFamily, theta, thetadot, batch: SampleBatch,
                        basis: PotentialBasis, ridge: Optional[float] = None,
                        threads=None) -> float:
    """``mean_i |v_map(z_i) - grad Phi(x_i)|^2``, evaluated sample by sample."""
    coef = solve_potential(fam, theta, thetadot, batch, basis, ridge, threads)
    theta = fam.check(theta)
    thetadot = np.atleast_1d(np.asarray(thetadot, float))

    def resid(z):
        x = fam._forward(theta, z)
        r = np.einsum("mkn,k->mn", fam._jacobian(theta, z), thetadot) - grad_phi(coef.basis, coef.c, x)
        return np.sum(r * r, axis=1)

    return expect(batch, resid, threads)


def weak_continuity_check(fam: MapFamily, theta, thetadot, batch: SampleBatch,
                          basis: PotentialBasis, f: Callable, grad_f: Callable,
                          h: float = 1e-4, ridge=None) -> tuple[float, float]:
    """Compare ``d/dt E f(g(theta + t thetadot, z))`` at 0 with ``E[grad f . grad Phi]``.

    The left side is a centered difference of step ``h``; ``f`` maps
    ``(m, n)`` points to ``m`` values and ``grad_f`` to ``(m, n)``.
    """
    theta = fam.check(theta)
    thetadot = np.atleast_1d(np.asarray(thetadot, float))
    plus = expect(batch, lambda z: f(fam.forward(theta + h * thetadot, z)))
    minus = expect(batch, lambda z: f(fam.forward(theta - h * thetadot, z)))
    coef = solve_potential(fam, theta, thetadot, batch, basis, ridge)
    rhs = expect(batch, lambda z: np.sum(
        grad_f(fam._forward(theta, z)) * grad_phi(coef.basis, coef.c, fam._forward(theta, z)), axis=1))
    return (plus - minus) / (2 * h), rhs
