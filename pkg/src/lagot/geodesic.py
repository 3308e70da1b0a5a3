"""Discrete action minimization over parameter paths.

A path is a sequence of knots ``theta_0 .. theta_K`` at uniform times
``t_k = k / K``.  Segment ``k`` contributes ``dt * q(mid_k, dtheta_k / dt)``
where ``mid_k`` is the segment midpoint and ``q`` the metric quadratic
form.  Interior knots are optimized by BFGS with Armijo backtracking; the
endpoints stay pinned.  One sample batch is shared by every evaluation so
the objective is a deterministic, smooth function of the knots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metric import GalerkinStats, _wasserstein_matrix
from .potential_space import PotentialBasis
from .pushforward import InadmissibleParameter, MapFamily
from .sampler import SampleBatch, pairwise_sum

METRIC_KINDS = ("wasserstein", "map")


class NonConvergence(RuntimeError):
    def __init__(self, message, path=None, report=None):
        super().__init__(message)
        self.path, self.report = path, report


@dataclass(frozen=True, eq=False)
class ParamPath:
    knots: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.knots, float))
        if k.shape[0] < 2:
            raise ValueError("a path needs at least two knots (K >= 1)")
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @classmethod
    def linear(cls, theta0, theta1, K: int) -> "ParamPath":
        theta0, theta1 = np.atleast_1d(theta0).astype(float), np.atleast_1d(theta1).astype(float)
        t = np.arange(K + 1)[:, None] / K
        knots = (1 - t) * theta0 + t * theta1
        knots[0], knots[-1] = theta0, theta1
        return cls(knots)

    @property
    def K(self) -> int:
        return self.knots.shape[0] - 1

    @property
    def d(self) -> int:
        return self.knots.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.knots[:-1] + self.knots[1:])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.knots, axis=0)

    def reversed(self) -> "ParamPath":
        return ParamPath(self.knots[::-1].copy())

    def with_interior(self, x) -> "ParamPath":
        knots = self.knots.copy()
        knots[1:-1] = np.reshape(x, (self.K - 1, self.d))
        return ParamPath(knots)


@dataclass
class OptimizerOptions:
    tol: float = 1e-6
    max_iters: int = 500
    gtol_abs: float = 1e-8
    fd_step: float = 1e-5
    armijo: float = 1e-4
    max_backtracks: int = 50


@dataclass
class ActionReport:
    action: float
    segment_energies: np.ndarray
    projection_residuals: np.ndarray
    distance: Optional[float] = None
    stderr: Optional[float] = None
    metric_kind: str = "wasserstein"
    trace: list = field(default_factory=list)
    converged: bool = True
    status: str = "evaluated"

    @property
    def distance_stderr(self) -> Optional[float]:
        if self.stderr is None or self.distance is None or self.distance == 0:
            return None
        return self.stderr / (2 * self.distance)


class KineticModel:
    """Metric quadratic form evaluated at segment midpoints, with its knot gradient."""

    def __init__(self, fam: MapFamily, batch: SampleBatch, basis: Optional[PotentialBasis],
                 metric_kind: str = "wasserstein", ridge=None, fd_step: float = 1e-5, threads=None):
        if metric_kind not in METRIC_KINDS:
            raise ValueError(f"metric kind must be one of {METRIC_KINDS}")
        if metric_kind == "wasserstein" and basis is None:
            raise ValueError("the wasserstein metric needs a potential basis")
        self.fam, self.batch, self.basis = fam, batch, basis
        self.kind, self.ridge, self.h, self.threads = metric_kind, ridge, fd_step, threads
        self._cache = {}

    def stats(self, theta) -> GalerkinStats:
        basis = self.basis if self.kind == "wasserstein" else None
        return GalerkinStats(self.fam, theta, self.batch, basis, self.threads)

    def matrix_from(self, stats: GalerkinStats, flat=None) -> np.ndarray:
        flat = stats.mean() if flat is None else flat
        if self.kind == "map":
            M = stats.unpack(flat)[2]
            return 0.5 * (M + M.T)
        return _wasserstein_matrix(stats, flat, self.ridge)

    def matrix(self, theta) -> np.ndarray:
        theta = np.asarray(theta, float)
        key = theta.tobytes()
        if key not in self._cache:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = self.matrix_from(self.stats(theta))
        return self._cache[key]

    def matrix_derivative(self, theta) -> np.ndarray:
        """``dG/dtheta_j`` by central differences (one-sided at the admissible boundary)."""
        theta = np.asarray(theta, float)
        d = theta.size
        out = np.empty((d, d, d))
        G0 = None
        for j in range(d):
            h = self.h * max(1.0, abs(theta[j]))
            e = np.zeros(d)
            e[j] = h
            up, dn = self.fam.is_admissible(theta + e), self.fam.is_admissible(theta - e)
            if up and dn:
                out[j] = (self.matrix(theta + e) - self.matrix(theta - e)) / (2 * h)
            else:
                G0 = self.matrix(theta) if G0 is None else G0
                if up:
                    out[j] = (self.matrix(theta + e) - G0) / h
                elif dn:
                    out[j] = (G0 - self.matrix(theta - e)) / h
                else:
                    raise InadmissibleParameter("no admissible finite-difference stencil")
        return out

    def segments(self, path: ParamPath) -> np.ndarray:
        K = path.K
        return np.array([K * dth @ self.matrix(mid) @ dth
                         for mid, dth in zip(path.midpoints, path.increments)])

    def gradient(self, path: ParamPath) -> np.ndarray:
        K, grad = path.K, np.zeros_like(path.knots)
        for k, (mid, dth) in enumerate(zip(path.midpoints, path.increments)):
            G = self.matrix(mid)
            dG = self.matrix_derivative(mid)
            via_mid = 0.5 * K * np.einsum("a,jab,b->j", dth, dG, dth)
            via_inc = 2 * K * G @ dth
            grad[k] += via_mid - via_inc
            grad[k + 1] += via_mid + via_inc
        return grad


def _check_path(fam: MapFamily, path: ParamPath):
    if path.d != fam.d:
        raise ValueError(f"path dimension {path.d} does not match family dimension {fam.d}")
    for knot in path.knots:
        fam.check(knot)


def action(fam: MapFamily, path: ParamPath, batch: SampleBatch, basis: Optional[PotentialBasis],
           metric_kind: str = "wasserstein", ridge=None, with_stderr: bool = False,
           threads=None) -> ActionReport:
    """Midpoint-rule kinetic action of ``path`` and per-segment diagnostics.

    ``projection_residuals[k]`` is ``dt`` times the L2(rho) energy of the
    part of the segment's map velocity that no basis gradient captures.
    ``stderr`` is the block-jackknife error of the action (path held fixed).
    """
    _check_path(fam, path)
    model = KineticModel(fam, batch, basis, metric_kind, ridge, threads=threads)
    K = path.K
    seg, res, loo = [], [], []
    for mid, dth in zip(path.midpoints, path.increments):
        st = model.stats(mid)
        G = model.matrix_from(st)
        seg.append(K * dth @ G @ dth)
        if basis is not None:
            wst = st if metric_kind == "wasserstein" else GalerkinStats(fam, mid, batch, basis, threads)
            G_map = wst.unpack(wst.mean())[2]
            G_W = _wasserstein_matrix(wst, wst.mean(), ridge)
            res.append(max(K * dth @ (G_map - G_W) @ dth, 0.0))
        else:
            res.append(0.0)
        if with_stderr:
            loo.append([K * dth @ model.matrix_from(st, f) @ dth for f in st.leave_one_out()])
    seg = np.array(seg)
    total = float(pairwise_sum(seg))
    se = None
    if with_stderr:
        per_block = np.array(loo).sum(axis=0)
        B = per_block.size
        se = float(math.sqrt((B - 1) / B * np.sum((per_block - per_block.mean()) ** 2))) if B > 1 else float("nan")
    return ActionReport(total, seg, np.array(res), math.sqrt(max(total, 0.0)), se, metric_kind)


def minimize_path(objective, gradient, path0: ParamPath, fam: MapFamily,
                  opts: OptimizerOptions, floor: Optional[float] = None):
    """BFGS over the interior knots of ``path0``.

    ``objective(path)`` returns the discrete action, ``gradient(path)`` its
    gradient with respect to every knot.  Trial paths with inadmissible
    knots count as +inf and are rejected by the line search.  Returns
    ``(best_path, trace, status)`` where status is ``converged``,
    ``unconverged`` or ``line-search-failure@<iter>``.
    """
    d = path0.d

    def f(x):
        p = path0.with_interior(x)
        if not all(fam.is_admissible(k) for k in p.knots[1:-1]):
            return math.inf
        return float(objective(p))

    def g(x):
        return gradient(path0.with_interior(x))[1:-1].ravel()

    x = path0.knots[1:-1].ravel().copy()
    trace = []
    if x.size == 0:
        return path0, [(0, f(x), 0.0)], "converged"
    fx, gx = f(x), g(x)
    if not math.isfinite(fx):
        raise InadmissibleParameter("initial path has inadmissible knots")
    g0 = np.linalg.norm(gx)
    H = np.eye(x.size)
    status = "unconverged"
    for it in range(opts.max_iters + 1):
        gnorm = float(np.linalg.norm(gx))
        trace.append((it, fx, gnorm))
        if floor is not None and fx < floor:
            status = "diverged"
            break
        if gnorm <= max(opts.tol * g0, opts.gtol_abs * max(1.0, abs(fx))):
            status = "converged"
            break
        if it == opts.max_iters:
            break
        p = -H @ gx
        slope = gx @ p
        if slope >= 0:
            H = np.eye(x.size)
            p, slope = -gx, -gx @ gx
        alpha, accepted = 1.0, False
        for _ in range(opts.max_backtracks):
            x_new = x + alpha * p
            f_new = f(x_new)
            if f_new <= fx + opts.armijo * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            status = f"line-search-failure@{it}"
            break
        g_new = g(x_new)
        s, y = x_new - x, g_new - gx
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 0:
                H = np.eye(x.size) * sy / (y @ y)
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, gx = x_new, f_new, g_new
    return path0.with_interior(x), trace, status


def geodesic_solve(fam: MapFamily, theta0, theta1, K: int, batch: SampleBatch,
                   basis: Optional[PotentialBasis], opts: Optional[OptimizerOptions] = None,
                   metric_kind: str = "wasserstein", ridge=None, with_stderr: bool = True,
                   threads=None) -> tuple[ParamPath, ActionReport]:
    """Minimize the discrete action from the (projected) straight line."""
    opts = opts or OptimizerOptions()
    if K < 2:
        raise ValueError("geodesic_solve needs K >= 2")
    theta0, theta1 = fam.check(theta0), fam.check(theta1)
    init = ParamPath.linear(theta0, theta1, K)
    init = ParamPath(np.vstack([theta0, [fam.project(k) for k in init.knots[1:-1]], theta1]))
    model = KineticModel(fam, batch, basis, metric_kind, ridge, opts.fd_step, threads)
    path, trace, status = minimize_path(lambda p: pairwise_sum(model.segments(p)),
                                        model.gradient, init, fam, opts)
    report = action(fam, path, batch, basis, metric_kind, ridge, with_stderr, threads)
    report.trace, report.status, report.converged = trace, status, status == "converged"
    return path, report


def distance(fam: MapFamily, theta0, theta1, batch: SampleBatch, basis: Optional[PotentialBasis],
             K: int = 16, opts: Optional[OptimizerOptions] = None, **kwargs) -> float:
    """Square root of the minimized action; raises :class:`NonConvergence` if the solve fails."""
    if np.allclose(np.atleast_1d(theta0), np.atleast_1d(theta1), rtol=0, atol=0):
        fam.check(theta0)
        return 0.0
    path, report = geodesic_solve(fam, theta0, theta1, K, batch, basis, opts, **kwargs)
    if not report.converged:
        raise NonConvergence(f"geodesic solve ended with status {report.status}", path, report)
    return report.distance
