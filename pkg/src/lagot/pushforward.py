"""Parameterized maps ``g(theta, z)`` and their parameter derivatives.

A family realizes the model ``rho(theta, .) = g_theta # mu``.  All methods
accept a single latent point of shape ``(n,)`` or a stack ``(m, n)`` and
return correspondingly shaped output; the parameter Jacobian is stored
row-wise, ``J[k] = dg/dtheta_k``, so it has shape ``(d, n)`` per point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np

from .sampler import BaseMeasure, SampleBatch, expect, pairwise_sum


class InadmissibleParameter(ValueError):
    """theta lies outside the family's admissible set."""


def _stack(z, n):
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    z = z.reshape(1, -1) if single else z
    if z.shape[1] != n:
        raise ValueError(f"latent points must have dimension {n}, got {z.shape[1]}")
    return z, single


class MapFamily:
    """Base class; subclasses implement ``_forward`` and ``_jacobian`` on stacks."""

    kind = "abstract"
    d: int
    n: int

    @property
    def n1(self) -> int:
        return self.n

    def admissible_set(self) -> str:
        return "all finite theta"

    def _admissible(self, theta: np.ndarray) -> bool:
        return True

    def check(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.d,):
            raise ValueError(f"{self.kind}: theta must have length {self.d}, got {theta.shape}")
        if not np.all(np.isfinite(theta)) or not self._admissible(theta):
            raise InadmissibleParameter(
                f"{self.kind}: theta={theta.tolist()} outside admissible set ({self.admissible_set()})")
        return theta

    def is_admissible(self, theta) -> bool:
        try:
            self.check(theta)
        except ValueError:
            return False
        return True

    def project(self, theta) -> np.ndarray:
        """Nearest admissible point for simple box-type constraints."""
        return np.asarray(theta, dtype=float)

    def forward(self, theta, z) -> np.ndarray:
        theta = self.check(theta)
        z, single = _stack(z, self.n1)
        x = self._forward(theta, z)
        return x[0] if single else x

    def jacobian_theta(self, theta, z) -> np.ndarray:
        theta = self.check(theta)
        z, single = _stack(z, self.n1)
        J = self._jacobian(theta, z)
        return J[0] if single else J

    def map_velocity(self, theta, thetadot, z) -> np.ndarray:
        """Particle velocity ``J^T thetadot`` induced by moving theta."""
        thetadot = np.atleast_1d(np.asarray(thetadot, dtype=float))
        if thetadot.shape != (self.d,):
            raise ValueError(f"thetadot must have length {self.d}, got {thetadot.shape}")
        J = self.jacobian_theta(theta, z)
        return np.einsum("...kn,k->...n", J, thetadot)

    def gaussian_law(self, theta, measure: BaseMeasure):
        """(mean, cov) of the pushforward when it is Gaussian, else None."""
        return None

    def _forward(self, theta, z):
        raise NotImplementedError

    def _jacobian(self, theta, z):
        raise NotImplementedError


@dataclass(frozen=True)
class Translation(MapFamily):
    n: int = 1
    kind = "translation"

    @property
    def d(self):
        return self.n

    def _forward(self, theta, z):
        return z + theta

    def _jacobian(self, theta, z):
        return np.broadcast_to(np.eye(self.n), (z.shape[0], self.n, self.n)).copy()

    def gaussian_law(self, theta, measure):
        if measure.is_standard_normal:
            return self.check(theta), np.eye(self.n)
        return None


@dataclass(frozen=True)
class LocationScale1D(MapFamily):
    """``g = m + s z`` with ``s > 0``."""

    kind = "location-scale-1d"
    d = 2
    n = 1
    min_scale: float = 0.0

    def admissible_set(self):
        return f"scale s > {self.min_scale:g}"

    def _admissible(self, theta):
        return theta[1] > self.min_scale

    def project(self, theta):
        theta = np.array(theta, dtype=float)
        theta[1] = max(theta[1], self.min_scale + 1e-8)
        return theta

    def _forward(self, theta, z):
        return theta[0] + theta[1] * z

    def _jacobian(self, theta, z):
        J = np.empty((z.shape[0], 2, 1))
        J[:, 0, 0] = 1.0
        J[:, 1, 0] = z[:, 0]
        return J

    def gaussian_law(self, theta, measure):
        if measure.is_standard_normal:
            theta = self.check(theta)
            return theta[:1], np.array([[theta[1] ** 2]])
        return None


@dataclass(frozen=True)
class AffineND(MapFamily):
    """``g = b + L z`` with L lower triangular, positive diagonal.

    theta packs ``b`` (n entries) followed by the lower triangle of ``L``
    in row-major order.  The triangular restriction keeps theta -> law
    injective for a standard-normal base.
    """

    n: int = 2
    kind = "affine-nd"

    @property
    def d(self):
        return self.n + self.n * (self.n + 1) // 2

    def _tril(self):
        return np.tril_indices(self.n)

    def unpack(self, theta):
        L = np.zeros((self.n, self.n))
        L[self._tril()] = theta[self.n:]
        return theta[: self.n], L

    def pack(self, b, L) -> np.ndarray:
        return np.concatenate([np.asarray(b, float), np.asarray(L, float)[self._tril()]])

    def admissible_set(self):
        return "diagonal of L strictly positive"

    def _admissible(self, theta):
        _, L = self.unpack(theta)
        return bool(np.all(np.diag(L) > 0))

    def project(self, theta):
        b, L = self.unpack(np.asarray(theta, float))
        idx = np.diag_indices(self.n)
        L[idx] = np.maximum(L[idx], 1e-8)
        return self.pack(b, L)

    def _forward(self, theta, z):
        b, L = self.unpack(theta)
        return b + z @ L.T

    def _jacobian(self, theta, z):
        m = z.shape[0]
        J = np.zeros((m, self.d, self.n))
        J[:, : self.n, :] = np.eye(self.n)
        rows, cols = self._tril()
        for k, (i, j) in enumerate(zip(rows, cols)):
            J[:, self.n + k, i] = z[:, j]
        return J

    def gaussian_law(self, theta, measure):
        if measure.is_standard_normal:
            b, L = self.unpack(self.check(theta))
            return b, L @ L.T
        return None


@dataclass(frozen=True)
class Rotation2D(MapFamily):
    """``g = R(theta) z`` with theta in [0, pi)."""

    kind = "rotation-2d"
    d = 1
    n = 2

    def admissible_set(self):
        return "0 <= theta < pi"

    def _admissible(self, theta):
        return 0.0 <= theta[0] < math.pi

    def project(self, theta):
        return np.clip(np.asarray(theta, float), 0.0, math.pi - 1e-12)

    def _forward(self, theta, z):
        c, s = math.cos(theta[0]), math.sin(theta[0])
        return z @ np.array([[c, -s], [s, c]]).T

    def _jacobian(self, theta, z):
        c, s = math.cos(theta[0]), math.sin(theta[0])
        dR = np.array([[-s, -c], [c, -s]])
        return (z @ dR.T)[:, None, :]

    def gaussian_law(self, theta, measure):
        if measure.is_standard_normal:
            self.check(theta)
            return np.zeros(2), np.eye(2)
        return None


@dataclass(frozen=True)
class PolyFeature:
    """Vector field with polynomial components.

    ``terms`` is a sequence of ``(component, coefficient, exponents)``;
    e.g. ``((0, 1.0, (0, 1)),)`` is the shear ``(z_2, 0)``.
    """

    terms: tuple

    def __call__(self, z):
        out = np.zeros_like(z)
        for comp, coef, exps in self.terms:
            out[:, comp] += coef * np.prod(z ** np.asarray(exps, float), axis=1)
        return out


@dataclass(frozen=True)
class BumpFeature:
    """``direction * exp(-|z - center|^2 / (2 width^2))``."""

    center: tuple
    width: float
    direction: tuple

    def __call__(self, z):
        r2 = np.sum((z - np.asarray(self.center)) ** 2, axis=1)
        return np.exp(-0.5 * r2 / self.width ** 2)[:, None] * np.asarray(self.direction)


@dataclass(frozen=True)
class FeatureExpansion(MapFamily):
    """``g = z + sum_k theta_k phi_k(z)`` for fixed smooth features.

    Admissible parameters satisfy ``max |theta_k| <= radius``.  The map
    velocities ``phi_k`` need not be gradient fields.
    """

    n: int = 2
    features: tuple = ()
    radius: float = 0.5
    kind = "feature-expansion"

    def __post_init__(self):
        if not self.features:
            raise ValueError("feature-expansion needs at least one feature")

    @property
    def d(self):
        return len(self.features)

    def admissible_set(self):
        return f"max |theta_k| <= {self.radius:g}"

    def _admissible(self, theta):
        return bool(np.max(np.abs(theta)) <= self.radius)

    def project(self, theta):
        return np.clip(np.asarray(theta, float), -self.radius, self.radius)

    def _jacobian(self, theta, z):
        return np.stack([phi(z) for phi in self.features], axis=1)

    def _forward(self, theta, z):
        return z + np.einsum("mkn,k->mn", self._jacobian(theta, z), theta)


def shear_features(n: int = 2) -> tuple:
    """Curl-carrying test features: the shear (z_2, 0) and the rotation generator."""
    if n != 2:
        raise ValueError("shear features are defined for n = 2")
    return (PolyFeature(((0, 1.0, (0, 1)),)),
            PolyFeature(((0, 1.0, (0, 1)), (1, -1.0, (1, 0)))))


def make_family(kind: str, **constants) -> MapFamily:
    """Build a family from its kind name and kind-specific constants."""
    if kind == "translation":
        return Translation(n=int(constants.get("n", 1)))
    if kind == "location-scale-1d":
        return LocationScale1D(min_scale=float(constants.get("min_scale", 0.0)))
    if kind == "affine-nd":
        return AffineND(n=int(constants.get("n", 2)))
    if kind == "rotation-2d":
        return Rotation2D()
    if kind == "feature-expansion":
        feats = []
        for spec in constants.get("features", []):
            spec = dict(spec)
            ftype = spec.pop("type")
            if ftype == "poly":
                feats.append(PolyFeature(tuple((int(c), float(a), tuple(int(e) for e in ex))
                                               for c, a, ex in spec["terms"])))
            elif ftype == "bump":
                feats.append(BumpFeature(tuple(map(float, spec["center"])), float(spec["width"]),
                                         tuple(map(float, spec["direction"]))))
            else:
                raise ValueError(f"unknown feature type {ftype!r}")
        return FeatureExpansion(n=int(constants.get("n", 2)), features=tuple(feats),
                                radius=float(constants.get("radius", 0.5)))
    raise ValueError(f"unknown map family {kind!r}")


def _gauss_hermite(mean, cov, points):
    x1, w1 = np.polynomial.hermite_e.hermegauss(points)
    w1 = w1 / math.sqrt(2 * math.pi)
    n = len(mean)
    nodes = np.array(list(product(x1, repeat=n)))
    weights = np.prod(np.array(list(product(w1, repeat=n))), axis=1)
    C = np.linalg.cholesky(cov)
    return mean + nodes @ C.T, weights


def pushforward_consistency(fam: MapFamily, theta, batch: SampleBatch,
                            f: Callable[[np.ndarray], np.ndarray],
                            reference: Optional[SampleBatch] = None,
                            quad_points: int = 24) -> tuple[float, float]:
    """Both sides of ``E_z f(g(theta, z)) = int f(x) rho(theta, x) dx``.

    The left side averages over ``batch``.  The right side integrates
    against the law of the family: Gauss-Hermite quadrature when that law
    is Gaussian, otherwise the average over a large ``reference`` batch.
    ``f`` maps an ``(m, n)`` stack of points to ``m`` values.
    """
    theta = fam.check(theta)
    lhs = expect(batch, lambda z: f(fam.forward(theta, z)))
    law = fam.gaussian_law(theta, batch.measure)
    if law is not None:
        x, w = _gauss_hermite(*law, quad_points)
        vals = np.asarray(f(x), float)
        rhs = float(pairwise_sum(w * vals) / pairwise_sum(w))
    elif reference is not None:
        rhs = expect(reference, lambda z: f(fam.forward(theta, z)))
    else:
        raise ValueError(f"{fam.kind}: no closed-form law for this base measure and no reference batch")
    return lhs, rhs
