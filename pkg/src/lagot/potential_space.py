"""Finite bases for the potential Phi, evaluated through their gradients.

Only gradients of Phi enter the transport problem, so constants are left
out of every basis and the bases never evaluate Phi itself except for
finite-difference checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement, product
from typing import Optional

import numpy as np


def _points(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = x.reshape(1, -1) if single else x
    if x.shape[1] != n:
        raise ValueError(f"points must have dimension {n}, got {x.shape[1]}")
    return x, single


class PotentialBasis:
    n: int

    @property
    def size(self) -> int:
        raise NotImplementedError

    def labels(self) -> list[str]:
        return [f"psi_{j}" for j in range(self.size)]

    def bind(self, images: np.ndarray) -> "PotentialBasis":
        """Concrete basis for a given set of sample images."""
        return self

    def values(self, x) -> np.ndarray:
        """psi_j(x), shape (m, J)."""
        raise NotImplementedError

    def gradients(self, x) -> np.ndarray:
        """grad psi_j(x), shape (m, n, J)."""
        raise NotImplementedError


@dataclass(frozen=True)
class PolynomialBasis(PotentialBasis):
    """Monomials of total degree 1..degree in n variables."""

    n: int = 1
    degree: int = 2

    def __post_init__(self):
        if self.n < 1 or self.degree < 1:
            raise ValueError("polynomial basis needs n >= 1 and degree >= 1")

    @property
    def exponents(self) -> list[tuple]:
        out = []
        for deg in range(1, self.degree + 1):
            for combo in combinations_with_replacement(range(self.n), deg):
                out.append(tuple(combo.count(i) for i in range(self.n)))
        return out

    @property
    def size(self):
        return len(self.exponents)

    def labels(self):
        names = ["x"] if self.n == 1 else [f"x{i + 1}" for i in range(self.n)]
        out = []
        for alpha in self.exponents:
            parts = [v if a == 1 else f"{v}^{a}" for v, a in zip(names, alpha) if a]
            out.append("*".join(parts))
        return out

    def _powers(self, x):
        P = np.empty(x.shape + (self.degree + 1,))
        P[..., 0] = 1.0
        for k in range(1, self.degree + 1):
            P[..., k] = P[..., k - 1] * x
        return P

    def values(self, x):
        x, single = _points(x, self.n)
        P = self._powers(x)
        cols = [np.prod([P[:, i, a] for i, a in enumerate(alpha)], axis=0) for alpha in self.exponents]
        out = np.stack(cols, axis=1)
        return out[0] if single else out

    def gradients(self, x):
        x, single = _points(x, self.n)
        P = self._powers(x)
        m = x.shape[0]
        G = np.zeros((m, self.n, self.size))
        for j, alpha in enumerate(self.exponents):
            for i in range(self.n):
                if alpha[i] == 0:
                    continue
                g = alpha[i] * P[:, i, alpha[i] - 1]
                for l, a in enumerate(alpha):
                    if l != i and a:
                        g = g * P[:, l, a]
                G[:, i, j] = g
        return G[0] if single else G


@dataclass(frozen=True)
class GaussianRBFBasis(PotentialBasis):
    """``psi_j(x) = exp(-|x - c_j|^2 / (2 h^2))``."""

    centers: tuple
    bandwidth: float

    def __post_init__(self):
        if len(self.centers) < 1 or self.bandwidth <= 0:
            raise ValueError("rbf basis needs at least one center and positive bandwidth")

    @property
    def n(self):
        return len(self.centers[0])

    @property
    def size(self):
        return len(self.centers)

    def values(self, x):
        x, single = _points(x, self.n)
        C = np.asarray(self.centers)
        r2 = np.sum((x[:, None, :] - C[None]) ** 2, axis=2)
        out = np.exp(-0.5 * r2 / self.bandwidth ** 2)
        return out[0] if single else out

    def gradients(self, x):
        x, single = _points(x, self.n)
        C = np.asarray(self.centers)
        diff = x[:, None, :] - C[None]
        psi = np.exp(-0.5 * np.sum(diff ** 2, axis=2) / self.bandwidth ** 2)
        G = -(diff * psi[:, :, None] / self.bandwidth ** 2).transpose(0, 2, 1)
        return G[0] if single else G


@dataclass(frozen=True)
class LatticeRBF(PotentialBasis):
    """RBF basis whose centers are a fixed lattice over the images' bounding box.

    Spacing is (extent / (per_axis - 1)) per axis; the bandwidth is the
    largest spacing.  ``bind`` produces the concrete
    :class:`GaussianRBFBasis`.
    """

    n: int = 1
    per_axis: int = 5

    @property
    def size(self):
        return self.per_axis ** self.n

    def bind(self, images):
        images = np.asarray(images, float).reshape(-1, self.n)
        lo, hi = images.min(axis=0), images.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        axes = [np.linspace(a, b, self.per_axis) for a, b in zip(lo, hi)]
        spacing = float(np.max((hi - lo) / max(self.per_axis - 1, 1)))
        centers = tuple(tuple(c) for c in product(*axes))
        return GaussianRBFBasis(centers, spacing)

    def values(self, x):
        raise TypeError("LatticeRBF must be bound to sample images first")

    gradients = values


@dataclass(frozen=True)
class PotentialCoefficients:
    c: np.ndarray
    basis: PotentialBasis

    def __post_init__(self):
        if np.shape(self.c) != (self.basis.size,):
            raise ValueError(f"coefficient length {np.shape(self.c)} does not match basis size {self.basis.size}")


def grad_phi(basis: PotentialBasis, c, x) -> np.ndarray:
    """sum_j c_j grad psi_j(x)."""
    if isinstance(c, PotentialCoefficients):
        c = c.c
    c = np.asarray(c, float)
    if c.shape != (basis.size,):
        raise ValueError(f"coefficient length {c.shape} does not match basis size {basis.size}")
    return basis.gradients(x) @ c


def gradient_feature_matrix(basis: PotentialBasis, images) -> np.ndarray:
    """Stack of grad psi_j(x_i): rows i*n .. i*n+n-1 belong to image i."""
    images = np.asarray(images, float)
    if images.ndim == 1:
        images = images.reshape(-1, basis.n)
    if not np.all(np.isfinite(images)):
        raise ValueError("images must be finite")
    G = basis.gradients(images)
    return G.reshape(-1, basis.size)


def make_basis(kind: str = "polynomial", n: int = 1, degree: int = 2,
               per_axis: Optional[int] = None, centers=None, bandwidth=None) -> PotentialBasis:
    if kind == "polynomial":
        return PolynomialBasis(n, degree)
    if kind == "gaussian-rbf":
        if centers is not None:
            return GaussianRBFBasis(tuple(tuple(map(float, c)) for c in centers), float(bandwidth))
        return LatticeRBF(n, per_axis or 5)
    raise ValueError(f"unknown basis kind {kind!r}")
