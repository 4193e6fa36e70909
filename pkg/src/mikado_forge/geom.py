"""Affine rank-one decomposition of symmetric matrices near the identity.

A symmetric 3x3 matrix S is stored in the Frobenius-isometric coordinates
``(S11, S22, S33, sqrt2*S12, sqrt2*S13, sqrt2*S23)`` so that Euclidean norms
of coordinate vectors are Frobenius norms of matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .field import SpectralField

SQRT2 = np.sqrt(2.0)

DEFAULT_DIRECTIONS = (
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (0, 1, 1),
    (0, 1, -1), (1, 0, 1), (1, 0, -1),
)

# Base points on the 1/16 lattice, pairwise distinct in every coordinate
# slot, so that they coincide with grid nodes whenever 16 divides N.
DEFAULT_BASE_POINTS = tuple(
    tuple(Fraction(c, 16) for c in trip)
    for trip in (
        (1, 3, 5), (7, 2, 11), (13, 9, 4), (3, 14, 6), (10, 5, 15),
        (6, 12, 2), (15, 1, 9), (4, 7, 13), (11, 10, 8),
    )
)


class ConstructionError(ValueError):
    """The direction set cannot support a decomposition."""


class BallDomainError(ValueError):
    """Argument lies outside the certified positivity ball."""

    def __init__(self, msg, distance=None, where=None):
        super().__init__(msg)
        self.distance = distance
        self.where = where


def sym_to_vec(s: np.ndarray) -> np.ndarray:
    """Map symmetric matrices (..., 3, 3) to isometric 6-vectors (..., 6)."""
    s = np.asarray(s, dtype=float)
    return np.stack([
        s[..., 0, 0], s[..., 1, 1], s[..., 2, 2],
        SQRT2 * s[..., 0, 1], SQRT2 * s[..., 0, 2], SQRT2 * s[..., 1, 2],
    ], axis=-1)


def vec_to_sym(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (3, 3))
    out[..., 0, 0], out[..., 1, 1], out[..., 2, 2] = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 3] / SQRT2
    out[..., 0, 2] = out[..., 2, 0] = v[..., 4] / SQRT2
    out[..., 1, 2] = out[..., 2, 1] = v[..., 5] / SQRT2
    return out


def line_spacing(k) -> float:
    """Smallest distance between two distinct periodic copies of a line along ``k``.

    Shortest nonzero vector of the integer lattice projected onto the plane
    orthogonal to ``k``; found by enumeration over a small box.
    """
    k = np.asarray(k, dtype=float)
    e = k / np.linalg.norm(k)
    r = int(np.abs(k).max()) + 1
    rng = np.arange(-r, r + 1)
    j = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3).astype(float)
    perp = j - np.outer(j @ e, e)
    d = np.linalg.norm(perp, axis=1)
    return float(d[d > 1e-9].min())


@dataclass(frozen=True)
class DirectionSet:
    directions: tuple
    base_points: tuple

    def __post_init__(self):
        dirs = tuple(tuple(int(c) for c in k) for k in self.directions)
        pts = tuple(tuple(Fraction(c) for c in p) for p in self.base_points)
        if len(dirs) != len(pts):
            raise ConstructionError("one base point is needed per direction")
        for k in dirs:
            if k == (0, 0, 0):
                raise ConstructionError("zero direction")
        for p in pts:
            if not all(0 <= c < 1 for c in p):
                raise ConstructionError(f"base point {p} not in [0,1)^3")
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "base_points", pts)
        self._check_lines()

    def _check_lines(self):
        # two lines coincide iff parallel and p - p' lies on the line modulo Z^3
        for i, (k, p) in enumerate(zip(self.directions, self.base_points)):
            for k2, p2 in zip(self.directions[i + 1:], self.base_points[i + 1:]):
                if np.linalg.matrix_rank(np.array([k, k2], dtype=float)) == 2:
                    continue
                diff = np.array([float(a - b) for a, b in zip(p, p2)])
                e = np.array(k, float) / np.linalg.norm(k)
                for j in np.ndindex(3, 3, 3):
                    y = diff + np.array(j) - 1
                    if np.linalg.norm(y - (y @ e) * e) < 1e-12:
                        raise ConstructionError(f"lines along {k} and {k2} coincide")

    def __len__(self):
        return len(self.directions)

    @property
    def unit_dirs(self) -> np.ndarray:
        k = np.array(self.directions, dtype=float)
        return k / np.linalg.norm(k, axis=1, keepdims=True)

    @property
    def kappa(self) -> float:
        """Smallest spacing between periodic copies of any line of the set."""
        return min(line_spacing(k) for k in self.directions)

    def points_array(self) -> np.ndarray:
        return np.array([[float(c) for c in p] for p in self.base_points])


def default_direction_set() -> DirectionSet:
    return DirectionSet(DEFAULT_DIRECTIONS, DEFAULT_BASE_POINTS)


@dataclass(frozen=True)
class GeometricDecomposition:
    directions: DirectionSet
    matrix: np.ndarray   # 6 x K, columns vec(e_k e_k)
    L: np.ndarray        # K x 6 right inverse
    c: np.ndarray        # K, base weights
    r0: float

    @property
    def c_min(self) -> float:
        return float(self.c.min())

    @property
    def cutoff_constant(self) -> float:
        """``max(4, 2/r0)``: keeps ``|R/rho|_F <= r0`` under the cutoff."""
        return max(4.0, 2.0 / self.r0)

    def gamma_squared(self, r: np.ndarray) -> np.ndarray:
        """Affine weights ``c_k + L_k(R - Id)``, vectorized over leading axes."""
        s = sym_to_vec(np.asarray(r, float) - np.eye(3))
        return self.c + s @ self.L.T

    def reconstruct(self, weights: np.ndarray) -> np.ndarray:
        e = self.directions.unit_dirs
        return np.einsum("...k,ki,kj->...ij", weights, e, e)


def build_decomposition(dset: DirectionSet | None = None) -> GeometricDecomposition:
    dset = dset or default_direction_set()
    e = dset.unit_dirs
    m = sym_to_vec(np.einsum("ki,kj->kij", e, e)).T
    rank = np.linalg.matrix_rank(m)
    if rank < 6:
        raise ConstructionError(f"direction tensors span rank {rank} < 6")
    pinv = np.linalg.pinv(m)
    c = pinv @ sym_to_vec(np.eye(3))
    # sign-paired directions share a weight
    for i, k in enumerate(dset.directions):
        neg = tuple(-x for x in k)
        if neg in dset.directions:
            j = dset.directions.index(neg)
            c[i] = c[j] = 0.5 * (c[i] + c[j])
    bad = np.flatnonzero(c <= 0)
    if bad.size:
        raise ConstructionError(f"base weight non-positive for direction {dset.directions[bad[0]]}")
    norms = np.linalg.norm(pinv, axis=1)
    r0 = float(np.min((c - c.min() / 2) / norms))
    return GeometricDecomposition(dset, m, pinv, c, r0)


def gamma(decomp: GeometricDecomposition, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.allclose(r, r.T, atol=1e-14):
        raise ValueError("R must be a symmetric 3x3 matrix")
    dist = float(np.linalg.norm(r - np.eye(3)))
    if dist > decomp.r0:
        raise BallDomainError(
            f"|R - Id|_F = {dist:.6g} exceeds the certified radius {decomp.r0:.6g}", dist)
    return np.sqrt(decomp.gamma_squared(r))


def gamma_field(decomp: GeometricDecomposition, rbar: SpectralField, rho,
                tol: float = 1e-10, physical: bool = False):
    """Per-direction values ``Gamma_k(Id - R/rho)`` at every grid node.

    ``rho`` is a scalar SpectralField or an array of nodal values.  The
    ball condition and the pointwise reconstruction identity are checked at
    every node.  Returns scalar SpectralFields, or the raw array
    ``(K, n, n, n)`` when ``physical`` is set.
    """
    rv = rbar.physical()          # (3, 3, n, n, n)
    if isinstance(rho, np.ndarray):
        rh = rho
    else:
        if rbar.grid != rho.grid:
            from .field import GridMismatchError
            raise GridMismatchError("R and rho live on different grids")
        rh = rho.physical()
    if rh.shape != rv.shape[2:]:
        from .field import GridMismatchError
        raise GridMismatchError(f"rho shape {rh.shape} does not match the grid {rv.shape[2:]}")
    if np.any(rh <= 0):
        raise BallDomainError("rho must be positive",
                              where=np.unravel_index(np.argmin(rh), rh.shape))
    n = rh.shape[0]
    out = np.empty((len(decomp.directions),) + rh.shape)
    worst, worst_at, err = 0.0, None, 0.0
    step = max(1, n // 8)
    for lo in range(0, n, step):
        sl = slice(lo, lo + step)
        ratio = np.moveaxis(rv[..., sl, :, :] / rh[sl], (0, 1), (-2, -1))
        dist = np.linalg.norm(ratio, axis=(-2, -1))
        at = np.unravel_index(np.argmax(dist), dist.shape)
        if dist[at] > worst:
            worst, worst_at = float(dist[at]), (at[0] + lo,) + at[1:]
        arg = np.eye(3) - 0.5 * (ratio + np.swapaxes(ratio, -1, -2))
        g2 = decomp.gamma_squared(arg)
        err = max(err, float(np.abs(decomp.reconstruct(g2) - arg).max()))
        out[:, sl] = np.moveaxis(np.sqrt(np.maximum(g2, 0.0)), -1, 0)
        del ratio, arg, g2
    if worst > decomp.r0 * (1 + 1e-12):
        raise BallDomainError(
            f"pointwise |R/rho|_F = {worst:.6g} exceeds r0 = {decomp.r0:.6g} at {worst_at}",
            worst, worst_at)
    if err > tol:
        raise ArithmeticError(f"pointwise reconstruction error {err:.3g}")
    if physical:
        return out
    return [SpectralField.from_physical(out[k], rbar.grid) for k in range(out.shape[0])]
