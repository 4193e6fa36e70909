"""Spectral fields on the unit 3-torus.

A :class:`SpectralField` stores the Fourier coefficients of a real
scalar, vector or rank-2 tensor field sampled on a uniform ``N**3`` grid
of ``[0, 1)**3``.  Coefficients are kept in the half-spectrum layout of
:func:`scipy.fft.rfftn` with ``norm="forward"``, so ``coeffs[..., 0, 0, 0]``
is the mean of the field and the physical values are recovered by a plain
inverse transform.  The leading axes of ``coeffs`` are the tensor indices
(none for scalars, one for vectors, two for tensors).

The Nyquist planes (``|k_i| = N/2``) are kept identically zero.  With that
convention every Fourier multiplier used here (derivatives, inverse
Laplacian, antidivergence) commutes exactly with every other one, so
identities such as ``div(curl V) = 0`` hold to round-off.

Products are dealiased by evaluating the factors on a 3/2-oversampled
grid and truncating the result back to the retained band.  This is the
exact L2 projection of the true product onto the band, which makes the
product rule ``d(fg) = f dg + g df`` exact for projected products.
"""
from __future__ import annotations

import functools
from collections import Counter
import io
import struct
from dataclasses import dataclass, field as dc_field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi

FLAG_BITS = {
    "real": 1,
    "divergence_free": 2,
    "symmetric": 4,
    "traceless": 8,
    "zero_mean": 16,
}

SNAPSHOT_MAGIC = b"MKF1"
SNAPSHOT_VERSION = 1


class GridMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


class PreconditionError(ValueError):
    """Raised when an operator's input violates its precondition."""


def _workers() -> int | None:
    import os

    value = os.environ.get("MIKADO_FORGE_THREADS")
    return int(value) if value else None


class Grid3:
    """Uniform periodic grid with ``n`` points per axis on ``[0, 1)**3``."""

    def __init__(self, n: int):
        n = int(n)
        if n < 4 or n % 2:
            raise ValueError(f"grid size must be even and >= 4, got {n}")
        self.n = n
        m = -(-3 * n // 2)
        self.m = m + (m % 2)
        self.shape = (n, n, n)
        self.spectral_shape = (n, n, n // 2 + 1)

    def __repr__(self):
        return f"Grid3(n={self.n})"

    def __eq__(self, other):
        return isinstance(other, Grid3) and other.n == self.n

    def __hash__(self):
        return hash(("Grid3", self.n))

    @functools.cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer wavenumbers broadcastable to the spectral shape."""
        n = self.n
        kx = np.fft.fftfreq(n, 1.0 / n).reshape(n, 1, 1)
        ky = np.fft.fftfreq(n, 1.0 / n).reshape(1, n, 1)
        kz = np.arange(n // 2 + 1, dtype=float).reshape(1, 1, n // 2 + 1)
        return kx, ky, kz

    @functools.cached_property
    def band(self) -> np.ndarray:
        """Boolean mask of retained modes (everything but Nyquist planes)."""
        kx, ky, kz = self.wavenumbers
        h = self.n // 2
        return (np.abs(kx) < h) & (np.abs(ky) < h) & (kz < h)

    @functools.cached_property
    def ik(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Derivative multipliers ``2*pi*i*k_j``, zero on the Nyquist planes."""
        h = self.n // 2
        out = []
        for k in self.wavenumbers:
            kk = np.where(np.abs(k) < h, k, 0.0)
            out.append(1j * TWO_PI * kk)
        return tuple(out)

    @functools.cached_property
    def k2(self) -> np.ndarray:
        """``|2*pi*k|**2`` on the full spectral shape."""
        kx, ky, kz = self.wavenumbers
        return (TWO_PI**2) * (kx**2 + ky**2 + kz**2)

    @functools.cached_property
    def inv_k2(self) -> np.ndarray:
        """``-1/|2*pi*k|**2`` with the zero mode (and Nyquist) set to zero."""
        k2 = self.k2
        out = np.zeros(self.spectral_shape)
        mask = self.band & (k2 > 0)
        out[mask] = -1.0 / k2[mask]
        return out

    @functools.cached_property
    def hermitian_weight(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum mode in the full spectrum."""
        w = np.full(self.spectral_shape[-1], 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        return w.reshape(1, 1, -1)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.arange(self.n) / self.n
        return (x.reshape(-1, 1, 1), x.reshape(1, -1, 1), x.reshape(1, 1, -1))


@functools.lru_cache(maxsize=None)
def grid(n: int) -> Grid3:
    """Shared :class:`Grid3` instance for resolution ``n``."""
    return Grid3(n)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real field on the torus stored by its half-spectrum Fourier coefficients."""

    grid: Grid3
    coeffs: np.ndarray
    flags: frozenset = dc_field(default_factory=frozenset)

    def __post_init__(self):
        if self.coeffs.shape[-3:] != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient block {self.coeffs.shape[-3:]} does not match "
                f"{self.grid.spectral_shape}"
            )
        if self.coeffs.ndim - 3 not in (0, 1, 2):
            raise ValueError("only scalar, vector and rank-2 tensor fields are supported")
        if any(d != 3 for d in self.coeffs.shape[:-3]):
            raise ValueError("tensor indices must have dimension 3")
        object.__setattr__(self, "flags", frozenset(self.flags) | {"real"})

    # construction -----------------------------------------------------

    @classmethod
    def zeros(cls, g: Grid3, rank: int = 0) -> "SpectralField":
        return cls(g, np.zeros((3,) * rank + g.spectral_shape, dtype=complex))

    @classmethod
    def from_physical(cls, values, g: Grid3 | None = None, flags=()) -> "SpectralField":
        values = np.asarray(values, dtype=float)
        n = values.shape[-1]
        g = g or grid(n)
        c = sfft.rfftn(values, axes=(-3, -2, -1), norm="forward", workers=_workers())
        c *= g.band
        return cls(g, c, frozenset(flags))

    @classmethod
    def from_function(cls, fn: Callable, g: Grid3, flags=()) -> "SpectralField":
        """Sample ``fn(x, y, z)`` on the grid; ``fn`` may return stacked components."""
        x, y, z = g.coordinates()
        return cls.from_physical(_broadcast_components(fn(x, y, z), g.shape), g, flags)

    # basic properties -------------------------------------------------

    @property
    def rank(self) -> int:
        return self.coeffs.ndim - 3

    @property
    def n(self) -> int:
        return self.grid.n

    def with_flags(self, *flags: str) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs, self.flags | set(flags))

    def physical(self) -> np.ndarray:
        """Values on the ``n**3`` grid."""
        return sfft.irfftn(
            self.coeffs, s=self.grid.shape, axes=(-3, -2, -1), norm="forward", workers=_workers()
        )

    def oversampled(self) -> np.ndarray:
        """Values on the 3/2-oversampled grid used for dealiased products."""
        return sfft.irfftn(
            pad_coefficients(self.coeffs, self.grid.n, self.grid.m),
            s=(self.grid.m,) * 3,
            axes=(-3, -2, -1),
            norm="forward",
            workers=_workers(),
        )

    def mean(self) -> np.ndarray:
        """Mean value (a scalar or an array of component means)."""
        return self.coeffs[..., 0, 0, 0].real.copy()

    def component(self, *index: int) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs[index])

    def transpose(self) -> "SpectralField":
        if self.rank != 2:
            raise ValueError("transpose needs a rank-2 field")
        return SpectralField(self.grid, np.swapaxes(self.coeffs, 0, 1).copy(), self.flags)

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy(), self.flags)

    # arithmetic -------------------------------------------------------

    def _check(self, other: "SpectralField"):
        if not isinstance(other, SpectralField):
            raise TypeError(f"expected SpectralField, got {type(other).__name__}")
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")
        if other.rank != self.rank:
            raise ValueError(f"rank mismatch: {self.rank} vs {other.rank}")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.flags & other.flags)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.flags & other.flags)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.flags)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            raise TypeError("use product() for field-field products")
        return SpectralField(self.grid, self.coeffs * float(scalar), self.flags)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def without_mean(self) -> "SpectralField":
        c = self.coeffs.copy()
        c[..., 0, 0, 0] = 0.0
        return SpectralField(self.grid, c, self.flags | {"zero_mean"})

    def __repr__(self):
        kind = ("scalar", "vector", "tensor")[self.rank]
        return f"SpectralField({kind}, n={self.n}, flags={sorted(self.flags)})"


def _broadcast_components(values, shape) -> np.ndarray:
    if isinstance(values, (list, tuple)):
        return np.stack([_broadcast_components(v, shape) for v in values])
    values = np.asarray(values, dtype=float)
    lead = values.shape[:-3] if values.ndim > 3 else ()
    return np.array(np.broadcast_to(values, lead + tuple(shape)))


def pad_coefficients(c: np.ndarray, n: int, m: int) -> np.ndarray:
    """Embed an ``n``-grid half spectrum into an ``m``-grid one (``m >= n``)."""
    h = n // 2
    out = np.zeros(c.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
    out[..., :h, :h, :h] = c[..., :h, :h, :h]
    out[..., m - h + 1 :, :h, :h] = c[..., h + 1 :, :h, :h]
    out[..., :h, m - h + 1 :, :h] = c[..., :h, h + 1 :, :h]
    out[..., m - h + 1 :, m - h + 1 :, :h] = c[..., h + 1 :, h + 1 :, :h]
    return out


def truncate_coefficients(c: np.ndarray, n: int, m: int) -> np.ndarray:
    """Inverse of :func:`pad_coefficients`: keep the ``n``-grid band, zero Nyquist."""
    h = n // 2
    out = np.zeros(c.shape[:-3] + (n, n, h + 1), dtype=complex)
    out[..., :h, :h, :h] = c[..., :h, :h, :h]
    out[..., h + 1 :, :h, :h] = c[..., m - h + 1 :, :h, :h]
    out[..., :h, h + 1 :, :h] = c[..., :h, m - h + 1 :, :h]
    out[..., h + 1 :, h + 1 :, :h] = c[..., m - h + 1 :, m - h + 1 :, :h]
    return out


def _same_grid(*fields: SpectralField) -> Grid3:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"{g} vs {f.grid}")
    return g


def _oversample(c: np.ndarray, g: Grid3) -> np.ndarray:
    return sfft.irfftn(pad_coefficients(c, g.n, g.m), s=(g.m,) * 3, axes=(-3, -2, -1),
                       norm="forward", workers=_workers())


def _from_oversampled(values: np.ndarray, g: Grid3) -> np.ndarray:
    c = sfft.rfftn(values, axes=(-3, -2, -1), norm="forward", workers=_workers())
    return truncate_coefficients(c, g.n, g.m)


# calculus -------------------------------------------------------------


def grad(f: SpectralField) -> SpectralField:
    """Gradient; the new index is appended last (``(grad V)_ij = d_j V_i``)."""
    if f.rank == 2:
        raise ValueError("gradient of a rank-2 field is not supported")
    ik = f.grid.ik
    c = np.stack([f.coeffs * ik[j] for j in range(3)], axis=f.rank)
    return SpectralField(f.grid, c)


def div(F: SpectralField) -> SpectralField:
    """Divergence over the last tensor index (``(div T)_i = d_j T_ij``)."""
    if F.rank == 0:
        raise ValueError("divergence of a scalar field")
    ik = F.grid.ik
    c = sum(F.coeffs[..., j, :, :, :] * ik[j] for j in range(3))
    return SpectralField(F.grid, c)


def curl(V: SpectralField) -> SpectralField:
    if V.rank != 1:
        raise ValueError("curl needs a vector field")
    ikx, iky, ikz = V.grid.ik
    u, v, w = V.coeffs
    c = np.stack([iky * w - ikz * v, ikz * u - ikx * w, ikx * v - iky * u])
    return SpectralField(V.grid, c, frozenset({"divergence_free"}))


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, -f.grid.k2 * f.coeffs * f.grid.band, f.flags)


def inv_laplacian(f: SpectralField, tol: float = 1e-12) -> SpectralField:
    """Zero-mean solution ``u`` of ``laplacian(u) = f``; ``f`` must have zero mean."""
    mean = f.mean()
    scale = l2_norm(f)
    if np.max(np.abs(mean)) > tol * max(scale, 1e-300):
        raise PreconditionError(f"inv_laplacian needs zero-mean input, mean = {mean}")
    return SpectralField(f.grid, f.coeffs * f.grid.inv_k2, f.flags | {"zero_mean"})


def apply_multiplier(f: SpectralField, mult: np.ndarray) -> SpectralField:
    return SpectralField(f.grid, f.coeffs * mult, f.flags)


def lowpass(f: SpectralField, kmax: float) -> SpectralField:
    """Keep modes with ``|k| <= kmax`` (integer wavenumbers)."""
    kx, ky, kz = f.grid.wavenumbers
    mask = (kx**2 + ky**2 + kz**2) <= kmax**2 + 1e-9
    return SpectralField(f.grid, f.coeffs * mask, f.flags)


def dilate(f: SpectralField, sigma: int, target: Grid3) -> SpectralField:
    """Return ``x -> f(sigma * x)`` on ``target`` by mapping mode ``k`` to ``sigma * k``.

    Exact for integer ``sigma``; requires ``target.n == sigma * f.n``.
    """
    sigma = int(sigma)
    if sigma < 1:
        raise ValueError("sigma must be a positive integer")
    if target.n != sigma * f.grid.n:
        raise ValueError(f"target grid {target.n} != sigma * base grid {sigma * f.grid.n}")
    if sigma == 1:
        return SpectralField(target, f.coeffs.copy(), f.flags)
    n, N = f.grid.n, target.n
    kx = np.fft.fftfreq(n, 1.0 / n).astype(int)
    ix = (sigma * kx) % N
    iz = sigma * np.arange(n // 2 + 1)
    out = np.zeros(f.coeffs.shape[:-3] + target.spectral_shape, dtype=complex)
    out[..., ix[:, None, None], ix[None, :, None], iz[None, None, :]] = f.coeffs
    out *= target.band
    return SpectralField(target, out, f.flags)


# products -------------------------------------------------------------

_DEFAULT_PATTERNS = {
    (0, 0): ",->",
    (0, 1): ",i->i",
    (1, 0): "i,->i",
    (0, 2): ",ij->ij",
    (2, 0): "ij,->ij",
    (1, 1): "i,j->ij",
    (2, 2): "ij,ij->",
    (2, 1): "ij,j->i",
    (1, 2): "i,ij->j",
}


def product(f: SpectralField, g: SpectralField, subscripts: str | None = None,
            symmetric_output: bool = False) -> SpectralField:
    """Dealiased pointwise product with an einsum-style index pattern.

    Default pairings: scalar times anything, ``vector (x) vector`` (outer),
    ``tensor : tensor`` (double contraction) and ``tensor . vector``.
    Tensor indices are written without spatial axes, e.g. ``"ij,j->i"``.
    With ``symmetric_output`` the caller asserts a symmetric rank-2 result
    and only ``i <= j`` is computed.
    """
    G = _same_grid(f, g)
    if subscripts is None:
        subscripts = _DEFAULT_PATTERNS[(f.rank, g.rank)]
    lhs, out_idx = subscripts.replace(" ", "").split("->")
    a_idx, b_idx = lhs.split(",")
    if len(a_idx) != f.rank or len(b_idx) != g.rank:
        raise ValueError(f"pattern {subscripts!r} does not match ranks {f.rank}, {g.rank}")
    symmetric = len(out_idx) == 2 and (
        symmetric_output or (g is f and a_idx != b_idx and out_idx == a_idx + b_idx))
    out_shape = (3,) * len(out_idx)
    summed = sorted(set(a_idx + b_idx) - set(out_idx))
    plan = []
    for oi in np.ndindex(*out_shape):
        if symmetric and oi[0] > oi[1]:
            continue
        fixed = dict(zip(out_idx, oi))
        terms = []
        for si in np.ndindex(*((3,) * len(summed))):
            idx = {**fixed, **dict(zip(summed, si))}
            terms.append((("a", tuple(idx[c] for c in a_idx)),
                          ("b" if g is not f else "a", tuple(idx[c] for c in b_idx))))
        plan.append((oi, terms))
    # oversampled components are computed on first use and dropped after the last
    uses = Counter(key for _, terms in plan for pair in terms for key in pair)
    cache = {}

    def fetch(key):
        if key not in cache:
            src = f if key[0] == "a" else g
            cache[key] = _oversample(src.coeffs[key[1]], G)
        val = cache[key]
        uses[key] -= 1
        if uses[key] == 0:
            del cache[key]
        return val

    out = np.zeros(out_shape + G.spectral_shape, dtype=complex)
    for oi, terms in plan:
        acc = None
        for ka, kb in terms:
            a, b = fetch(ka), fetch(kb)
            acc = a * b if acc is None else acc + a * b
        out[oi] = _from_oversampled(acc, G)
        del acc
    if symmetric:
        for oi in np.ndindex(*out_shape):
            if oi[0] > oi[1]:
                out[oi] = out[oi[::-1]]
    return SpectralField(G, out)


def multiply_physical(fields: Sequence[SpectralField], fn: Callable, rank: int) -> SpectralField:
    """Evaluate ``fn`` on oversampled physical values of ``fields`` and project back.

    ``fn`` receives the oversampled arrays and must return an array with
    ``rank`` leading tensor axes.  Exact (dealiased) for quadratic ``fn``.
    """
    G = _same_grid(*fields)
    values = [f.oversampled() for f in fields]
    result = np.asarray(fn(*values))
    if result.ndim != rank + 3:
        raise ValueError("callback returned an array of the wrong rank")
    return SpectralField(G, _from_oversampled(result, G))


def dot(u: SpectralField, v: SpectralField) -> SpectralField:
    return product(u, v, "i,i->")


def outer(u: SpectralField, v: SpectralField) -> SpectralField:
    return product(u, v, "i,j->ij")


def traceless_tensor_product(u: SpectralField, v: SpectralField) -> SpectralField:
    """``u_i v_j - (1/3) delta_ij (u . v)``."""
    if u.rank != 1 or v.rank != 1:
        raise ValueError("traceless product needs two vector fields")
    T = outer(u, v)
    tr = trace(T)
    c = T.coeffs.copy()
    for i in range(3):
        c[i, i] -= tr.coeffs / 3.0
    return SpectralField(T.grid, c, frozenset({"traceless"}))


def trace(T: SpectralField) -> SpectralField:
    if T.rank != 2:
        raise ValueError("trace needs a rank-2 field")
    return SpectralField(T.grid, T.coeffs[0, 0] + T.coeffs[1, 1] + T.coeffs[2, 2])


def identity_times(f: SpectralField) -> SpectralField:
    """``f * Id`` for a scalar field ``f``."""
    c = np.zeros((3, 3) + f.grid.spectral_shape, dtype=complex)
    for i in range(3):
        c[i, i] = f.coeffs
    return SpectralField(f.grid, c, frozenset({"symmetric"}))


def symmetrize(T: SpectralField) -> SpectralField:
    c = 0.5 * (T.coeffs + np.swapaxes(T.coeffs, 0, 1))
    return SpectralField(T.grid, c, T.flags | {"symmetric"})


def traceless_part(T: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Split ``T = T0 + (tr T / 3) Id``; returns ``(T0, tr T / 3)``."""
    third = trace(T) / 3.0
    c = T.coeffs.copy()
    for i in range(3):
        c[i, i] -= third.coeffs
    return SpectralField(T.grid, c, T.flags | {"traceless"}), third


def constant_tensor(g: Grid3, M) -> SpectralField:
    c = np.zeros((3, 3) + g.spectral_shape, dtype=complex)
    c[:, :, 0, 0, 0] = np.asarray(M, dtype=float)
    return SpectralField(g, c)


def constant_vector(g: Grid3, v) -> SpectralField:
    c = np.zeros((3,) + g.spectral_shape, dtype=complex)
    c[:, 0, 0, 0] = np.asarray(v, dtype=float)
    return SpectralField(g, c)


def stack(fields: Sequence[SpectralField]) -> SpectralField:
    G = _same_grid(*fields)
    return SpectralField(G, np.stack([f.coeffs for f in fields]))


# norms ----------------------------------------------------------------


def _pointwise_magnitude(values: np.ndarray, rank: int) -> np.ndarray:
    if rank == 0:
        return np.abs(values)
    axes = tuple(range(rank))
    return np.sqrt(np.sum(values**2, axis=axes))


def l2_norm(f: SpectralField) -> float:
    """L2 norm on the unit torus via Parseval (Frobenius for tensors)."""
    w = f.grid.hermitian_weight
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def _magnitude(f: SpectralField) -> np.ndarray:
    """Pointwise Euclidean/Frobenius magnitude, accumulated one component at a time."""
    if f.rank == 0:
        return np.abs(f.physical())
    acc = None
    for idx in np.ndindex(*f.coeffs.shape[:-3]):
        v = sfft.irfftn(f.coeffs[idx], s=f.grid.shape, axes=(-3, -2, -1), norm="forward",
                        workers=_workers())
        acc = v * v if acc is None else acc + v * v
    return np.sqrt(acc)


def lp_norm(f: SpectralField, p: float = 2.0) -> float:
    """L^p norm by grid quadrature of the pointwise Euclidean/Frobenius magnitude."""
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    mag = _magnitude(f)
    if np.isinf(p):
        return float(mag.max())
    if p == 1:
        return float(mag.mean())
    if p == 2:
        return float(np.sqrt(np.mean(mag**2)))
    return float(np.mean(mag**p) ** (1.0 / p))


def sobolev_norm(f: SpectralField, s: float, homogeneous: bool = False) -> float:
    """``(sum_k w(k)^(2s) |f_k|^2)^(1/2)``, ``w = |2 pi k|`` or ``(1 + |2 pi k|^2)^(1/2)``."""
    if not 0 <= s <= 1:
        raise ValueError("Sobolev index must lie in [0, 1]")
    k2 = f.grid.k2
    weight = k2**s if homogeneous else (1.0 + k2) ** s
    w = f.grid.hermitian_weight * weight
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def cn_norm(f: SpectralField, order: int) -> float:
    """Sum over derivative orders ``0..order`` of the grid maximum of ``|grad^j f|``.

    Components are transformed one at a time, so memory stays at two
    physical scalars regardless of the order.
    """
    import itertools

    ik = f.grid.ik
    comps = list(np.ndindex(*((3,) * f.rank)))
    total = 0.0
    for j in range(order + 1):
        sq = np.zeros(f.grid.shape)
        for comp in comps:
            for alpha in itertools.product(range(3), repeat=j):
                c = f.coeffs[comp]
                for a in alpha:
                    c = c * ik[a]
                vals = sfft.irfftn(c, s=f.grid.shape, axes=(-3, -2, -1), norm="forward",
                                   workers=_workers())
                sq += vals * vals
        total += float(np.sqrt(sq.max()))
    return total


def divergence_defect(V: SpectralField) -> float:
    return l2_norm(div(V))


def check_invariants(f: SpectralField) -> dict[str, float]:
    """Measured defects for every flag ``f`` asserts (relative, see module docs)."""
    out = {}
    if "divergence_free" in f.flags:
        out["divergence_free"] = l2_norm(div(f)) / (sobolev_norm(f, 1.0) + 1e-30)
    if "symmetric" in f.flags and f.rank == 2:
        out["symmetric"] = l2_norm(f - f.transpose()) / (l2_norm(f) + 1e-30)
    if "traceless" in f.flags and f.rank == 2:
        out["traceless"] = l2_norm(trace(f)) / (l2_norm(f) + 1e-30)
    if "zero_mean" in f.flags:
        out["zero_mean"] = float(np.max(np.abs(f.mean()))) / (l2_norm(f) + 1e-30)
    return out


# mollification --------------------------------------------------------


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@functools.lru_cache(maxsize=1)
def _radial_nodes(order: int = 400):
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * (x + 1.0)
    w = 0.5 * w
    weight = w * _bump(r) * r**2
    mass = 4.0 * np.pi * weight.sum()
    return r, weight / weight.sum(), mass


def mollifier_mass_constant() -> float:
    """Constant ``c`` making ``c * exp(-1/(1-|x|^2))`` a unit-mass kernel on the unit ball."""
    _, _, mass = _radial_nodes()
    return 1.0 / mass


def mollifier_transform(q) -> np.ndarray:
    """Fourier transform of the unit-mass radial bump at angular frequency ``|q|``."""
    r, weight, _ = _radial_nodes()
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1)
    out = np.empty_like(flat)
    for start in range(0, flat.size, 4096):
        qq = flat[start : start + 4096, None] * r[None, :]
        out[start : start + 4096] = np.sinc(qq / np.pi) @ weight
    return out.reshape(q.shape)


@functools.lru_cache(maxsize=16)
def _mollifier_multiplier(n: int, l: float) -> np.ndarray:
    g = grid(n)
    k2_int = np.rint(g.k2 / TWO_PI**2).astype(np.int64)
    uniq, inverse = np.unique(k2_int, return_inverse=True)
    vals = mollifier_transform(TWO_PI * l * np.sqrt(uniq.astype(float)))
    return (vals[inverse].reshape(g.spectral_shape)) * g.band


def mollify(f: SpectralField, l: float) -> SpectralField:
    """Convolution with ``eta_l(x) = l^-3 eta(x / l)``, ``0 < l <= 1/4``."""
    if not 0 < l <= 0.25:
        raise ValueError(f"mollification length must lie in (0, 1/4], got {l}")
    return SpectralField(f.grid, f.coeffs * _mollifier_multiplier(f.grid.n, float(l)), f.flags)


# scaling studies ------------------------------------------------------


@dataclass
class ScalingStudy:
    """Norms measured along a parameter ladder and their log-log slope."""

    parameter: list
    values: list
    slope: float
    label: str = ""

    def as_dict(self):
        return {"label": self.label, "parameter": list(map(float, self.parameter)),
                "values": list(map(float, self.values)), "slope": float(self.slope)}


def fit_slope(xs: Iterable[float], ys: Iterable[float], floor: float = 0.0) -> float:
    """Least-squares slope of ``log y`` against ``log x``.

    Returns ``-inf`` when every value is at or below ``floor`` (decay faster
    than any power is resolvable), and ``nan`` if only some are.
    """
    xs = np.asarray(list(xs), dtype=float)
    ys = np.asarray(list(ys), dtype=float)
    if np.all(ys <= floor):
        return float("-inf")
    if np.any(ys <= floor):
        return float("nan")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def commutator_study(f: SpectralField, g: SpectralField, l_list: Sequence[float],
                     m: int = 0, r: float = 2.0) -> ScalingStudy:
    """``|| grad^m ((f g) * eta_l - (f * eta_l)(g * eta_l)) ||_{L^r}`` along ``l_list``."""
    if len(l_list) < 3:
        raise ValueError("commutator study needs at least three mollification lengths")
    if m not in (0, 1):
        raise ValueError("only m = 0 and m = 1 are supported")
    fg = product(f, g)
    values = []
    for l in l_list:
        comm = mollify(fg, l) - product(mollify(f, l), mollify(g, l))
        if m == 1:
            comm = grad(comm)
        values.append(lp_norm(comm, r))
    floor = 1e-14 * max(lp_norm(fg, r), 1e-300)
    return ScalingStudy(list(l_list), values, fit_slope(l_list, values, floor),
                        f"commutator m={m} r={r}")


def improved_holder_study(f: SpectralField, g: SpectralField, sigma_list: Sequence[int],
                          r: float = 2.0) -> ScalingStudy:
    """``| ||f g(sigma .)||_r - ||f||_r ||g||_r |`` along integer ``sigma_list``.

    ``g`` lives on a coarse grid whose size times each sigma equals ``f``'s grid.
    """
    if len(sigma_list) < 3:
        raise ValueError("improved Hoelder study needs at least three sigma values")
    values = []
    a = _pointwise_magnitude(f.oversampled(), f.rank)
    fr = _quadrature_norm(a, r)
    for sigma in sigma_list:
        if int(sigma) != sigma or sigma < 1:
            raise ValueError(f"sigma must be a positive integer, got {sigma}")
        gs = _dilate_to(g, int(sigma), f.grid)
        # one quadrature rule for all three norms, on the oversampled grid
        b = _pointwise_magnitude(gs.oversampled(), gs.rank)
        values.append(abs(_quadrature_norm(a * b, r) - fr * _quadrature_norm(b, r)))
    floor = 1e-13 * max(fr, 1e-300)
    return ScalingStudy(list(sigma_list), values, fit_slope(sigma_list, values, floor),
                        f"improved_holder r={r}")


def _quadrature_norm(values: np.ndarray, r: float) -> float:
    if np.isinf(r):
        return float(values.max())
    return float(np.mean(values**r) ** (1.0 / r))


def _dilate_to(g: SpectralField, sigma: int, target: Grid3) -> SpectralField:
    if target.n % sigma:
        raise ValueError(f"sigma={sigma} does not divide grid size {target.n}")
    base_n = target.n // sigma
    if g.grid.n != base_n:
        g = resample(g, grid(base_n))
    return dilate(g, sigma, target)


def resample(f: SpectralField, target: Grid3) -> SpectralField:
    """Spectral interpolation or truncation onto another grid."""
    n, N = f.grid.n, target.n
    if n == N:
        return f
    if N > n:
        return SpectralField(target, pad_coefficients(f.coeffs, n, N), f.flags)
    return SpectralField(target, truncate_coefficients(f.coeffs, N, n), f.flags)


# snapshot format ------------------------------------------------------


def _flag_mask(flags) -> int:
    return sum(bit for name, bit in FLAG_BITS.items() if name in flags)


def full_spectrum(c: np.ndarray, n: int) -> np.ndarray:
    """Expand a half spectrum to the full ``n**3`` block by Hermitian symmetry."""
    out = np.empty(c.shape[:-3] + (n, n, n), dtype=complex)
    h = n // 2
    out[..., : h + 1] = c
    neg = (-np.arange(n)) % n
    upper = np.arange(h + 1, n)
    out[..., upper] = np.conj(c[..., neg[:, None, None], neg[None, :, None], (n - upper)[None, None, :]])
    return out


def snapshot_bytes(f: SpectralField) -> bytes:
    """Serialize to the ``MKF1`` snapshot layout (little-endian)."""
    n = f.grid.n
    header = SNAPSHOT_MAGIC + struct.pack("<IIBB", SNAPSHOT_VERSION, n, f.rank, _flag_mask(f.flags))
    full = full_spectrum(f.coeffs, n).reshape((-1,) + (n, n, n))
    buf = io.BytesIO()
    buf.write(header)
    for comp in full:
        # complex128 little-endian is exactly the (re, im) f64 pair layout
        buf.write(np.ascontiguousarray(comp, dtype="<c16").tobytes(order="C"))
    return buf.getvalue()


def write_snapshot(f: SpectralField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(f))


def parse_snapshot(data: bytes) -> SpectralField:
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not an MKF1 snapshot")
    version, n, rank, mask = struct.unpack("<IIBB", data[4:14])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    ncomp = 3**rank
    expected = 14 + ncomp * n**3 * 16
    if len(data) != expected:
        raise ValueError(f"snapshot size {len(data)} != expected {expected}")
    full = np.frombuffer(data, dtype="<c16", offset=14).reshape((ncomp, n, n, n))
    half = full[..., : n // 2 + 1].reshape((3,) * rank + grid(n).spectral_shape)
    flags = {name for name, bit in FLAG_BITS.items() if mask & bit}
    return SpectralField(grid(n), np.ascontiguousarray(half), frozenset(flags))


def read_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        return parse_snapshot(fh.read())
