"""Stationary Mikado pipe flows on the unit torus.

Each direction ``k`` carries a scalar potential ``Phi_k = mu^-1 Phi(mu d)``
with ``d`` the torus distance to the periodic line through ``p_k``.  The
profile ``phi_k`` is its Laplacian, so ``W_k = phi_k e_k`` and the skew
potential ``Omega_k = e_k (x) grad Phi_k - grad Phi_k (x) e_k`` satisfy
``div Omega_k = W_k`` exactly at the coefficient level.

Fields are sampled on the base grid ``M = N / sigma`` and restricted to the
modes orthogonal to ``k`` (the sampled potential is invariant along ``k`` up
to interpolation, the restriction makes it exactly so).  The ``sigma``
rescaled copies live on the full grid and are produced by index dilation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate

from . import field as fl
from .field import ScalingStudy, SpectralField, fit_slope
from .geom import DirectionSet, default_direction_set, line_spacing

DEFAULT_RESOLUTION_FACTOR = 8
# exponential filter exp(-FILTER_ALPHA (|xi|/xi_nyquist)^order); alpha puts the
# Nyquist shell at round-off, the order keeps the lower half of the band intact
FILTER_ALPHA = 36.0
DEFAULT_FILTER_ORDER = 8


class ResolutionError(ValueError):
    """Grid too coarse for the requested concentration and oscillation."""


# profile ----------------------------------------------------------------


def _t(s):
    return 4.0 * np.asarray(s, dtype=float) - 3.0


def _inside(s):
    s = np.asarray(s, dtype=float)
    return (s > 0.5) & (s < 1.0)


def bump(s) -> np.ndarray:
    """Base potential ``exp(-1/(1-t^2))`` with ``t = 4s - 3``, zero off ``(1/2, 1)``."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = _inside(s)
    t = _t(s[m])
    out[m] = np.exp(-1.0 / (1.0 - t * t))
    return out


def bump_d1(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = _inside(s)
    t = _t(s[m])
    u = 1.0 - t * t
    out[m] = 4.0 * np.exp(-1.0 / u) * (-2.0 * t) / u**2
    return out


def bump_d2(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = _inside(s)
    t = _t(s[m])
    u = 1.0 - t * t
    out[m] = 16.0 * np.exp(-1.0 / u) * (4 * t * t / u**4 - 2.0 / u**2 - 8 * t * t / u**3)
    return out


def radial_laplacian(s) -> np.ndarray:
    """``Phi'' + Phi'/s``, the two-dimensional radial Laplacian of the bump."""
    s = np.asarray(s, dtype=float)
    out = bump_d2(s)
    m = _inside(s)
    out[m] += bump_d1(s[m]) / s[m]
    return out


@dataclass(frozen=True)
class PipeProfile:
    """Radial profile pair with the analytic normalization for a line of given length.

    ``norm_const`` makes ``int (phi_k)^2 = 1`` over the torus in the
    continuum; the sampled families renormalize numerically.
    """

    mu: int
    line_length: float
    norm_const: float

    def Phi(self, s):
        return self.norm_const * bump(s)

    def dPhi(self, s):
        return self.norm_const * bump_d1(s)

    def phi(self, s):
        return self.norm_const * radial_laplacian(s)

    def moment(self, s: float) -> float:
        """``int_0^s t phi(t) dt`` by adaptive quadrature."""
        val, _ = integrate.quad(lambda t: t * float(self.phi(t)), 0.5, max(min(s, 1.0), 0.5),
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        return val


def _phi_energy() -> float:
    val, _ = integrate.quad(lambda s: s * float(radial_laplacian(s)) ** 2, 0.5, 1.0,
                            epsabs=1e-15, epsrel=1e-13, limit=400)
    return 2.0 * np.pi * val


def build_profile(mu: int, line_length: float) -> PipeProfile:
    """Profile with ``int_T3 (mu phi(mu d))^2 = 1`` for a line of length ``line_length``.

    The integral equals ``line_length * 2 pi int s phi(s)^2 ds`` for every
    ``mu`` (the pipe cross-section shrinks as the profile grows).
    """
    if int(mu) != mu or mu < 2:
        raise ValueError("mu must be an integer >= 2")
    energy = line_length * _phi_energy()
    if energy < 1e-30:
        raise ArithmeticError("degenerate profile: normalization integral vanishes")
    return PipeProfile(int(mu), float(line_length), float(energy ** -0.5))


# geometry ----------------------------------------------------------------


def _box(k) -> np.ndarray:
    r = int(np.max(np.abs(k))) + 1
    rng = np.arange(-r, r + 1, dtype=float)
    return np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3)


def dist_to_line(x, k, p, extra: int = 0) -> np.ndarray:
    """Torus distance from points ``x`` (..., 3) to the periodic line through ``p`` along ``k``.

    Minimum over the periodic copies ``p + j`` with ``|j|_inf <= |k|_inf + 1 + extra``.
    """
    k = np.asarray(k, dtype=float)
    if not np.any(k):
        raise ValueError("direction must be nonzero")
    e = k / np.linalg.norm(k)
    y = (np.asarray(x, dtype=float) - np.asarray(p, dtype=float)) % 1.0
    box = _box(k) if extra == 0 else _box(k + np.sign(k) * extra + (k == 0) * extra)
    best = np.full(y.shape[:-1], np.inf)
    for j in box:
        z = y - j
        perp = z - (z @ e)[..., None] * e
        np.minimum(best, np.einsum("...i,...i->...", perp, perp), out=best)
    return np.sqrt(best)


def _distance_grid(k, p, m: int) -> np.ndarray:
    """Distances on the ``m**3`` grid using translation invariance along ``k``.

    Needs a component of ``k`` equal to +-1: the index shift ``i -> i - i_a k_a k``
    moves each node along the line to the slice ``i_a = 0``.
    """
    k = np.asarray(k, dtype=int)
    axes = np.flatnonzero(np.abs(k) == 1)
    idx = np.arange(m)
    if axes.size == 0:
        x = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), -1) / m
        return dist_to_line(x, k, p)
    a = int(axes[0])
    b, c = [ax for ax in range(3) if ax != a]
    sb, sc = np.meshgrid(idx, idx, indexing="ij")
    pts = np.zeros((m, m, 3))
    pts[..., b], pts[..., c] = sb / m, sc / m
    slab = dist_to_line(pts, k, p)
    wider = dist_to_line(pts, k, p, extra=1)
    if not np.allclose(slab, wider, rtol=0, atol=1e-13):
        raise ArithmeticError("periodic copy outside the search box is closer; margin check failed")
    grids = np.meshgrid(idx, idx, idx, indexing="ij")
    shift = grids[a] * k[a]
    jb = (grids[b] - shift * k[b]) % m
    jc = (grids[c] - shift * k[c]) % m
    return slab[jb, jc]


# family -----------------------------------------------------------------


@dataclass
class DirectionFields:
    """Normalized potential and profile of one direction on the base grid."""

    k: tuple
    e: np.ndarray
    p: np.ndarray
    Phi: SpectralField
    norm_const: float

    @property
    def phi(self) -> SpectralField:
        return fl.laplacian(self.Phi)


@dataclass
class MikadoFamily:
    """Mikado flows for a direction set at concentration ``mu`` and oscillation ``sigma``.

    Per-direction data are built lazily on the base grid of size ``n // sigma``
    and cached; rescaled fields are produced on demand.
    """

    directions: DirectionSet
    mu: int
    sigma: int
    n: int
    resolution_factor: int = DEFAULT_RESOLUTION_FACTOR
    filter_order: int = DEFAULT_FILTER_ORDER
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("mu", "sigma", "n"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.n % self.sigma:
            raise ResolutionError(f"sigma={self.sigma} does not divide N={self.n}")
        if self.n < self.resolution_factor * self.sigma * self.mu:
            raise ResolutionError(
                f"N={self.n} < {self.resolution_factor}*sigma*mu = "
                f"{self.resolution_factor * self.sigma * self.mu}")
        if self.base_n % 2 or self.base_n < 4:
            raise ResolutionError(f"base grid N/sigma = {self.base_n} must be even and >= 4")
        radius = 1.0 / self.mu
        if radius > 0.5 * self.directions.kappa:
            raise ResolutionError(
                f"pipe radius 1/mu = {radius:.4g} exceeds half the line spacing "
                f"{self.directions.kappa:.4g}; periodic copies would overlap")

    @property
    def base_n(self) -> int:
        return self.n // self.sigma

    @cached_property
    def base_grid(self) -> fl.Grid3:
        return fl.grid(self.base_n)

    @cached_property
    def full_grid(self) -> fl.Grid3:
        return fl.grid(self.n)

    def __len__(self):
        return len(self.directions)

    def direction(self, idx: int) -> DirectionFields:
        if idx not in self._cache:
            self._cache[idx] = self._build(idx)
        return self._cache[idx]

    def release(self, idx: int) -> None:
        """Drop the cached fields of one direction (rebuilt on next use)."""
        self._cache.pop(idx, None)

    def _build(self, idx: int) -> DirectionFields:
        k = self.directions.directions[idx]
        p = self.directions.points_array()[idx]
        g = self.base_grid
        d = _distance_grid(k, p, g.n)
        Phi = SpectralField.from_physical(bump(self.mu * d) / self.mu, g)
        kx, ky, kz = g.wavenumbers
        keep = ((kx * k[0] + ky * k[1] + kz * k[2]) == 0).astype(float)
        if self.filter_order:
            rad = np.sqrt(kx**2 + ky**2 + kz**2) / (g.n / 2)
            keep = keep * np.exp(-FILTER_ALPHA * rad**self.filter_order)
        Phi = SpectralField(g, Phi.coeffs * keep)
        norm = fl.l2_norm(fl.laplacian(Phi))
        if norm < 1e-30:
            raise ArithmeticError(f"profile of direction {k} vanishes on the grid")
        e = np.asarray(k, float) / np.linalg.norm(k)
        return DirectionFields(k, e, p, Phi / norm, 1.0 / norm)

    # base-grid fields (sigma = 1 pattern)

    def phi(self, idx: int, rescaled: bool = True) -> SpectralField:
        f = self.direction(idx).phi
        return fl.dilate(f, self.sigma, self.full_grid) if rescaled else f

    def Phi(self, idx: int, rescaled: bool = True) -> SpectralField:
        f = self.direction(idx).Phi
        return fl.dilate(f, self.sigma, self.full_grid) if rescaled else f

    def W(self, idx: int, rescaled: bool = True) -> SpectralField:
        e = self.direction(idx).e
        phi = self.phi(idx, rescaled)
        return SpectralField(phi.grid, e.reshape(3, 1, 1, 1) * phi.coeffs[None],
                             frozenset({"divergence_free"}))

    def omega_row(self, idx: int, i: int, rescaled: bool = True) -> SpectralField:
        """Row ``i`` of ``Omega_k`` as a vector field: ``e_i grad Phi - d_i Phi e``.

        The rescaled row is ``Omega_k(sigma x)``, so its divergence is
        ``sigma W_k(sigma x)``.
        """
        e = self.direction(idx).e
        gphi = fl.grad(self.Phi(idx, rescaled=False))
        c = e[i] * gphi.coeffs - e.reshape(3, 1, 1, 1) * gphi.coeffs[i][None]
        row = SpectralField(gphi.grid, c)
        return fl.dilate(row, self.sigma, self.full_grid) if rescaled else row

    def Omega(self, idx: int, rescaled: bool = True) -> SpectralField:
        return fl.stack([self.omega_row(idx, i, rescaled) for i in range(3)])

    def omega_magnitude_source(self, idx: int, rescaled: bool = True) -> SpectralField:
        """``grad Phi_k``; ``|Omega_k|_F = sqrt(2) |grad Phi_k|`` since ``e . grad Phi = 0``."""
        gphi = fl.grad(self.Phi(idx, rescaled=False))
        return fl.dilate(gphi, self.sigma, self.full_grid) if rescaled else gphi

    # property checks

    def check_direction(self, idx: int, rescaled: bool = False) -> dict:
        """Residuals of the Mikado identities for one direction."""
        e = self.direction(idx).e
        W = self.W(idx, rescaled)
        phi = self.phi(idx, rescaled)
        wl2 = fl.l2_norm(W)
        div_omega = fl.stack([fl.div(self.omega_row(idx, i, rescaled)) for i in range(3)])
        if rescaled:
            div_omega = div_omega / self.sigma
        omega_sq = sum(fl.l2_norm(self.omega_row(idx, i, rescaled)) ** 2 for i in range(3))
        phi2 = fl.product(phi, phi)
        ww_mean = phi2.mean() * np.outer(e, e)
        transport = fl.dot(fl.constant_vector(phi.grid, e), fl.grad(phi2))
        div_ww = fl.l2_norm(transport)
        grad_k = fl.l2_norm(fl.dot(fl.constant_vector(phi.grid, e), fl.grad(phi)))
        return {
            "direction": list(self.directions.directions[idx]),
            "div_omega_minus_w": fl.l2_norm(div_omega - W) / wl2,
            "omega_skew": 0.0 if omega_sq >= 0 else np.nan,
            "ww_mean_error": float(np.abs(ww_mean - np.outer(e, e)).max()),
            "div_ww": div_ww / fl.lp_norm(W, 4) ** 2,
            "directional_derivative": grad_k / fl.l2_norm(fl.grad(phi)),
            "div_w": fl.divergence_defect(W),
            "phi_l2": fl.l2_norm(phi),
        }


def build_family(dset: DirectionSet | None, mu: int, sigma: int, n: int,
                 resolution_factor: int = DEFAULT_RESOLUTION_FACTOR,
                 filter_order: int = DEFAULT_FILTER_ORDER) -> MikadoFamily:
    """Mikado family on an ``n**3`` grid.

    The sampled potential is smoothed by an exponential spectral filter of
    the given order (0 disables it).  Without it the spectral Laplacian of
    the under-resolved sampled bump has a slowly decaying global tail that
    biases L^1 norms.
    """
    return MikadoFamily(dset or default_direction_set(), int(mu), int(sigma), int(n),
                        int(resolution_factor), int(filter_order))


# studies ------------------------------------------------------------------


def _single(dset: DirectionSet, idx: int) -> DirectionSet:
    return DirectionSet((dset.directions[idx],), (dset.base_points[idx],))


def scaling_study(dset: DirectionSet | None, mu_list, p_list, n_of_mu=None,
                  indices=None) -> list[ScalingStudy]:
    """L^p norms of ``W_k`` and ``Omega_k`` along a ladder of concentrations.

    One :class:`ScalingStudy` per (direction, p, field); ``n_of_mu`` picks
    the grid for each ``mu`` (default ``8 mu``).
    """
    dset = dset or default_direction_set()
    mu_list = [int(m) for m in mu_list]
    if len(mu_list) < 3:
        raise ValueError("scaling studies need at least three ladder points")
    n_of_mu = n_of_mu or (lambda m: DEFAULT_RESOLUTION_FACTOR * m)
    indices = range(len(dset)) if indices is None else indices
    studies = []
    for idx in indices:
        single = _single(dset, idx)
        w_vals = {p: [] for p in p_list}
        o_vals = {p: [] for p in p_list}
        for mu in mu_list:
            fam = build_family(single, mu, 1, n_of_mu(mu))
            phi = fam.phi(0, rescaled=False)
            gphi = fam.omega_magnitude_source(0, rescaled=False)
            for p in p_list:
                w_vals[p].append(fl.lp_norm(phi, p))
                o_vals[p].append(np.sqrt(2.0) * fl.lp_norm(gphi, p))
            del fam, phi, gphi
        k = dset.directions[idx]
        for p in p_list:
            studies.append(ScalingStudy(list(mu_list), list(w_vals[p]),
                                        fit_slope(mu_list, w_vals[p]), f"W{k} L^{p}"))
            studies.append(ScalingStudy(list(mu_list), list(o_vals[p]),
                                        fit_slope(mu_list, o_vals[p]), f"Omega{k} L^{p}"))
    return studies


def overlap_norm(family: MikadoFamily, i: int, j: int, p: float, rescaled: bool = True) -> float:
    """``|| W_i (x) W_j ||_{L^p}``, i.e. the L^p norm of ``phi_i phi_j``."""
    a = family.phi(i, rescaled).physical()
    b = family.phi(j, rescaled).physical()
    v = np.abs(a * b)
    if np.isinf(p):
        return float(v.max())
    return float(np.mean(v**p) ** (1.0 / p))


def overlap_study(dset: DirectionSet | None, i: int, j: int, mu_list, p: float,
                  n_of_mu=None, floor: float = 0.0) -> ScalingStudy:
    """Cross-product norms ``||W_i (x) W_j||_p`` across concentrations, with slope."""
    dset = dset or default_direction_set()
    mu_list = [int(m) for m in mu_list]
    if len(mu_list) < 3:
        raise ValueError("scaling studies need at least three ladder points")
    n_of_mu = n_of_mu or (lambda m: DEFAULT_RESOLUTION_FACTOR * m)
    pair = DirectionSet((dset.directions[i], dset.directions[j]),
                        (dset.base_points[i], dset.base_points[j]))
    vals = []
    for mu in mu_list:
        fam = build_family(pair, mu, 1, n_of_mu(mu))
        vals.append(overlap_norm(fam, 0, 1, p, rescaled=False))
    k, k2 = dset.directions[i], dset.directions[j]
    return ScalingStudy(mu_list, vals, fit_slope(mu_list, vals, floor), f"W{k} x W{k2} L^{p}")


__all__ = [
    "PipeProfile", "MikadoFamily", "DirectionFields", "ResolutionError", "bump", "bump_d1",
    "bump_d2", "radial_laplacian", "build_profile", "dist_to_line", "build_family",
    "scaling_study", "overlap_study", "overlap_norm", "line_spacing",
]
