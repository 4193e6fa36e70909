"""One convex-integration step for the stationary EMHD-Reynolds system

    curl B + div(B (x) B) + grad p = div R.

Products are the dealiased projections ``P(fg)`` of :mod:`field`; every
identity below is exact for that product, so the new tuple is certified
by its residual up to round-off.

The new stress is split as

    R1 = R_osc + R_F + R_E + R_C + R_L + R_disc

where ``R_E`` absorbs the effect of low-pass filtering the amplitudes and
``R_disc`` the (round-off sized, away from resonances) gap between the
sampled Mikado profiles and their continuum transport identity.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from . import field as fl
from .antidiv import antidiv, bilinear_antidiv_rank_one
from .field import SpectralField
from .geom import GeometricDecomposition, gamma_field
from .mikado import MikadoFamily


class StageError(RuntimeError):
    """A step stage failed an identity check."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


@dataclass
class ReynoldsTuple:
    B: SpectralField
    p: SpectralField
    R: SpectralField
    stage: int = 0
    residual_tol: float = 1e-9

    def __post_init__(self):
        fl._same_grid(self.B, self.p, self.R)
        if (self.B.rank, self.p.rank, self.R.rank) != (1, 0, 2):
            raise ValueError("tuple needs a vector B, scalar p and rank-2 R")

    @property
    def grid(self) -> fl.Grid3:
        return self.B.grid

    @classmethod
    def zero(cls, g: fl.Grid3, stage: int = 0) -> "ReynoldsTuple":
        return cls(fl.SpectralField.zeros(g, 1), fl.SpectralField.zeros(g, 0),
                   fl.SpectralField.zeros(g, 2), stage)

    def residual(self) -> SpectralField:
        return residual(self.B, self.p, self.R)

    def residual_norm(self) -> float:
        return fl.l2_norm(self.residual())

    def scale(self) -> float:
        """``1 + ||B||_{H^1}^2``, the natural size of the residual terms."""
        return 1.0 + fl.sobolev_norm(self.B, 1.0) ** 2

    def invariants(self) -> dict:
        B = self.B.with_flags("divergence_free")
        R = self.R.with_flags("symmetric", "traceless")
        out = {f"B_{k}": v for k, v in fl.check_invariants(B).items()}
        out.update({f"R_{k}": v for k, v in fl.check_invariants(R).items()})
        scale = fl.l2_norm(self.p)
        out["p_zero_mean"] = abs(float(self.p.mean())) / (scale + 1e-30)
        return out


# residual and pressure --------------------------------------------------


def nonlinearity(B: SpectralField) -> SpectralField:
    """``div P(B (x) B)``."""
    return fl.div(fl.product(B, B, "i,j->ij"))


def residual(B: SpectralField, p: SpectralField, R: SpectralField) -> SpectralField:
    """``curl B + div(B (x) B) + grad p - div R``."""
    fl._same_grid(B, p, R)
    return fl.curl(B) + nonlinearity(B) + fl.grad(p) - fl.div(R)


def _require_div_free(B: SpectralField, tol: float = 1e-10):
    defect = fl.divergence_defect(B)
    scale = fl.sobolev_norm(B, 1.0) + 1e-30
    if defect > tol * scale:
        raise fl.PreconditionError(f"B is not divergence free: |div B| = {defect:.3g}")


def solve_pressure(B: SpectralField) -> SpectralField:
    """Zero-mean ``p = -D^-1 div div P(B (x) B)``.

    Makes ``div(B (x) B) + grad p`` divergence free, which is the pressure
    compatible with the divergence form of the nonlinearity used in
    :func:`residual`.
    """
    _require_div_free(B)
    dd = fl.div(nonlinearity(B))
    return SpectralField(B.grid, -dd.coeffs * B.grid.inv_k2, frozenset({"zero_mean"}))


def solve_compatible(B: SpectralField) -> ReynoldsTuple:
    """Tuple ``(B, p, R)`` with ``p`` from :func:`solve_pressure` and ``R`` absorbing the rest."""
    p = solve_pressure(B)
    force = fl.curl(B) + nonlinearity(B) + fl.grad(p)
    return ReynoldsTuple(B, p, antidiv(force))


def random_divergence_free(g: fl.Grid3, band: float, amplitude: float,
                           rng: np.random.Generator) -> SpectralField:
    """Smooth zero-mean divergence-free field ``curl A`` with ``A`` low-pass random."""
    A = SpectralField.from_physical(rng.standard_normal((3,) + g.shape), g)
    A = fl.lowpass(A, band).without_mean()
    B = fl.curl(A)
    return B * (amplitude / max(fl.l2_norm(B), 1e-300))


# mollification ------------------------------------------------------------


def mollify_tuple(t: ReynoldsTuple, l: float) -> ReynoldsTuple:
    """Mollified tuple ``(B_l, p_l, R_l)`` satisfying the system with residual ``res * eta_l``.

    ``R_l = R * eta + B_l o B_l - (B o B) * eta`` with the traceless product
    ``o``; its trace part moves into ``p_l = p * eta - (|B_l|^2 - |B|^2 * eta) / 3``.
    """
    Bl = fl.mollify(t.B, l)
    BB = fl.traceless_tensor_product(t.B, t.B)
    BlBl = fl.traceless_tensor_product(Bl, Bl)
    Rl = fl.mollify(t.R, l) + BlBl - fl.mollify(BB, l)
    del BB, BlBl
    sq = fl.dot(t.B, t.B)
    sql = fl.dot(Bl, Bl)
    pl = fl.mollify(t.p, l) - (sql - fl.mollify(sq, l)) / 3.0
    return ReynoldsTuple(Bl, pl.without_mean(), fl.symmetrize(Rl), t.stage, t.residual_tol)


# cutoff --------------------------------------------------------------------


_STEP_NODES = 4001


def _smooth_step_tables():
    """Tabulated C-infinity step ``g`` (integral of the standard bump) and its antiderivative."""
    t = np.linspace(0.0, 1.0, _STEP_NODES)
    s = 2.0 * t - 1.0
    b = np.zeros_like(t)
    inside = np.abs(s) < 1
    b[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    g = integrate.cumulative_trapezoid(b, t, initial=0.0)
    g /= g[-1]
    g = 0.5 * (g + 1.0 - g[::-1])           # exact symmetry g(t) + g(1-t) = 1
    G = integrate.cumulative_trapezoid(g, t, initial=0.0)
    return t, g, G


_T, _G_STEP, _G_INT = _smooth_step_tables()


@dataclass(frozen=True)
class Cutoff:
    """Monotone ``chi(x) = c0 (base + int_0^x g)`` with a smooth ramp ``g`` on ``[start, start + width]``."""

    c0: float
    l1: float
    delta: float
    start: float
    width: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        base = self.l1 + self.delta
        if self.width <= 0:
            return self.c0 * np.maximum(base, x)
        u = (x - self.start) / self.width
        ramp = np.interp(np.clip(u, 0.0, 1.0), _T, _G_INT) * self.width
        tail = np.maximum(x - self.start - self.width, 0.0)
        return self.c0 * (base + ramp + tail)

    @property
    def linear_from(self) -> float:
        """Argument beyond which ``chi(x) = c0 x``, or ``inf`` if never exactly linear."""
        end = self.start + self.width
        exact = abs(self.l1 + self.delta - self.start - self.width * _G_INT[-1]) < 1e-15 * max(end, 1)
        return end if exact else float("inf")


def make_cutoff(l1: float, delta: float, c0: float) -> Cutoff:
    """Cutoff flat on ``[0, l1]`` and equal to ``c0 x`` beyond ``2 l1`` when ``delta < l1``.

    For ``delta >= l1`` both branches cannot hold with a monotone ``chi``;
    the ramp then starts at ``l1 + delta`` and ``chi >= c0 (x - (l1 + delta)/2)``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    half = float(_G_INT[-1])             # integral of g over [0, 1], = 1/2
    if delta < l1:
        gap = l1 - delta
        width = min(delta, gap, l1)
        start = l1 + delta - half * width
    else:
        width = l1 + delta
        start = l1 + delta
    return Cutoff(c0, l1, delta, start, width)


def pointwise_norm(R: SpectralField) -> np.ndarray:
    return fl._magnitude(R)


def build_cutoff(Rbar: SpectralField, delta: float, c0: float) -> tuple[np.ndarray, Cutoff]:
    """Nodal values ``rho = chi(|R(x)|_F)`` together with the cutoff used.

    ``rho`` is kept as grid values rather than a band-limited field: the
    amplitudes only need it pointwise, and projecting it would perturb the
    exact branch ``chi(x) = c0 x`` at the nodes.
    """
    mag = pointwise_norm(Rbar)
    chi = make_cutoff(float(mag.mean()), float(delta), float(c0))
    return chi(mag), chi


# amplitudes ----------------------------------------------------------------


@dataclass
class Amplitudes:
    raw: list | None          # a_k on the grid (band-projected); dropped by step
    filtered: list            # low-passed a_k used with the Mikado flows
    lemma_residual: float     # pointwise |sum a_k^2 e e - (rho Id - R)| / scale
    kmax: float


def build_amplitudes(rho, Rbar: SpectralField, decomp: GeometricDecomposition,
                     kmax: float) -> Amplitudes:
    """``a_k = rho^(1/2) Gamma_k(Id - R/rho)``, then low-passed to ``|k| <= kmax``.

    ``rho`` is an array of nodal values or a scalar field.
    """
    gam = gamma_field(decomp, Rbar, rho, physical=True)
    rh = rho if isinstance(rho, np.ndarray) else rho.physical()
    a = np.sqrt(rh)[None] * gam
    del gam
    e = decomp.directions.unit_dirs
    rv = Rbar.physical()
    worst = 0.0
    n = rh.shape[0]
    step = max(1, n // 8)
    for lo in range(0, n, step):
        sl = slice(lo, lo + step)
        lhs = np.einsum("k...,ki,kj->ij...", a[:, sl] ** 2, e, e)
        rhs = rh[sl][None, None] * np.eye(3).reshape(3, 3, 1, 1, 1) - rv[:, :, sl]
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    scale = float(np.abs(rh).max() + np.abs(rv).max())
    raw = [SpectralField.from_physical(a[k], Rbar.grid) for k in range(a.shape[0])]
    filtered = [fl.lowpass(f, kmax) for f in raw]
    return Amplitudes(raw, filtered, worst / scale, kmax)


# perturbation ---------------------------------------------------------------


@dataclass
class Perturbation:
    w_p: SpectralField
    w_c: SpectralField
    psi: list                  # P(a_k phi_k(sigma .)) per direction

    @property
    def w(self) -> SpectralField:
        return self.w_p + self.w_c


def build_perturbation(amps: list, family: MikadoFamily) -> Perturbation:
    """Principal part ``sum P(a_k phi_k(sigma .)) e_k`` and corrector ``sigma^-1 sum Omega_k(sigma .) grad a_k``."""
    g = family.full_grid
    if amps[0].grid != g:
        raise fl.GridMismatchError("amplitudes and Mikado family live on different grids")
    wp = np.zeros((3,) + g.spectral_shape, dtype=complex)
    wc = np.zeros((3,) + g.spectral_shape, dtype=complex)
    psi = []
    for k, a in enumerate(amps):
        e = family.direction(k).e
        phi = family.phi(k)
        ps = fl.product(a, phi)
        psi.append(ps)
        wp += e.reshape(3, 1, 1, 1) * ps.coeffs
        del phi
        da = fl.grad(a)
        if fl.l2_norm(da) == 0.0:
            continue
        gphi = _grad_phi_dilated(family, k)
        ea = SpectralField(g, np.tensordot(e, da.coeffs, axes=(0, 0)))
        s1 = fl.product(gphi, da, "i,i->")
        v2 = fl.product(ea, gphi, ",i->i")
        wc += (e.reshape(3, 1, 1, 1) * s1.coeffs[None] - v2.coeffs) / family.sigma
    return Perturbation(SpectralField(g, wp), SpectralField(g, wc), psi)


def _grad_phi_dilated(family: MikadoFamily, k: int) -> SpectralField:
    """``(grad Phi_k)(sigma x)``: gradient on the base grid, then dilated."""
    base = fl.grad(family.Phi(k, rescaled=False))
    return fl.dilate(base, family.sigma, family.full_grid)


def potential_identity_defect(amps: list, family: MikadoFamily, pert: Perturbation) -> float:
    """``|w - sigma^-1 div(sum P(a_k Omega_k(sigma .)))|`` relative to ``|w|``.

    Uses ``a Omega = e (x) P(a grad Phi) - P(a grad Phi) (x) e``.
    """
    g = family.full_grid
    acc = np.zeros((3,) + g.spectral_shape, dtype=complex)
    for k, a in enumerate(amps):
        e = family.direction(k).e
        v = fl.product(a, _grad_phi_dilated(family, k), ",i->i")
        dv = fl.div(v)
        ev = fl.grad(v)                          # ev_ij = d_j v_i
        edv = np.tensordot(e, ev.coeffs, axes=(0, 1))   # (e . grad) v_i
        acc += e.reshape(3, 1, 1, 1) * dv.coeffs[None] - edv
    rhs = SpectralField(g, acc / family.sigma)
    w = pert.w
    return fl.l2_norm(w - rhs) / (fl.l2_norm(w) + 1e-300)


# new stress ------------------------------------------------------------------


@dataclass
class StressParts:
    """Parts of the new stress, their norms and the pressure shift.

    The parts are built one at a time; only their norms, the running total
    and the divergences needed for the closure check are kept unless
    ``keep`` was requested (the fields are ``None`` otherwise).
    """

    R_osc: SpectralField | None
    R_F: SpectralField | None
    R_E: SpectralField | None
    R_C: SpectralField | None
    R_L: SpectralField | None
    R_disc: SpectralField | None
    pressure_shift: SpectralField        # p1 = pbar - pressure_shift
    closure_defect: float
    total_field: SpectralField
    norms: dict

    NAMES = ("R_osc", "R_F", "R_E", "R_C", "R_L", "R_disc")

    def total(self) -> SpectralField:
        return self.total_field

    def items(self):
        return [(name, getattr(self, name)) for name in self.NAMES]


def _rank_one(g: SpectralField, e) -> SpectralField:
    e = np.asarray(e, float)
    return SpectralField(g.grid, np.einsum("i,j,...->ij...", e, e, g.coeffs))


def _add_traceless_rank_one(acc: np.ndarray, g: SpectralField, e, sign: float = 1.0):
    """``acc += sign * g (e (x) e - Id/3)`` in place, for a unit vector ``e``."""
    m = np.outer(e, e) - np.eye(3) / 3.0
    for i in range(3):
        for j in range(3):
            if m[i, j] != 0.0:
                acc[i, j] += (sign * m[i, j]) * g.coeffs


def default_stress_norms(r: float = 1.5):
    def norms(f: SpectralField) -> dict:
        return {"L1": fl.lp_norm(f, 1), f"L{r:g}": fl.lp_norm(f, r), "L2": fl.l2_norm(f)}
    return norms


def build_new_stress(mt: ReynoldsTuple, pert: Perturbation, amps: list,
                     family: MikadoFamily, keep: bool = True, norms=None) -> StressParts:
    """New stress ``R_osc + R_F + R_E + R_C + R_L + R_disc`` and the pressure shift.

    ``norms`` maps a part to a dict of measured norms (default L^1, L^1.5, L^2).
    With ``keep=False`` each part is dropped once measured, which bounds the
    peak memory by a few tensors on the full grid.
    """
    g = family.full_grid
    sigma = family.sigma
    B = mt.B
    w_p, w_c = pert.w_p, pert.w_c
    sym = frozenset({"symmetric", "traceless"})
    norms = norms or default_stress_norms()
    dirs = [family.direction(k).e for k in range(len(amps))]
    total = np.zeros((3, 3) + g.spectral_shape, dtype=complex)
    div_lhs = np.zeros((3,) + g.spectral_shape, dtype=complex)
    kept, measured = {}, {}

    def emit(name, coeffs, closure):
        f = SpectralField(g, coeffs, sym)
        measured[name] = norms(f)
        total[...] += coeffs
        if closure:
            div_lhs[...] += fl.div(f).coeffs
        kept[name] = f if keep else None

    def amp2(k):
        return fl.product(amps[k], amps[k])

    # amplitude-filter remainder: R_E = Rbar + traceless part of sum P(a^2) e e
    r_e = mt.R.coeffs.copy()
    tr_g = np.zeros(g.spectral_shape, dtype=complex)
    for k, e in enumerate(dirs):
        ak2 = amp2(k)
        _add_traceless_rank_one(r_e, ak2, e)
        tr_g += ak2.coeffs
    emit("R_E", r_e, True)
    del r_e

    # interference: traceless part of P(w_p w_p) - sum P(psi^2) e e, and the
    # transport of P(psi^2) - P(a^2) along e feeding R_disc
    wpwp = fl.product(w_p, w_p, "i,j->ij")
    div_wpwp = fl.div(wpwp)
    tr_f = fl.trace(wpwp).coeffs
    r_f = wpwp.coeffs
    for i in range(3):
        r_f[i, i] -= tr_f / 3.0
    del wpwp
    q = np.zeros((3,) + g.spectral_shape, dtype=complex)
    for k, e in enumerate(dirs):
        ps2 = fl.product(pert.psi[k], pert.psi[k])
        _add_traceless_rank_one(r_f, ps2, e, -1.0)
        tr_f = tr_f - ps2.coeffs
        diff = ps2 - amp2(k)
        dd = fl.dot(fl.constant_vector(g, e), fl.grad(diff))
        q += e.reshape(3, 1, 1, 1) * dd.coeffs[None]
        del ps2, diff, dd
    emit("R_F", r_f, True)
    del r_f

    # oscillation: T(grad P(a^2), (phi^2 - 1)(sigma .) e e) per direction
    r_osc = np.zeros((3, 3) + g.spectral_shape, dtype=complex)
    for k, e in enumerate(dirs):
        gk = fl.grad(amp2(k))
        if fl.l2_norm(gk) == 0.0:
            continue
        phi = family.phi(k, rescaled=False)
        osc = fl.product(phi, phi)
        osc.coeffs[0, 0, 0] -= 1.0
        osc_s = fl.dilate(osc, sigma, g)
        del phi, osc
        r_osc += bilinear_antidiv_rank_one(gk, osc_s, e).coeffs
        del osc_s, gk
    q -= fl.div(SpectralField(g, r_osc)).coeffs
    emit("R_osc", r_osc, True)
    del r_osc

    emit("R_disc", antidiv(SpectralField(g, q)).coeffs, True)
    del q

    # corrector and linear errors
    w = pert.w
    dcc = fl.div(fl.product(w_c, w, "i,j->ij"))
    dcc = dcc + fl.div(fl.product(w_p, w_c, "i,j->ij"))
    emit("R_C", antidiv(dcc).coeffs, False)
    del dcc
    bw = fl.product(B, w, "i,j->ij")
    dlin = fl.div(bw + bw.transpose())
    del bw
    emit("R_L", antidiv(fl.curl(w) + dlin).coeffs, False)
    del dlin

    shift = SpectralField(g, (tr_f + tr_g) / 3.0)

    # closure: div(R_osc + R_F + R_E + R_disc) = div P(w_p w_p) - grad(shift) + div Rbar
    gs = fl.grad(shift)
    rhs = div_wpwp - gs + fl.div(mt.R)
    closure = fl.l2_norm(SpectralField(g, div_lhs) - rhs) / (
        fl.l2_norm(rhs) + fl.l2_norm(gs) + 1e-300)

    return StressParts(*(kept[name] for name in StressParts.NAMES),
                       pressure_shift=shift, closure_defect=closure,
                       total_field=SpectralField(g, total, sym), norms=measured)


# step ------------------------------------------------------------------------


@dataclass
class StepParams:
    sigma: int
    mu: int
    ell: float
    delta: float
    lowpass_factor: float = 0.5
    mollify: bool = True


@dataclass
class StepReport:
    params: dict
    norms_before: dict = field(default_factory=dict)
    norms_after: dict = field(default_factory=dict)
    increment: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)

    def all_finite(self) -> bool:
        def walk(x):
            if isinstance(x, dict):
                return all(walk(v) for v in x.values())
            if isinstance(x, (list, tuple)):
                return all(walk(v) for v in x)
            if isinstance(x, float):
                return bool(np.isfinite(x))
            return True
        return walk(self.as_dict())


def _norms(t: ReynoldsTuple) -> dict:
    return {
        "R_L1": fl.lp_norm(t.R, 1),
        "B_L2": fl.l2_norm(t.B),
        "B_H1dot": fl.sobolev_norm(t.B, 1.0, homogeneous=True),
        "p_L2": fl.l2_norm(t.p),
    }


def step(t: ReynoldsTuple, sp: StepParams, decomp: GeometricDecomposition,
         family: MikadoFamily, r: float = 1.5, check: bool = True,
         keep_parts: bool = False) -> tuple[ReynoldsTuple, StepReport]:
    """Map a certified tuple to the next one and report every measured quantity.

    The stress parts are attached to the report object as ``rep.parts`` when
    ``keep_parts`` is set.
    """
    clock = {}
    t0 = time.perf_counter()
    g = t.grid
    if family.full_grid != g:
        raise StageError("setup", f"family grid {family.n} differs from tuple grid {g.n}")
    if family.sigma != sp.sigma or family.mu != sp.mu:
        raise StageError("setup", "family parameters do not match the step parameters")
    rep = StepReport(params=asdict(sp))
    rep.params.update(N=g.n, c0=decomp.cutoff_constant, r0=decomp.r0, r=r)
    scale0 = t.scale()
    res0 = t.residual_norm()
    rep.residuals["input"] = res0
    if res0 > max(t.residual_tol, 1e-9) * scale0:
        raise StageError("input", f"tuple residual {res0:.3g} not certified")
    rep.norms_before = _norms(t)

    mt = mollify_tuple(t, sp.ell) if sp.mollify else t
    stage = t.stage
    del t                   # the caller may hold the only other reference
    rep.residuals["mollified"] = mt.residual_norm()
    clock["mollify"] = time.perf_counter() - t0

    rho, chi = build_cutoff(mt.R, sp.delta, decomp.cutoff_constant)
    ratio = float((pointwise_norm(mt.R) / rho).max())
    rep.checks["cutoff_ratio_max"] = ratio
    rep.checks["cutoff_l1"] = chi.l1
    # None when the cutoff never becomes exactly linear (delta >= |R|_L1)
    rep.checks["cutoff_linear_from"] = chi.linear_from if np.isfinite(chi.linear_from) else None
    kmax = sp.lowpass_factor * sp.sigma
    amps = build_amplitudes(rho, mt.R, decomp, kmax)
    rep.checks["reducing_stress_identity"] = amps.lemma_residual
    rep.checks["amplitude_L2"] = [fl.l2_norm(a) for a in amps.filtered]
    clock["amplitudes"] = time.perf_counter() - t0

    amps.raw = None
    del rho
    pert = build_perturbation(amps.filtered, family)
    w = pert.w
    wh1 = fl.sobolev_norm(w, 1.0)
    rep.checks["div_w"] = fl.divergence_defect(w) / (wh1 + 1e-300)
    if check:
        rep.checks["potential_identity"] = potential_identity_defect(amps.filtered, family, pert)
    rep.increment = {
        "w_p_L2": fl.l2_norm(pert.w_p), "w_p_L1": fl.lp_norm(pert.w_p, 1),
        "w_c_L2": fl.l2_norm(pert.w_c), "w_L2": fl.l2_norm(w),
        "w_H1dot": fl.sobolev_norm(w, 1.0, homogeneous=True),
        "corrector_ratio": fl.l2_norm(pert.w_c) / (fl.l2_norm(pert.w_p) + 1e-300),
    }
    clock["perturbation"] = time.perf_counter() - t0
    del w

    parts = build_new_stress(mt, pert, amps.filtered, family, keep=keep_parts,
                             norms=default_stress_norms(r))
    rep.checks["closure"] = parts.closure_defect
    rep.components = {name: parts.norms[name] for name in StressParts.NAMES}
    clock["stress"] = time.perf_counter() - t0

    B1 = mt.B + pert.w
    p1 = (mt.p - parts.pressure_shift).without_mean()
    R1 = parts.total()
    new = ReynoldsTuple(B1.with_flags("divergence_free"), p1,
                        SpectralField(g, R1.coeffs, frozenset({"symmetric", "traceless"})),
                        stage + 1)
    res1 = new.residual_norm()
    scale1 = new.scale()
    new.residual_tol = max(1e-7 * scale1, 10 * res1) / scale1 if res1 > 0 else 1e-7
    rep.residuals["output"] = res1
    rep.residuals["output_scale"] = scale1
    rep.residuals["output_relative"] = res1 / scale1
    rep.norms_after = _norms(new)
    rep.checks.update({f"invariant_{k}": v for k, v in new.invariants().items()})
    clock["total"] = time.perf_counter() - t0
    rep.timings = clock
    if keep_parts:
        rep.parts = parts
    return new, rep


# weak formulation ---------------------------------------------------------------


def weak_form_pairings(t: ReynoldsTuple, count: int, rng: np.random.Generator,
                       band: float = 4.0) -> list[dict]:
    """``int curl(phi) . residual`` for random divergence-free band-limited test fields.

    Each record carries the pairing, ``|phi|_{C^2}`` and the normalized value
    ``pairing / (|phi|_{C^2} * scale)``.
    """
    res = t.residual()
    scale = t.scale()
    out = []
    for _ in range(count):
        phi = random_divergence_free(t.grid, band, 1.0, rng)
        cphi = fl.curl(phi)
        pairing = float(np.sum(t.grid.hermitian_weight * (np.conj(cphi.coeffs) * res.coeffs).real))
        c2 = fl.cn_norm(phi, 2)
        out.append({"pairing": pairing, "c2": c2, "normalized": abs(pairing) / (c2 * scale)})
    return out


# tuple I/O ---------------------------------------------------------------------


def write_tuple(t: ReynoldsTuple, directory, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fl.write_snapshot(t.B.with_flags("divergence_free"), d / "B.mkf")
    fl.write_snapshot(t.p.with_flags("zero_mean"), d / "p.mkf")
    fl.write_snapshot(t.R.with_flags("symmetric", "traceless"), d / "R.mkf")
    manifest = {
        "stage": t.stage,
        "N": t.grid.n,
        "residual_tol": t.residual_tol,
        "norms": _norms(t),
        "residual": t.residual_norm(),
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_tuple(directory) -> ReynoldsTuple:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    B = fl.read_snapshot(d / "B.mkf")
    p = fl.read_snapshot(d / "p.mkf")
    R = fl.read_snapshot(d / "R.mkf")
    return ReynoldsTuple(B, p, R, int(manifest.get("stage", 0)),
                         float(manifest.get("residual_tol", 1e-9)))
