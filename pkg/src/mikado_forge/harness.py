"""Run configuration, verification suites and JSON-lines diagnostics.

A run executes the suites in a fixed order (``params``, ``field``, ``geom``,
``mikado``, ``antidiv``, ``scheme``) and writes one :class:`DiagnosticsRecord`
per check to ``<out>/diagnostics.jsonl``.  Every threshold comes from the
:class:`RunConfig` defaults table or from the golden file shipped with the
package.  All randomness flows from the configured seed, so two runs with
the same configuration write byte-identical snapshots and identical record
values (only ``wall_time`` differs).
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import antidiv as ad
from . import field as fl
from . import geom, mikado, params, scheme
from .field import SpectralField

SUITES = ("params", "field", "geom", "mikado", "antidiv", "scheme")
GOLDEN_FILE = "golden.json"
# configuration keys that determine the golden values
FINGERPRINT_KEYS = ("n", "sigma", "mu", "ell_inv", "lambda_n", "lambda_np1", "resolution_factor",
                    "seed", "seed_amplitude", "seed_band", "mikado_mu", "scaling_directions")


class ConfigError(ValueError):
    """Invalid run configuration; raised before any field is allocated."""


@dataclass
class RunConfig:
    """Flat run configuration; every field is a key of the config file."""

    # grid and surrogate ladder point
    n: int = 64
    lambda_n: int = 2
    lambda_np1: int = 8
    sigma: int = 2
    mu: int = 4
    ell_inv: Fraction = Fraction(8)
    resolution_factor: int = mikado.DEFAULT_RESOLUTION_FACTOR
    # reference parameters for the exact checker
    a: Fraction = params.REFERENCE_A
    b: int = params.REFERENCE_B
    beta: Fraction = params.REFERENCE_BETA
    alpha: Fraction = params.REFERENCE_ALPHA
    r: Fraction = params.DEFAULT_R
    # run control
    seed: int = 0
    suites: tuple = SUITES
    out: str = "run"
    # suite sizes
    field_n: int = 32
    antidiv_n: int = 16
    antidiv_samples: int = 20
    geom_samples: int = 10_000
    mikado_mu: tuple = (4, 8, 16)
    scaling_directions: tuple = (0, 4)
    seed_amplitude: float = 0.3
    seed_band: float = 3.0
    weak_form_tests: int = 10
    stress_norm_r: float = 1.5
    # tolerances and bands
    tol_operator: float = 1e-12
    tol_residual: float = 1e-7
    tol_identity: float = 1e-8
    tol_div: float = 1e-9
    tol_antidiv: float = 1e-10
    tol_bilinear: float = 1e-9
    tol_reconstruct: float = 1e-12
    tol_mean_ww: float = 1e-6
    tol_disjoint: float = 1e-8
    slope_band: float = 0.1
    overlap_band: float = 0.15
    trend_band: float = 0.2
    golden_band: float = 0.2
    golden_atol: float = 1e-6
    corrector_ratio_max: float = 0.1
    commutator_slope_min: float = 1.8
    antidiv_slope_max: float = -0.85
    holder_slope_band: float = 0.2

    def surrogate_params(self) -> params.IterationParams:
        p = params.IterationParams(a=self.a, b=self.b, beta=self.beta, alpha=self.alpha)
        return p.with_surrogate(lambda_n=self.lambda_n, lambda_np1=self.lambda_np1,
                                sigma=self.sigma, mu=self.mu, ell_inv=self.ell_inv)

    def validate(self) -> "RunConfig":
        try:
            self.surrogate_params().surrogate.check_resolution(self.n)
        except params.DomainError as err:
            raise ConfigError(str(err)) from None
        need = self.resolution_factor * self.sigma * self.mu
        if self.n < need:
            raise ConfigError(f"N={self.n} < {self.resolution_factor}*sigma*mu = {need}")
        unknown = set(self.suites) - set(SUITES)
        if unknown:
            raise ConfigError(f"unknown suites {sorted(unknown)}")
        for f in fields(self):
            if f.name.startswith("tol_") and not getattr(self, f.name) > 0:
                raise ConfigError(f"{f.name} must be positive")
        if len(self.mikado_mu) < 3:
            raise ConfigError("mikado_mu needs at least three ladder points")
        return self

    def fingerprint(self) -> dict:
        return {k: _plain(getattr(self, k)) for k in FINGERPRINT_KEYS}

    def as_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}


def _plain(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _parse_value(kind, raw: str):
    raw = raw.strip()
    if kind is Fraction:
        return Fraction(raw)
    if kind is tuple:
        items = [x.strip() for x in raw.split(",") if x.strip()]
        return tuple(int(x) if x.lstrip("-").isdigit() else x for x in items)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    base = base or RunConfig()
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _parse_value(kinds[key], raw)
        except (ValueError, ZeroDivisionError) as err:
            raise ConfigError(f"line {lineno}: bad value for {key}: {err}") from None
    return replace(base, **updates)


def load_config(path=None, **overrides) -> RunConfig:
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides)


def format_config(cfg: RunConfig) -> str:
    lines = ["# mikado-forge run configuration"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# diagnostics ---------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    suite: str
    check: str
    value: object
    threshold: object = None
    passed: bool = True
    wall_time: float = 0.0

    def as_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_json_default)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _finite(v) -> float:
    v = float(v)
    return v if math.isfinite(v) else (str(v) if not math.isnan(v) else "nan")


class Diagnostics:
    """Collects records, streams them to a JSONL file and tracks the golden comparison."""

    def __init__(self, path: Path | None, golden: dict | None, cfg: RunConfig):
        self.records: list[DiagnosticsRecord] = []
        self.path = path
        self._fh = open(path, "w") if path else None
        self.cfg = cfg
        self.golden = golden if golden and golden.get("fingerprint") == cfg.fingerprint() else None
        self.measured: dict = {}
        self._t0 = time.perf_counter()
        self.suite = ""

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None

    def _emit(self, rec: DiagnosticsRecord):
        self.records.append(rec)
        if self._fh:
            self._fh.write(rec.as_json() + "\n")
            self._fh.flush()

    def _elapsed(self) -> float:
        t = time.perf_counter()
        dt, self._t0 = t - self._t0, t
        return dt

    def at_most(self, check, value, threshold):
        v = float(value)
        self._emit(DiagnosticsRecord(self.suite, check, _finite(v), threshold,
                                     bool(v <= threshold), self._elapsed()))

    def at_least(self, check, value, threshold):
        v = float(value)
        self._emit(DiagnosticsRecord(self.suite, check, _finite(v), threshold,
                                     bool(v >= threshold), self._elapsed()))

    def within(self, check, value, target, band):
        v = float(value)
        self._emit(DiagnosticsRecord(self.suite, check, _finite(v), [target - band, target + band],
                                     bool(abs(v - target) <= band), self._elapsed()))

    def flag(self, check, passed: bool, value=None):
        self._emit(DiagnosticsRecord(self.suite, check, value, None, bool(passed),
                                     self._elapsed()))

    def info(self, check, value):
        self._emit(DiagnosticsRecord(self.suite, check, value, None, True, self._elapsed()))

    def golden_value(self, key, value):
        """Record a measured constant and compare it with the golden file when it applies."""
        v = float(value)
        self.measured[key] = v
        if self.golden is None or key not in self.golden["values"]:
            return
        ref = float(self.golden["values"][key])
        # relative band with an absolute floor for values that vanish up to round-off
        band = self.cfg.golden_band * abs(ref) + self.cfg.golden_atol
        self._emit(DiagnosticsRecord(self.suite, f"golden:{key}", v, [ref - band, ref + band],
                                     bool(abs(v - ref) <= band), self._elapsed()))

    @property
    def failed(self) -> list[DiagnosticsRecord]:
        return [r for r in self.records if not r.passed]


def load_golden(path=None) -> dict | None:
    if path is not None:
        p = Path(path)
        return json.loads(p.read_text()) if p.exists() else None
    try:
        text = resources.files("mikado_forge").joinpath(GOLDEN_FILE).read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return None
    return json.loads(text)


# suites ----------------------------------------------------------------------


def _rng(cfg: RunConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


def _random_field(rng, n, shape=(), band=None) -> SpectralField:
    f = SpectralField.from_physical(rng.standard_normal(shape + (n, n, n)), fl.grid(n))
    return fl.lowpass(f, band) if band else f


def suite_params(cfg: RunConfig, diag: Diagnostics):
    p = params.IterationParams(a=cfg.a, b=cfg.b, beta=cfg.beta, alpha=cfg.alpha)
    g = params.derive_gamma(p)
    diag.info("gamma", str(g))
    # closed form of gamma from the exponent bookkeeping
    diag.flag("gamma_closed_form", g == p.beta + (1 - p.beta) / p.b, str(g))
    for rep in params.check_inequalities(p, cfg.r):
        diag.flag(f"inequality:{rep.name}", rep.holds, json.loads(rep.as_json()))
    entries = [params.ladder(p, k) for k in range(4)]
    diag.info("ladder", [str(e) for e in entries])


def suite_field(cfg: RunConfig, diag: Diagnostics):
    rng = _rng(cfg, 1)
    n = cfg.field_n
    g = fl.grid(n)
    V = _random_field(rng, n, (3,))
    s = _random_field(rng, n)
    h1 = fl.sobolev_norm(V, 1.0)
    diag.at_most("div_curl", fl.l2_norm(fl.div(fl.curl(V))) / h1, cfg.tol_operator)
    diag.at_most("curl_grad", fl.l2_norm(fl.curl(fl.grad(s))) / fl.sobolev_norm(s, 1.0),
                 cfg.tol_operator)
    back = SpectralField.from_physical(V.physical(), g)
    diag.at_most("roundtrip", fl.l2_norm(back - V) / fl.l2_norm(V), cfg.tol_operator)
    T = fl.traceless_tensor_product(V, _random_field(rng, n, (3,)))
    diag.at_most("traceless_product", fl.l2_norm(fl.trace(T)) / fl.l2_norm(T), cfg.tol_operator)
    # product rule holds exactly for the projected product
    a, b = _random_field(rng, n, band=n // 4), _random_field(rng, n, band=n // 4)
    lhs = fl.grad(fl.product(a, b))
    rhs = fl.product(a, fl.grad(b), ",i->i") + fl.product(b, fl.grad(a), ",i->i")
    diag.at_most("product_rule", fl.l2_norm(lhs - rhs) / fl.l2_norm(lhs), cfg.tol_operator)
    # mollifier on a single mode against the radial transform
    m, l = 3, 0.1
    f = SpectralField.from_function(lambda x, y, z: np.sin(2 * np.pi * m * x), g)
    ratio = fl.l2_norm(fl.mollify(f, l)) / fl.l2_norm(f)
    diag.at_most("mollifier_transform", abs(ratio - abs(float(fl.mollifier_transform(
        2 * np.pi * m * l)))), cfg.tol_operator * 1e3)
    sine = SpectralField.from_function(lambda x, y, z: np.sin(2 * np.pi * x), fl.grid(64))
    st = fl.commutator_study(sine, sine, [1 / 8, 1 / 16, 1 / 32, 1 / 64], m=0)
    diag.at_least("commutator_slope_m0", st.slope, cfg.commutator_slope_min)
    small = SpectralField.from_function(lambda x, y, z: np.sin(2 * np.pi * x), fl.grid(8))
    h1_ = fl.improved_holder_study(sine, small, [2, 4, 8], r=1.0)
    diag.at_most("improved_holder_slope_r1", h1_.slope, -1.0 + cfg.holder_slope_band)
    f2 = SpectralField.from_function(lambda x, y, z: 1 + 0.5 * np.sin(2 * np.pi * x), fl.grid(64))
    h2 = fl.improved_holder_study(f2, small, [4, 8, 16], r=2.0)
    diag.at_most("improved_holder_slope_r2", h2.slope, -0.5 + cfg.holder_slope_band)
    diag.at_most("improved_holder_r2_max", max(h2.values), cfg.tol_operator)


def suite_geom(cfg: RunConfig, diag: Diagnostics):
    d = geom.build_decomposition()
    diag.at_least("c_min", d.c_min, 0.0)
    diag.at_most("identity_reconstruction",
                 float(np.abs(d.reconstruct(d.c) - np.eye(3)).max()), 1e-13)
    diag.at_least("r0", d.r0, 0.0)
    diag.golden_value("geom.r0", d.r0)
    diag.info("cutoff_constant", d.cutoff_constant)
    diag.info("kappa", d.directions.kappa)
    rng = _rng(cfg, 2)
    s = rng.standard_normal((cfg.geom_samples, 3, 3))
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    s *= (d.r0 * rng.uniform(0, 1, (cfg.geom_samples, 1, 1))
          / np.linalg.norm(s, axis=(-2, -1), keepdims=True))
    R = np.eye(3) + s
    g2 = d.gamma_squared(R)
    diag.at_most("random_reconstruction",
                 float(np.linalg.norm(d.reconstruct(g2) - R, axis=(-2, -1)).max()),
                 cfg.tol_reconstruct)
    diag.at_least("positivity_margin", float(g2.min() - d.c_min / 2), -cfg.tol_reconstruct)
    try:
        geom.build_decomposition(geom.DirectionSet(geom.DEFAULT_DIRECTIONS[:3],
                                                   geom.DEFAULT_BASE_POINTS[:3]))
        diag.flag("axes_only_rejected", False)
    except geom.ConstructionError:
        diag.flag("axes_only_rejected", True)


def suite_mikado(cfg: RunConfig, diag: Diagnostics):
    dset = geom.default_direction_set()
    res = mikado.DEFAULT_RESOLUTION_FACTOR
    worst = {}
    for mu in cfg.mikado_mu:
        fam = mikado.build_family(dset, mu, 1, res * mu)
        for idx in range(len(dset)):
            chk = fam.check_direction(idx)
            for key in ("div_omega_minus_w", "ww_mean_error", "div_ww",
                        "directional_derivative", "div_w"):
                worst[key] = max(worst.get(key, 0.0), chk[key])
            worst["phi_l2_error"] = max(worst.get("phi_l2_error", 0.0), abs(chk["phi_l2"] - 1))
        del fam
    diag.at_most("div_omega_minus_w", worst["div_omega_minus_w"], cfg.tol_identity)
    diag.at_most("mean_ww_minus_ee", worst["ww_mean_error"], cfg.tol_mean_ww)
    diag.at_most("div_ww", worst["div_ww"], cfg.tol_identity)
    diag.at_most("directional_derivative", worst["directional_derivative"], cfg.tol_identity)
    diag.at_most("div_w", worst["div_w"], cfg.tol_identity)
    diag.at_most("phi_normalization", worst["phi_l2_error"], cfg.tol_mean_ww)

    studies = mikado.scaling_study(dset, cfg.mikado_mu, [1, 2], indices=cfg.scaling_directions)
    for st in studies:
        p = 1.0 if st.label.endswith("L^1") else 2.0
        target = (1 - 2 / p) if st.label.startswith("W") else -2 / p
        diag.within(f"slope:{st.label}", st.slope, target, cfg.slope_band)
        diag.golden_value(f"mikado.slope.{st.label}", st.slope)
    for p in (1, 2):
        st = mikado.overlap_study(dset, 4, 5, cfg.mikado_mu, p)
        diag.at_most(f"overlap_slope:{st.label}", st.slope, 2 - 3 / p + cfg.overlap_band)
    st = mikado.overlap_study(dset, 0, 1, cfg.mikado_mu, 1)
    diag.at_most("disjoint_overlap_at_max_mu", st.values[-1], cfg.tol_disjoint)


def suite_antidiv(cfg: RunConfig, diag: Diagnostics):
    rng = _rng(cfg, 3)
    n = cfg.antidiv_n
    worst_r, worst_t = 0.0, 0.0
    for _ in range(cfg.antidiv_samples):
        v = _random_field(rng, n, (3,), band=n // 3)
        R = ad.antidiv(v)
        worst_r = max(worst_r, fl.l2_norm(fl.div(R) - v.without_mean()) / fl.l2_norm(v))
        u = _random_field(rng, n, (3,), band=n // 3)
        H = _random_field(rng, n, (3, 3), band=n // 3).without_mean()
        uh = fl.product(u, H, "l,li->i")
        T = ad.bilinear_antidiv(u, H)
        worst_t = max(worst_t, fl.l2_norm(fl.div(T) - uh.without_mean()) / fl.l2_norm(uh))
    diag.at_most("div_antidiv", worst_r, cfg.tol_antidiv)
    diag.at_most("div_bilinear", worst_t, cfg.tol_bilinear)
    g = fl.grid(8)
    u = SpectralField.from_function(
        lambda x, y, z: np.array(np.broadcast_arrays(np.sin(2 * np.pi * x), 0 * y, 0 * z)), g)
    for r in (1.0, 1.5, 2.0):
        st = ad.antidiv_scaling_study(u, [2, 4, 8, 16], r=r)
        diag.at_most(f"antidiv_slope_r{r:g}", st.slope, cfg.antidiv_slope_max)


def _step_records(diag: Diagnostics, cfg: RunConfig, label: str, new, rep, weak):
    diag.at_most(f"{label}:residual", rep.residuals["output_relative"], cfg.tol_residual)
    diag.at_most(f"{label}:div_w", rep.checks["div_w"], cfg.tol_div)
    diag.at_most(f"{label}:potential_identity", rep.checks["potential_identity"], cfg.tol_div)
    diag.at_most(f"{label}:reducing_stress_identity", rep.checks["reducing_stress_identity"],
                 cfg.tol_identity)
    diag.at_most(f"{label}:closure", rep.checks["closure"], cfg.tol_identity)
    diag.at_most(f"{label}:weak_form", max(w["normalized"] for w in weak), cfg.tol_residual)
    diag.flag(f"{label}:report_finite", rep.all_finite())
    diag.flag(f"{label}:nontrivial", fl.l2_norm(new.B) > 0, rep.norms_after["B_L2"])
    diag.info(f"{label}:components", rep.components)
    diag.info(f"{label}:increment", rep.increment)


def _report_dict(rep) -> dict:
    d = rep.as_dict()
    d.pop("timings", None)
    return d


def suite_scheme(cfg: RunConfig, diag: Diagnostics, out: Path | None):
    sp_ = cfg.surrogate_params()
    decomp = geom.build_decomposition()
    fam = mikado.build_family(None, cfg.mu, cfg.sigma, cfg.n, cfg.resolution_factor)
    g = fam.full_grid
    sp = scheme.StepParams(cfg.sigma, cfg.mu, float(sp_.surrogate.ell), sp_.delta_np1())
    starts = [("zero", scheme.ReynoldsTuple.zero(g))]
    B0 = scheme.random_divergence_free(g, cfg.seed_band, cfg.seed_amplitude, _rng(cfg, 4))
    starts.append(("seed", scheme.solve_compatible(B0)))
    for label, t0 in starts:
        new, rep = scheme.step(t0, sp, decomp, fam, r=cfg.stress_norm_r)
        weak = scheme.weak_form_pairings(new, cfg.weak_form_tests, _rng(cfg, 5))
        _step_records(diag, cfg, f"step_from_{label}", new, rep, weak)
        if label == "seed":
            ratio = rep.increment["corrector_ratio"]
            diag.at_most("step_from_seed:corrector_ratio", ratio, cfg.corrector_ratio_max)
            diag.golden_value("scheme.seed.corrector_ratio", ratio)
            diag.at_most("step_from_seed:cutoff_ratio", rep.checks["cutoff_ratio_max"], decomp.r0)
        if out is not None:
            scheme.write_tuple(t0, out / "tuples" / f"{label}_input")
            scheme.write_tuple(new, out / "tuples" / f"{label}_step",
                               extra={"step_params": asdict(sp)})
            (out / "reports").mkdir(parents=True, exist_ok=True)
            (out / "reports" / f"step_from_{label}.json").write_text(
                json.dumps(_report_dict(rep), indent=2, sort_keys=True, default=_json_default))
        del new, rep


def run_suite(cfg: RunConfig, suites=None, golden: dict | None = None,
              write_outputs: bool = True) -> tuple[int, Diagnostics]:
    """Run the selected suites in the fixed order; returns ``(exit status, diagnostics)``."""
    cfg.validate()
    selected = [s for s in SUITES if s in set(suites or cfg.suites)]
    out = Path(cfg.out) if write_outputs else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg))
    golden = golden if golden is not None else load_golden()
    diag = Diagnostics(out / "diagnostics.jsonl" if out else None, golden, cfg)
    runners = {
        "params": lambda: suite_params(cfg, diag),
        "field": lambda: suite_field(cfg, diag),
        "geom": lambda: suite_geom(cfg, diag),
        "mikado": lambda: suite_mikado(cfg, diag),
        "antidiv": lambda: suite_antidiv(cfg, diag),
        "scheme": lambda: suite_scheme(cfg, diag, out),
    }
    try:
        for name in selected:
            diag.suite = name
            try:
                runners[name]()
            except (ArithmeticError, ValueError, RuntimeError) as err:
                diag.flag("suite_error", False, f"{type(err).__name__}: {err}")
    finally:
        diag.close()
    if out is not None:
        (out / "golden_measured.json").write_text(json.dumps(
            {"fingerprint": cfg.fingerprint(), "values": diag.measured}, indent=2, sort_keys=True))
    return (1 if diag.failed else 0), diag


# estimate sweeps ---------------------------------------------------------------


def _principal_norms_constant_amplitudes(cfg: RunConfig, mu: int, delta: float) -> dict:
    """``w_p`` norms for the first step from ``(0, 0, 0)``.

    With ``R = 0`` the amplitudes are the constants ``(c0 delta c_k)^(1/2)``,
    so ``w_p = sum a_k W_k(sigma .)`` is ``1/sigma``-periodic and its L^p
    norms equal those of ``sum a_k W_k`` on one period.  That period is
    sampled on the base grid ``8 mu``.
    """
    decomp = geom.build_decomposition()
    res = mikado.DEFAULT_RESOLUTION_FACTOR
    fam = mikado.build_family(None, mu, 1, res * mu)
    amps = np.sqrt(decomp.cutoff_constant * delta * decomp.c)
    acc = None
    for k in range(len(fam)):
        e = fam.direction(k).e
        phi = fam.phi(k, rescaled=False).physical()
        term = (amps[k] * e).reshape(3, 1, 1, 1) * phi[None]
        acc = term if acc is None else acc + term
        fam.release(k)
        del phi, term
    mag = np.sqrt(np.sum(acc**2, axis=0))
    return {"w_p_L1": float(mag.mean()), "w_p_L2": float(np.sqrt(np.mean(mag**2))),
            "w_c_L2": 0.0}


def estimate_sweep(cfg: RunConfig, which: str, ladder, out_path=None) -> dict:
    """Norms along a parameter ladder with fitted log-log slopes.

    ``which`` is ``mu`` (principal perturbation norms of the first step,
    ``sigma`` fixed by the config), ``l`` (commutator part of the mollified
    stress of the seed tuple) or ``sigma`` (antidivergence of an oscillating
    pattern).  Writes one JSON line per ladder point and a summary line.
    """
    ladder = list(ladder)
    if len(ladder) < 3:
        raise ConfigError("sweep ladder needs at least three points")
    rows = []
    if which == "mu":
        for mu in ladder:
            lam = cfg.sigma * int(mu)
            delta = float(lam) ** (-2.0 * float(cfg.beta))
            rows.append({"mu": int(mu), "sigma": cfg.sigma, "delta": delta,
                         **_principal_norms_constant_amplitudes(cfg, int(mu), delta)})
        # delta depends on lambda = sigma mu; the normalized fits divide it out
        xs = [r["mu"] for r in rows]
        slopes = {}
        for k in ("w_p_L1", "w_p_L2"):
            slopes[k] = fl.fit_slope(xs, [r[k] for r in rows])
            slopes[k + "_per_sqrt_delta"] = fl.fit_slope(
                xs, [r[k] / math.sqrt(r["delta"]) for r in rows])
    elif which == "l":
        g = fl.grid(cfg.n)
        B = scheme.random_divergence_free(g, cfg.seed_band, cfg.seed_amplitude, _rng(cfg, 4))
        BB = fl.traceless_tensor_product(B, B)
        for l in ladder:
            Bl = fl.mollify(B, float(l))
            comm = fl.traceless_tensor_product(Bl, Bl) - fl.mollify(BB, float(l))
            rows.append({"l": float(l), "commutator_L1": fl.lp_norm(comm, 1),
                         "commutator_L2": fl.l2_norm(comm)})
        xs = [r["l"] for r in rows]
        slopes = {k: fl.fit_slope(xs, [r[k] for r in rows])
                  for k in ("commutator_L1", "commutator_L2")}
    elif which == "sigma":
        g = fl.grid(8)
        u = SpectralField.from_function(
            lambda x, y, z: np.array(np.broadcast_arrays(np.sin(2 * np.pi * x), 0 * y, 0 * z)), g)
        for r_ in (1.0, 2.0):
            st = ad.antidiv_scaling_study(u, [int(s) for s in ladder], r=r_)
            for s, v in zip(st.parameter, st.values):
                rows.append({"sigma": s, "r": r_, "antidiv_norm": v})
        slopes = {f"antidiv_L{r_:g}": fl.fit_slope(
            ladder, [row["antidiv_norm"] for row in rows if row["r"] == r_]) for r_ in (1.0, 2.0)}
    else:
        raise ConfigError(f"unknown sweep parameter {which!r}")
    summary = {"sweep": which, "ladder": [_plain(x) for x in ladder], "slopes": slopes}
    if out_path is not None:
        p = Path(out_path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.write(json.dumps(summary, sort_keys=True) + "\n")
    return {"rows": rows, **summary}


def set_threads(jobs: int | None):
    """Cap FFT parallelism (``MIKADO_FORGE_THREADS``) for this process."""
    if jobs:
        os.environ["MIKADO_FORGE_THREADS"] = str(int(jobs))
