import numpy as np
import pytest

from mikado_forge import field as fl
from mikado_forge import scheme as sc
from mikado_forge.antidiv import antidiv
from mikado_forge.field import SpectralField
from mikado_forge.geom import DirectionSet, build_decomposition, default_direction_set
from mikado_forge.mikado import build_family

DECOMP = build_decomposition()
DSET = default_direction_set()


def _seed_tuple(n=32, amp=0.3, band=3, seed=1):
    g = fl.grid(n)
    B = sc.random_divergence_free(g, band, amp, np.random.default_rng(seed))
    return sc.solve_compatible(B)


def _scale(t):
    return t.scale()


# residual and pressure


def test_residual_zero_tuple():
    t = sc.ReynoldsTuple.zero(fl.grid(8))
    assert t.residual_norm() == 0.0


def test_residual_mikado_tuple():
    fam = build_family(None, 4, 1, 32)
    W = fam.W(3, rescaled=False)
    t = sc.ReynoldsTuple(W, SpectralField.zeros(W.grid), antidiv(fl.curl(W)))
    assert t.residual_norm() <= 1e-9 * _scale(t)


def test_residual_compatible_random():
    t = _seed_tuple()
    assert t.residual_norm() <= 1e-9 * _scale(t)
    inv = t.invariants()
    assert max(inv.values()) < 1e-12


def test_pressure_constant_field():
    g = fl.grid(8)
    p = sc.solve_pressure(fl.constant_vector(g, [1.0, -2.0, 0.5]))
    assert fl.l2_norm(p) == 0.0


def test_pressure_mikado_vanishes():
    # div P(W (x) W) = 0 exactly, so the divergence-form pressure is zero
    fam = build_family(None, 4, 1, 32)
    W = fam.W(5, rescaled=False)
    assert fl.l2_norm(sc.solve_pressure(W)) <= 1e-12 * fl.l2_norm(fl.dot(W, W))


def test_pressure_gradient_projection():
    g = fl.grid(16)
    B = sc.random_divergence_free(g, 3, 1.0, np.random.default_rng(2))
    p = sc.solve_pressure(B)
    force = sc.nonlinearity(B) + fl.grad(p)
    assert fl.l2_norm(fl.div(force)) <= 1e-10 * fl.l2_norm(fl.div(sc.nonlinearity(B)))
    with pytest.raises(fl.PreconditionError):
        sc.solve_pressure(SpectralField.from_physical(
            np.random.default_rng(0).standard_normal((3, 16, 16, 16)), g))


# mollification


def test_mollify_tuple_keeps_identity():
    t = _seed_tuple()
    for l in (1 / 32, 1 / 8, 1 / 4):
        mt = sc.mollify_tuple(t, l)
        assert mt.residual_norm() <= 1e-9 * _scale(t)
        assert max(mt.invariants().values()) < 1e-12


def test_mollify_ladder_slope():
    t = _seed_tuple()
    ls = [1 / 64, 1 / 32, 1 / 16, 1 / 8]
    diffs = [fl.l2_norm(sc.mollify_tuple(t, l).B - t.B) for l in ls]
    # second order: the mollifier multiplier is 1 - O(l^2 |xi|^2)
    assert fl.fit_slope(ls, diffs) >= 1.8
    grad_b = fl.sobolev_norm(t.B, 1.0, homogeneous=True)
    assert all(d <= l * grad_b for d, l in zip(diffs, ls))


# cutoff


def test_cutoff_zero_stress():
    g = fl.grid(8)
    rho, chi = sc.build_cutoff(SpectralField.zeros(g, 2), 0.3, DECOMP.cutoff_constant)
    assert rho.shape == (8, 8, 8)
    assert np.allclose(rho, DECOMP.cutoff_constant * 0.3, atol=1e-14)


def test_cutoff_branches():
    c0 = DECOMP.cutoff_constant
    chi = sc.make_cutoff(1.0, 0.25, c0)
    x = np.linspace(0, 5, 2001)
    y = chi(x)
    assert np.all(np.diff(y) >= -1e-15)
    flat = x <= 1.0
    assert np.allclose(y[flat], c0 * 1.25, rtol=0, atol=1e-14)
    lin = x >= 2.0
    assert np.allclose(y[lin], c0 * x[lin], rtol=1e-14, atol=1e-14)
    assert chi.linear_from <= 2.0
    assert np.all(y >= c0 * np.maximum(x, 1.25) * (1 - 1e-14))
    # delta >= l1: monotone, flat start, never below c0 * max(x, l1 + delta) / 2
    chi2 = sc.make_cutoff(0.1, 0.5, c0)
    y2 = chi2(x)
    assert np.all(np.diff(y2) >= -1e-15) and np.allclose(y2[x <= 0.6], c0 * 0.6)
    assert np.all(y2 >= 0.5 * c0 * np.maximum(x, 0.6))
    with pytest.raises(ValueError):
        sc.make_cutoff(1.0, 0.0, c0)


def test_cutoff_ratio_on_field():
    t = _seed_tuple()
    R = t.R * 5.0
    rho, chi = sc.build_cutoff(R, 0.05, DECOMP.cutoff_constant)
    mag = sc.pointwise_norm(R)
    assert (mag / rho).max() <= DECOMP.r0
    far = mag >= chi.linear_from
    assert far.any()
    assert np.allclose(rho[far], DECOMP.cutoff_constant * mag[far], rtol=1e-14, atol=0)


# amplitudes and perturbation


def test_amplitudes_zero_stress():
    g = fl.grid(8)
    R = SpectralField.zeros(g, 2)
    rho, _ = sc.build_cutoff(R, 0.3, DECOMP.cutoff_constant)
    amps = sc.build_amplitudes(rho, R, DECOMP, kmax=2)
    for a, c in zip(amps.filtered, DECOMP.c):
        assert np.allclose(a.physical(), np.sqrt(DECOMP.cutoff_constant * 0.3 * c), atol=1e-14)


@pytest.mark.parametrize("factor", [1.0, 4.0])
def test_amplitudes_lemma_identity(factor):
    t = _seed_tuple()
    R = t.R * factor
    rho, _ = sc.build_cutoff(R, 0.1, DECOMP.cutoff_constant)
    amps = sc.build_amplitudes(rho, R, DECOMP, kmax=4)
    assert amps.lemma_residual <= 1e-8


def _family_and_amps(n=32, sigma=2, mu=4, seeded=True):
    fam = build_family(None, mu, sigma, n, resolution_factor=4)
    if seeded:
        t = sc.mollify_tuple(_seed_tuple(n), 1 / 8)
    else:
        t = sc.ReynoldsTuple.zero(fl.grid(n))
    rho, _ = sc.build_cutoff(t.R, 0.5, DECOMP.cutoff_constant)
    amps = sc.build_amplitudes(rho, t.R, DECOMP, kmax=0.5 * sigma)
    return t, fam, amps


def test_perturbation_constant_amplitudes():
    t, fam, amps = _family_and_amps(seeded=False)
    pert = sc.build_perturbation(amps.filtered, fam)
    assert fl.l2_norm(pert.w_c) == 0.0
    assert fl.l2_norm(pert.w - pert.w_p) == 0.0


def test_perturbation_divergence_free():
    t, fam, amps = _family_and_amps()
    pert = sc.build_perturbation(amps.filtered, fam)
    w = pert.w
    assert fl.divergence_defect(w) <= 1e-9 * fl.sobolev_norm(w, 1.0)
    assert sc.potential_identity_defect(amps.filtered, fam, pert) <= 1e-9
    assert 0 < fl.l2_norm(pert.w_c) < fl.l2_norm(pert.w_p)


# new stress


def test_stress_zero_perturbation():
    t, fam, amps = _family_and_amps(seeded=False)
    g = fam.full_grid
    zero_amps = [SpectralField.zeros(g) for _ in amps.filtered]
    pert = sc.build_perturbation(zero_amps, fam)
    parts = sc.build_new_stress(t, pert, zero_amps, fam)
    for name in ("R_osc", "R_F", "R_C", "R_L"):
        assert fl.l2_norm(getattr(parts, name)) == 0.0


def test_stress_single_direction_constant_amplitude():
    single = DirectionSet((DSET.directions[4],), (DSET.base_points[4],))
    fam = build_family(single, 4, 2, 32, resolution_factor=4)
    g = fam.full_grid
    a = SpectralField.from_function(lambda x, y, z: 0.7 + 0 * x, g)
    t = sc.ReynoldsTuple.zero(g)
    pert = sc.build_perturbation([a], fam)
    parts = sc.build_new_stress(t, pert, [a], fam)
    assert fl.l2_norm(parts.R_osc) == 0.0
    assert fl.l2_norm(parts.R_F) <= 1e-14 * fl.l2_norm(pert.w_p) ** 2


def test_stress_closure_and_streaming():
    t, fam, amps = _family_and_amps()
    pert = sc.build_perturbation(amps.filtered, fam)
    full = sc.build_new_stress(t, pert, amps.filtered, fam, keep=True)
    lean = sc.build_new_stress(t, pert, amps.filtered, fam, keep=False)
    assert full.closure_defect <= 1e-8
    total = sum((f for _, f in full.items()), SpectralField.zeros(fam.full_grid, 2))
    assert fl.l2_norm(total - full.total()) <= 1e-14 * fl.l2_norm(total)
    assert fl.l2_norm(lean.total() - full.total()) == 0.0
    assert lean.R_F is None and lean.norms == full.norms
    for _, f in full.items():
        assert fl.l2_norm(f - f.transpose()) <= 1e-14 * (fl.l2_norm(f) + 1e-300)
        assert fl.l2_norm(fl.trace(f)) <= 1e-14 * (fl.l2_norm(f) + 1e-300)


# step


@pytest.fixture(scope="module")
def small_step():
    g = fl.grid(64)
    fam = build_family(None, 4, 2, 64)
    sp = sc.StepParams(sigma=2, mu=4, ell=1 / 8, delta=64 ** -0.008)
    new, rep = sc.step(sc.ReynoldsTuple.zero(g), sp, DECOMP, fam)
    return new, rep, fam, sp


def test_step_from_zero(small_step):
    new, rep, _, _ = small_step
    assert fl.l2_norm(new.B) > 0
    assert rep.residuals["output_relative"] <= 1e-7
    assert new.residual_norm() <= new.residual_tol * new.scale()
    assert rep.checks["div_w"] <= 1e-9
    assert rep.checks["reducing_stress_identity"] <= 1e-8
    assert rep.checks["closure"] <= 1e-8
    assert rep.all_finite()
    assert set(rep.components) == {"R_osc", "R_F", "R_E", "R_C", "R_L", "R_disc"}


def test_step_weak_form(small_step):
    new = small_step[0]
    recs = sc.weak_form_pairings(new, 10, np.random.default_rng(0))
    assert len(recs) == 10 and max(r["normalized"] for r in recs) <= 1e-7


def test_pressure_constant_invariance(small_step):
    new = small_step[0]
    assert abs(float(new.p.mean())) < 1e-15
    shifted = sc.ReynoldsTuple(new.B, new.p + SpectralField.from_function(
        lambda x, y, z: 3.0 + 0 * x, new.grid), new.R)
    assert fl.l2_norm(shifted.residual() - new.residual()) == 0.0


def test_step_rejects_uncertified_input(small_step):
    _, _, fam, sp = small_step
    g = fam.full_grid
    B = sc.random_divergence_free(g, 2, 1.0, np.random.default_rng(4))
    bad = sc.ReynoldsTuple(B, SpectralField.zeros(g), SpectralField.zeros(g, 2))
    with pytest.raises(sc.StageError) as err:
        sc.step(bad, sp, DECOMP, fam)
    assert err.value.stage == "input"
    with pytest.raises(sc.StageError) as err:
        sc.step(sc.ReynoldsTuple.zero(g), sc.StepParams(4, 4, 0.125, 0.9), DECOMP, fam)
    assert err.value.stage == "setup"


def test_step_from_perturbed_seed():
    t = _seed_tuple(64)
    fam = build_family(None, 4, 2, 64)
    sp = sc.StepParams(sigma=2, mu=4, ell=1 / 8, delta=64 ** -0.008)
    new, rep = sc.step(t, sp, DECOMP, fam, check=False)
    assert rep.residuals["output_relative"] <= 1e-7
    assert rep.checks["cutoff_ratio_max"] <= DECOMP.r0
    assert rep.components["R_osc"]["L1"] > 0


@pytest.mark.slow
def test_step_trend_in_mu():
    # reduced resolution factor so that mu = 16 fits at sigma = 2
    vals = []
    for mu in (4, 8, 16):
        n = 3 * 2 * mu
        fam = build_family(None, mu, 2, n, resolution_factor=3)
        sp = sc.StepParams(sigma=2, mu=mu, ell=1 / 8, delta=64 ** -0.008)
        new, rep = sc.step(sc.ReynoldsTuple.zero(fl.grid(n)), sp, DECOMP, fam, check=False)
        vals.append(rep.norms_after["R_L1"])
    assert vals[0] > vals[1] > vals[2]


# tuple I/O


def test_tuple_roundtrip(tmp_path):
    t = _seed_tuple(16)
    sc.write_tuple(t, tmp_path / "tup", extra={"note": "seed"})
    back = sc.read_tuple(tmp_path / "tup")
    for a, b in ((t.B, back.B), (t.p, back.p), (t.R, back.R)):
        assert np.array_equal(a.coeffs, b.coeffs)
    assert back.residual_tol == t.residual_tol
    manifest = (tmp_path / "tup" / "manifest.json").read_text()
    assert '"note": "seed"' in manifest
