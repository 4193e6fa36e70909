"""
One iteration step
==================

Starting from the trivial tuple (B, p, R) = (0, 0, 0), one step adds nine
Mikado pipes with amplitudes sized by the geometric lemma.  The result is a
new tuple that solves the stationary system with a new Reynolds stress, up
to round-off.  The stress is split into its parts to show where it comes
from.
"""
import numpy as np

from mikado_forge import field as fl
from mikado_forge import geom, mikado, scheme

n, sigma, mu = 64, 2, 4
fam = mikado.build_family(None, mu, sigma, n)
sp = scheme.StepParams(sigma=sigma, mu=mu, ell=1 / 8, delta=(sigma * mu) ** -0.008)
new, rep = scheme.step(scheme.ReynoldsTuple.zero(fl.grid(n)), sp, geom.build_decomposition(), fam)

print("|B|_L2 =", rep.norms_after["B_L2"], " |R|_L1 =", rep.norms_after["R_L1"])
print("relative residual of the new tuple:", rep.residuals["output_relative"])
print("div w:", rep.checks["div_w"], " lemma identity:", rep.checks["reducing_stress_identity"])
for name, norms in rep.components.items():
    print(f"  {name:7s} L1 = {norms['L1']:.3e}")

# the new tuple is a weak solution against divergence-free test fields
pairs = scheme.weak_form_pairings(new, 5, np.random.default_rng(0))
print("largest normalized weak-form pairing:", max(x["normalized"] for x in pairs))
