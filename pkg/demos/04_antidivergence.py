"""
Inverting the divergence
========================

The antidivergence R returns a symmetric traceless tensor whose divergence
is the mean-free part of a vector field.  Applied to a pattern oscillating
at frequency sigma it gains a factor 1/sigma, which is what makes the
oscillation error small.
"""
import numpy as np

from mikado_forge import antidiv as ad
from mikado_forge import field as fl
from mikado_forge.field import SpectralField

g = fl.grid(32)
rng = np.random.default_rng(1)
v = fl.lowpass(SpectralField.from_physical(rng.standard_normal((3, 32, 32, 32)), g), 8)
Rv = ad.antidiv(v)
print("div R v - (v - mean v):", fl.l2_norm(fl.div(Rv) - v.without_mean()) / fl.l2_norm(v))
print("trace:", fl.l2_norm(fl.trace(Rv)), " skew part:", fl.l2_norm(Rv - Rv.transpose()))

# a slow vector against a fast pipe-like weight h e(x)e with e = (1, 0, 0)
u = fl.lowpass(SpectralField.from_physical(rng.standard_normal((3, 32, 32, 32)), g), 2)
h = SpectralField.from_function(lambda x, y, z: np.cos(2 * np.pi * 8 * y), g)
T = ad.bilinear_antidiv_rank_one(u, h, (1.0, 0.0, 0.0))
zero = SpectralField.zeros(g)
uh = fl.stack([fl.product(u.component(0), h), zero, zero])
print("div T(u, h e(x)e) - (u.e h e - mean):",
      fl.l2_norm(fl.div(T) - uh.without_mean()) / fl.l2_norm(uh))
print("|T| / |u.e h e| =", fl.l2_norm(T) / fl.l2_norm(uh), "(h oscillates at frequency 8)")

u1 = SpectralField.from_function(
    lambda x, y, z: np.array(np.broadcast_arrays(np.sin(2 * np.pi * x), 0 * y, 0 * z)), fl.grid(8))
for r in (1.0, 2.0):
    st = ad.antidiv_scaling_study(u1, [2, 4, 8, 16], r=r)
    print(f"|R(u(sigma .))|_L{r:g} along sigma:", np.round(st.values, 5), f"slope {st.slope:+.3f}")
