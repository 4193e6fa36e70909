"""
Mikado pipes
============

A Mikado flow W_k = phi_k e_k is a stationary, pressureless Euler flow that
lives on a thin periodic pipe around a line in direction k.  Its potential
Omega_k is skew, so W_k is exactly a divergence.  As the concentration mu
grows, the L^p norms scale like mu^(1 - 2/p).
"""
import numpy as np

from mikado_forge import mikado

fam = mikado.build_family(None, mu=8, sigma=1, n=64)
for k in (0, 3, 4):
    chk = fam.check_direction(k)
    print(chk["direction"], "div Omega - W:", f"{chk['div_omega_minus_w']:.2e}",
          " mean W(x)W - e(x)e:", f"{chk['ww_mean_error']:.2e}",
          " div(W(x)W):", f"{chk['div_ww']:.2e}")

# tiling: W(sigma x) on the fine grid is the base pattern repeated
tiled = mikado.build_family(None, mu=8, sigma=2, n=128)
a = tiled.W(0).physical()
print("period 1/2 repeats exactly:", np.abs(a - np.roll(a, 64, axis=1)).max())

# L^p scaling of one direction along mu
for st in mikado.scaling_study(None, [4, 8, 16], [1, 2, 4], indices=[4]):
    print(f"{st.label:22s} slope {st.slope:+.3f}")
