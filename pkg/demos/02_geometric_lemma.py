"""
Rank-one weights near the identity
==================================

Nine lattice directions are enough to write every symmetric matrix close to
the identity as a positive combination of e_k (x) e_k.  The weights are
affine in the matrix, so the certified radius r0 is the largest ball on
which all of them stay positive.
"""
import numpy as np

from mikado_forge import geom

d = geom.build_decomposition()
print("directions:", d.directions.directions)
print("weights of Id:", np.round(d.c, 6))
print("certified radius r0 =", d.r0, " cutoff constant c0 =", d.cutoff_constant)

# random symmetric matrices on the sphere of radius 0.9 r0 around Id
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(1000):
    a = rng.standard_normal((3, 3))
    s = a + a.T
    m = np.eye(3) + 0.9 * d.r0 * s / np.linalg.norm(s)
    w = geom.gamma(d, m) ** 2
    worst = max(worst, np.abs(d.reconstruct(w) - m).max())
print("worst reconstruction error over 1000 samples:", worst)

# outside the ball the decomposition refuses to answer
try:
    geom.gamma(d, 2 * np.eye(3))
except geom.BallDomainError as err:
    print("2 Id:", err)
