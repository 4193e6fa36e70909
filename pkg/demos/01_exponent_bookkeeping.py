"""
Exact exponent bookkeeping
==========================

The iteration is driven by the frequency ladder lambda_n = ceil(a^(b^n)) and
the amplitudes delta_n = lambda_n^(-2 beta).  Every step has to shrink the new
stress, which boils down to five exponent conditions that are affine in 1/r.
Here they are evaluated in exact rational arithmetic.
"""
from fractions import Fraction

from mikado_forge import params

p = params.reference_params()
print("a, b, beta, alpha =", p.a, p.b, p.beta, p.alpha)

# the mollification exponent gamma follows from the ladder
g = params.derive_gamma(p)
print("gamma =", g, "~", float(g))

# the first ladder entries; lambda_2 already has hundreds of digits
for k in range(3):
    e = params.ladder(p, k)
    lam = str(e.lam) if e.digits <= 30 else f"a {e.digits}-digit integer"
    print(f"lambda_{k} = {lam}, delta_{k} = lambda_{k}^({e.delta_exponent})")

# each condition at r -> 1 (the limit is the value at r = 1) and at r = 11/10
for rep in params.check_inequalities(p, Fraction(11, 10)):
    print(f"{rep.name:45s} r->1: {str(rep.value_at_r1):>12s}  "
          f"r=11/10: {float(rep.value_at_r):+.4f}  holds={rep.holds}")
