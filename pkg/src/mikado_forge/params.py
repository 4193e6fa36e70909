"""Exact-rational parameter bookkeeping for the iteration.

Everything here is :class:`fractions.Fraction` or :class:`int`; no floats
enter a sign decision.  Floats appear only as a convenience field in the
JSON rendering of a report.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

REFERENCE_A = Fraction(5)
REFERENCE_B = 32
REFERENCE_BETA = Fraction(1, 250)
REFERENCE_ALPHA = Fraction(16, 25)

DEFAULT_R = Fraction(1) + Fraction(1, 1024)
DEFAULT_DIGIT_CAP = 10_000


class DomainError(ValueError):
    """An argument lies outside the admissible domain."""


def as_fraction(value) -> Fraction:
    if isinstance(value, float):
        raise TypeError("floats are not accepted; pass an int, Fraction or 'p/q' string")
    return Fraction(value)


@dataclass(frozen=True)
class Surrogate:
    """Desk-scale replacement for the analytic ladder.

    ``sigma * mu`` must equal ``lambda_np1``; ``ell_inv`` is the inverse
    mollification length.
    """

    lambda_n: int
    lambda_np1: int
    sigma: int
    mu: int
    ell_inv: Fraction

    def __post_init__(self):
        for name in ("lambda_n", "lambda_np1", "sigma", "mu"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DomainError(f"{name} must be a positive integer, got {v}")
        object.__setattr__(self, "ell_inv", as_fraction(self.ell_inv))
        if self.sigma * self.mu != self.lambda_np1:
            raise DomainError(
                f"sigma * mu = {self.sigma * self.mu} must equal lambda_np1 = {self.lambda_np1}"
            )
        if self.ell_inv < 4:
            raise DomainError("mollification length 1/ell_inv must be at most 1/4")

    @property
    def ell(self) -> Fraction:
        return 1 / self.ell_inv

    def check_resolution(self, n: int) -> None:
        """``sigma`` and ``mu`` must both divide the grid size ``n``."""
        for name in ("sigma", "mu"):
            if n % getattr(self, name):
                raise DomainError(f"{name}={getattr(self, name)} does not divide grid size {n}")


@dataclass(frozen=True)
class IterationParams:
    a: Fraction = REFERENCE_A
    b: int = REFERENCE_B
    beta: Fraction = REFERENCE_BETA
    alpha: Fraction = REFERENCE_ALPHA
    n: int = 1
    surrogate: Surrogate | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", as_fraction(self.a))
        object.__setattr__(self, "beta", as_fraction(self.beta))
        object.__setattr__(self, "alpha", as_fraction(self.alpha))
        if self.a <= 1:
            raise DomainError("a must exceed 1")
        if int(self.b) != self.b or self.b <= 1:
            raise DomainError("b must be an integer greater than 1")
        if not 0 <= self.beta < 1:
            raise DomainError("beta must lie in [0, 1)")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if self.n < 0:
            raise DomainError("stage must be non-negative")

    @property
    def gamma(self) -> Fraction:
        return derive_gamma(self)

    def with_surrogate(self, **kwargs) -> "IterationParams":
        return replace(self, surrogate=Surrogate(**kwargs))

    def delta_np1(self) -> float:
        """``delta_{n+1} = lambda_{n+1}^(-2 beta)`` as a float; surrogate mode only."""
        if self.surrogate is None:
            raise DomainError("delta_{n+1} at reference parameters is kept symbolic; use ladder()")
        return float(self.surrogate.lambda_np1) ** (-2.0 * float(self.beta))

    def delta_n(self) -> float:
        if self.surrogate is None:
            raise DomainError("delta_n at reference parameters is kept symbolic; use ladder()")
        return float(self.surrogate.lambda_n) ** (-2.0 * float(self.beta))


def reference_params(n: int = 1) -> IterationParams:
    return IterationParams(n=n)


@dataclass(frozen=True)
class LadderEntry:
    """``lambda_k = ceil(a^(b^k))`` and ``delta_k = lambda_k^(delta_exponent)``.

    ``lam`` is ``None`` when the integer would exceed the digit cap; the
    value is then carried by ``(a, power)`` only.
    """

    k: int
    a: Fraction
    power: int
    lam: int | None
    delta_exponent: Fraction
    digits: int

    @property
    def symbolic(self) -> bool:
        return self.lam is None

    def __str__(self):
        base = str(self.lam) if self.lam is not None else f"ceil({self.a}^{self.power})"
        return f"lambda_{self.k} = {base}, delta_{self.k} = ({base})^({self.delta_exponent})"


def _ceil_power(a: Fraction, e: int) -> int:
    num, den = a.numerator**e, a.denominator**e
    return -(-num // den)


def ladder(params: IterationParams, k: int, digit_cap: int = DEFAULT_DIGIT_CAP) -> LadderEntry:
    if k < 0:
        raise DomainError("ladder index must be non-negative")
    power = params.b**k
    digits = math.floor(power * math.log10(float(params.a))) + 1
    lam = _ceil_power(params.a, power) if digits <= digit_cap else None
    return LadderEntry(k, params.a, power, lam, -2 * params.beta, digits)


def derive_gamma(params: IterationParams) -> Fraction:
    """Mollification exponent ``(1 - beta)/b + beta``."""
    return (1 - params.beta) / params.b + params.beta


@dataclass(frozen=True)
class InequalityReport:
    name: str
    value_at_r1: Fraction
    value_at_r: Fraction
    r: Fraction
    margin_fn: Callable[[Fraction], Fraction] = field(repr=False, compare=False)
    allow_equality: bool = False

    @property
    def holds(self) -> bool:
        return self.value_at_r1 <= 0 if self.allow_equality else self.value_at_r1 < 0

    def as_json(self) -> str:
        v = self.value_at_r1
        return json.dumps({
            "name": self.name,
            "value_exact": f"{v.numerator}/{v.denominator}",
            "value_float": float(v),
            "holds": self.holds,
        })


def _expressions(p: IterationParams):
    b, beta, alpha = p.b, p.beta, p.alpha
    g = derive_gamma(p)
    return [
        ("perturbation_l2 (sigma^-1/2 l^-9 <~ 1)", lambda r: -alpha / 2 + 9 * g, True),
        ("linear_error R_L",
         lambda r: 2 * beta * b + 2 * (1 - beta) / b + (1 - alpha) * (1 - 2 / r), False),
        ("corrector_error R_C",
         lambda r: 2 * beta * (b - 1) + 9 * g - 1 + 3 * (1 - 1 / r), False),
        ("oscillation_error R_osc",
         lambda r: 2 * beta * (b - 1) + 10 * g - alpha + 2 * (1 - alpha) * (1 - 1 / r), False),
        ("interference_error R_F",
         lambda r: 2 * beta * (b - 1) + 9 * g - alpha + (1 - alpha) * (2 - 3 / r), False),
    ]


def check_inequalities(params: IterationParams, r=DEFAULT_R) -> list[InequalityReport]:
    """Evaluate the five exponent conditions exactly at ``r`` and at ``r -> 1``.

    Every expression is affine in ``1/r``, so the limit is the value at 1.
    """
    r = as_fraction(r)
    if not 1 < r < 2:
        raise DomainError(f"r must lie in (1, 2), got {r}")
    return [
        InequalityReport(name, fn(Fraction(1)), fn(r), r, fn, allow_eq)
        for name, fn, allow_eq in _expressions(params)
    ]


def params_check_lines(params: IterationParams | None = None, r=DEFAULT_R) -> list[str]:
    """JSON lines emitted by the ``params-check`` command."""
    params = params or reference_params()
    g = derive_gamma(params)
    lines = [json.dumps({"name": "gamma", "value_exact": f"{g.numerator}/{g.denominator}",
                         "value_float": float(g), "holds": True})]
    lines += [rep.as_json() for rep in check_inequalities(params, r)]
    return lines
