"""Numerical convex-integration toolkit for the stationary EMHD-Reynolds system.

Modules, bottom up: :mod:`params` (exact exponent bookkeeping), :mod:`field`
(spectral fields on the 3-torus), :mod:`geom` (rank-one decomposition near
the identity), :mod:`mikado` (pipe flows), :mod:`antidiv` (inverse
divergence operators), :mod:`scheme` (one iteration step) and
:mod:`harness` (configuration, verification suites, diagnostics).
"""

__version__ = "0.1.0"
