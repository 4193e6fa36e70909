"""Antidivergence operators as Fourier multipliers.

``antidiv`` maps a vector field ``v`` to the symmetric traceless tensor

    (R v)_ij = -1/2 D^-2 d_i d_j d_k v_k - 1/2 D^-1 d_k v_k delta_ij
               + D^-1 d_i v_j + D^-1 d_j v_i

(``D`` the Laplacian, zero mode removed), so that ``div R v = v - mean(v)``.
``bilinear_antidiv`` gains a factor of the oscillation frequency when its
second argument oscillates fast.
"""
from __future__ import annotations

import numpy as np

from . import field as fl
from .field import ScalingStudy, SpectralField, fit_slope

DIM = 3
# coefficients of D^-2 ddd and D^-1 d_k delta_ij for d = 3
C_TRIPLE = (2.0 - DIM) / (DIM - 1)
C_TRACE = -1.0 / (DIM - 1)


def antidiv(v: SpectralField) -> SpectralField:
    """Symmetric traceless ``R v`` with ``div R v = v - mean(v)``."""
    if v.rank != 1:
        raise ValueError("antidiv needs a vector field")
    g = v.grid
    ik = g.ik
    inv = g.inv_k2                      # symbol of D^-1
    dv = sum(ik[k] * v.coeffs[k] for k in range(3))
    triple = C_TRIPLE * inv * inv * dv
    out = np.empty((3, 3) + g.spectral_shape, dtype=complex)
    for i in range(3):
        for j in range(i, 3):
            c = triple * ik[i] * ik[j] + inv * (ik[i] * v.coeffs[j] + ik[j] * v.coeffs[i])
            if i == j:
                c = c + C_TRACE * inv * dv
            out[i, j] = c
            if i != j:
                out[j, i] = c
    out[..., 0, 0, 0] = 0.0
    return SpectralField(g, out, frozenset({"symmetric", "traceless", "zero_mean"}))


def antidiv_scaling_study(u: SpectralField, sigma_list, r: float = 2.0,
                          target: fl.Grid3 | None = None) -> ScalingStudy:
    """``||R(u(sigma .))||_{L^r}`` for integer ``sigma``; ``u`` must have zero mean.

    Each rescaled copy lives on the grid of size ``sigma * u.n`` unless a
    common ``target`` grid is given.
    """
    sigma_list = [int(s) for s in sigma_list]
    if len(sigma_list) < 3:
        raise ValueError("scaling studies need at least three ladder points")
    scale = fl.l2_norm(u)
    if np.max(np.abs(u.mean())) > 1e-12 * max(scale, 1e-300):
        raise fl.PreconditionError(f"antidiv scaling study needs zero-mean u, mean = {u.mean()}")
    values = []
    for s in sigma_list:
        tgt = target or fl.grid(s * u.n)
        us = fl._dilate_to(u, s, tgt)
        values.append(fl.lp_norm(antidiv(us), r))
    floor = 1e-14 * max(scale, 1e-300)
    return ScalingStudy(sigma_list, values, fit_slope(sigma_list, values, floor),
                        f"antidiv r={r}")


def _row(H: SpectralField, l: int) -> SpectralField:
    return SpectralField(H.grid, H.coeffs[l])


def _bilinear_from_rows(u: SpectralField, rows: list[SpectralField]) -> SpectralField:
    """``T1 - R(V)`` with ``T1 = u_l R(H_l.)`` and ``V_i = d_j u_l R(H_l.)_ij``.

    Both sums over ``l`` are accumulated on the oversampled grid and
    projected once; the projection is linear, so this equals the sum of the
    projected products.
    """
    g = u.grid
    du = fl.grad(u)                      # du_{lj} = d_j u_l
    pairs = [(i, j) for i in range(3) for j in range(i, 3)]
    t1 = {ij: 0.0 for ij in pairs}
    vv = [0.0, 0.0, 0.0]
    for l, rh in enumerate(rows):
        ul = fl._oversample(u.coeffs[l], g)
        dul = [fl._oversample(du.coeffs[l, j], g) for j in range(3)]
        for i, j in pairs:
            r = fl._oversample(rh.coeffs[i, j], g)
            t1[i, j] = t1[i, j] + ul * r
            vv[i] = vv[i] + r * dul[j]
            if i != j:
                vv[j] = vv[j] + r * dul[i]
        del ul, dul
    out = np.empty((3, 3) + g.spectral_shape, dtype=complex)
    for i, j in pairs:
        out[i, j] = fl._from_oversampled(t1[i, j], g)
        out[j, i] = out[i, j]
    V = SpectralField(g, np.stack([fl._from_oversampled(v, g) for v in vv]))
    return SpectralField(g, out) - antidiv(V)


def bilinear_antidiv(u: SpectralField, H: SpectralField) -> SpectralField:
    """``T(u, H)`` with ``div T(u, H) = u_l H_li - mean(u_l H_li)`` for zero-mean ``H``.

    The inner antidivergence acts on each row ``H_l.`` (contracting the second
    index of ``H``); the mean of ``H`` is discarded.
    """
    fl._same_grid(u, H)
    if u.rank != 1 or H.rank != 2:
        raise ValueError("bilinear_antidiv needs a vector and a rank-2 tensor")
    rows = [antidiv(_row(H, l)) for l in range(3)]
    return _bilinear_from_rows(u, rows)


def bilinear_antidiv_rank_one(u: SpectralField, g: SpectralField, e) -> SpectralField:
    """``T(u, g e (x) e)`` for a scalar ``g`` and a unit vector ``e``.

    Uses ``R((g e e)_l.) = e_l R(g e)``, so only one antidivergence and a
    scalar weight ``u . e`` are needed.
    """
    fl._same_grid(u, g)
    e = np.asarray(e, dtype=float)
    G = u.grid
    ge = SpectralField(G, e.reshape(3, 1, 1, 1) * g.coeffs[None])
    rg = antidiv(ge)
    w = SpectralField(G, np.tensordot(e, u.coeffs, axes=(0, 0)))
    t1 = fl.product(w, rg, ",ij->ij", symmetric_output=True)
    V = fl.product(rg, fl.grad(w), "ij,j->i")
    return t1 - antidiv(V)
