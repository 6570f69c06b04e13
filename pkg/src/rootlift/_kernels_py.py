"""Pure numpy implementation of the batched root-translation kernels.

Both this module and the compiled ``_dgpcore`` extension expose the same two
functions and follow the same arithmetic, so results agree to rounding.

Arrays are batched over scenes: ``rays`` and ``rhs`` have shape (B, N, 2),
``w`` has shape (B, N). ``rhs[b, i]`` holds the two right-hand-side entries of
keypoint ``i``, i.e. ``(x - z*u', y - z*v')``.
"""

import numpy as np


def _normal_terms(rays, w):
    w2 = w * w
    a = rays[..., 0]
    b = rays[..., 1]
    s = w2.sum(axis=1)
    sa = (w2 * a).sum(axis=1)
    sb = (w2 * b).sum(axis=1)
    saa = (w2 * (a * a + b * b)).sum(axis=1)
    return w2, a, b, s, sa, sb, saa


def _factor(s, sa, sb, saa, npos, cond_max):
    # Cholesky of [[s, 0, -sa], [0, s, -sb], [-sa, -sb, saa]], closed form.
    with np.errstate(divide="ignore", invalid="ignore"):
        l00 = np.sqrt(s)
        l20 = -sa / l00
        l21 = -sb / l00
        n2 = sa * sa + sb * sb
        l22sq = saa - n2 / s
        l22 = np.sqrt(l22sq)
        # eigenvalues: s, and the pair of [[s, -n], [-n, saa]]
        half = 0.5 * (s + saa)
        lam_hi = half + np.sqrt((0.5 * (s - saa)) ** 2 + n2)
        lam_lo = s * l22sq / lam_hi
        cond = lam_hi / lam_lo
    ok = (npos >= 2) & (s > 0) & (l22sq > 0) & np.isfinite(cond) & (cond <= cond_max)
    cond = np.where(ok, cond, np.inf)
    return ok, cond, l00, l20, l21, l22


def _chol_solve(l00, l20, l21, l22, h0, h1, h2):
    # L is lower triangular with L10 = 0 and L11 = L00.
    y0 = h0 / l00
    y1 = h1 / l00
    y2 = (h2 - l20 * y0 - l21 * y1) / l22
    x2 = y2 / l22
    x1 = (y1 - l21 * x2) / l00
    x0 = (y0 - l20 * x2) / l00
    return x0, x1, x2


def solve_batch(rays, rhs, w, cond_max):
    """Weighted least-squares translation for every scene of a batch.

    Returns ``(t, cond, resid, ok)``. Rows with ``ok == False`` are degenerate
    and carry NaN translations.
    """
    rays = np.ascontiguousarray(rays, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    w2, a, b, s, sa, sb, saa = _normal_terms(rays, w)
    b0 = rhs[..., 0]
    b1 = rhs[..., 1]
    h0 = -(w2 * b0).sum(axis=1)
    h1 = -(w2 * b1).sum(axis=1)
    h2 = (w2 * (a * b0 + b * b1)).sum(axis=1)
    npos = (w > 0).sum(axis=1)
    ok, cond, l00, l20, l21, l22 = _factor(s, sa, sb, saa, npos, cond_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0, t1, t2 = _chol_solve(l00, l20, l21, l22, h0, h1, h2)
    t = np.stack([t0, t1, t2], axis=1)
    t[~ok] = np.nan
    e0 = b0 + t[:, None, 0] - a * t[:, None, 2]
    e1 = b1 + t[:, None, 1] - b * t[:, None, 2]
    resid = np.sqrt((w2 * (e0 * e0 + e1 * e1)).sum(axis=1))
    resid[~ok] = np.nan
    return t, cond, resid, ok


def vjp_batch(rays, rhs, w, t, g, cond_max):
    """Reverse-mode gradients of ``g . t*`` for a batch.

    Returns ``(d_rays, d_rhs, d_w)``; degenerate scenes get zero gradients.
    """
    rays = np.ascontiguousarray(rays, dtype=np.float64)
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    w2, a, b, s, sa, sb, saa = _normal_terms(rays, w)
    npos = (w > 0).sum(axis=1)
    ok, _, l00, l20, l21, l22 = _factor(s, sa, sb, saa, npos, cond_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        q0, q1, q2 = _chol_solve(l00, l20, l21, l22, g[:, 0], g[:, 1], g[:, 2])
    tt = np.where(ok[:, None], t, 0.0)
    q0 = np.where(ok, q0, 0.0)[:, None]
    q1 = np.where(ok, q1, 0.0)[:, None]
    q2 = np.where(ok, q2, 0.0)[:, None]
    t0 = tt[:, None, 0]
    t1 = tt[:, None, 1]
    t2 = tt[:, None, 2]
    p0 = -q0 + a * q2
    p1 = -q1 + b * q2
    e0 = rhs[..., 0] + t0 - a * t2
    e1 = rhs[..., 1] + t1 - b * t2
    d_rhs = np.stack([w2 * p0, w2 * p1], axis=-1)
    d_rays = np.stack([w2 * (e0 * q2 - p0 * t2), w2 * (e1 * q2 - p1 * t2)], axis=-1)
    d_w = 2.0 * w * (p0 * e0 + p1 * e1)
    return d_rays, d_rhs, d_w
