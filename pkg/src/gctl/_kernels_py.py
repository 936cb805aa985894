"""Pure numpy implementations of the hot stepping kernels.

The compiled extension `gctl._kernels` exposes the same functions with the
same semantics (including tie-breaking: the first index attaining a max or
min wins).  `gctl._backend` picks whichever is available at import time;
`gctl bench` times them against each other.

Conventions shared by both backends:
  * second differences are central, one-sided on boundary rows;
  * first-order terms are upwinded per (control, vertex) by the sign of the
    assembled drift;
  * 2-D cross derivatives use the sign-adapted seven-point stencils, which
    stay monotone for diagonally dominant vertices; boundary rows copy the
    nearest interior cross value;
  * quadrature displacements are clamped to the domain and the worst
    overshoot distance is returned for the caller's escape check.
"""

import numpy as np

from .grids import _axis_locate

BACKEND = "python"


def _d2_last(u, h):
    """Second difference along the last axis, one-sided at the edges."""
    d2 = np.empty_like(u)
    d2[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / (h * h)
    d2[..., 0] = (u[..., 2] - 2.0 * u[..., 1] + u[..., 0]) / (h * h)
    d2[..., -1] = (u[..., -1] - 2.0 * u[..., -2] + u[..., -3]) / (h * h)
    return d2


def _d1_upwind_parts(u, h):
    """Forward and backward differences along the last axis.

    The missing one-sided neighbor at each end falls back to the available
    difference (boundary rows are outside the reporting region).
    """
    fwd = np.empty_like(u)
    bwd = np.empty_like(u)
    fwd[..., :-1] = (u[..., 1:] - u[..., :-1]) / h
    fwd[..., -1] = (u[..., -1] - u[..., -2]) / h
    bwd[..., 1:] = (u[..., 1:] - u[..., :-1]) / h
    bwd[..., 0] = (u[..., 1] - u[..., 0]) / h
    return fwd, bwd


def _cross_pair(u, h1, h2):
    """Sign-adapted cross-derivative stencils (P for a12>=0, N otherwise)."""
    P = np.zeros_like(u)
    N = np.zeros_like(u)
    c = u[1:-1, 1:-1]
    pp = u[2:, 2:]
    mm = u[:-2, :-2]
    pm = u[2:, :-2]
    mp = u[:-2, 2:]
    p0 = u[2:, 1:-1]
    m0 = u[:-2, 1:-1]
    zp = u[1:-1, 2:]
    zm = u[1:-1, :-2]
    axis_sum = p0 + m0 + zp + zm
    P[1:-1, 1:-1] = (2.0 * c + pp + mm - axis_sum) / (2.0 * h1 * h2)
    N[1:-1, 1:-1] = -(2.0 * c + pm + mp - axis_sum) / (2.0 * h1 * h2)
    for A in (P, N):
        A[0, :] = A[1, :]
        A[-1, :] = A[-2, :]
        A[:, 0] = A[:, 1]
        A[:, -1] = A[:, -2]
    return P, N


def gheat_step_1d(u, h, dt, gam_min, gam_max, out):
    """One explicit step of u_t = G(u_xx) on batched rows (R, nx)."""
    d2 = _d2_last(u, h)
    g = 0.5 * np.where(d2 >= 0.0, gam_max * d2, gam_min * d2)
    np.add(u, dt * g, out=out)


def gheat_step_2d(u, h1, h2, dt, g11, g12, g22, out):
    """One explicit step of u_t = G(D^2 u) in two dimensions."""
    d11 = _d2_last(u.T, h1).T
    d22 = _d2_last(u, h2)
    P, N = _cross_pair(u, h1, h2)
    best = None
    for j in range(len(g11)):
        cross = g12[j] * (P if g12[j] >= 0.0 else N)
        L = 0.5 * (g11[j] * d11 + g22[j] * d22) + cross
        best = L if best is None else np.maximum(best, L)
    np.add(u, dt * best, out=out)


def hjb_step_1d(v, h, dt, a, beff, c, out):
    """One explicit backward step V <- V + dt * min_k max_j L_{kj}(V)."""
    d2 = _d2_last(v, h)
    fwd, bwd = _d1_upwind_parts(v, h)
    L = (
        0.5 * a * d2
        + np.maximum(beff, 0.0) * fwd
        + np.minimum(beff, 0.0) * bwd
        + c
    )
    np.add(v, dt * L.max(axis=1).min(axis=0), out=out)


def hjb_step_2d(v, h1, h2, dt, a11, a12, a22, b1, b2, c, out):
    d11 = _d2_last(v.T, h1).T
    d22 = _d2_last(v, h2)
    P, N = _cross_pair(v, h1, h2)
    f1, w1 = _d1_upwind_parts(v.T, h1)
    f1, w1 = f1.T, w1.T
    f2, w2 = _d1_upwind_parts(v, h2)
    L = (
        0.5 * (a11 * d11 + a22 * d22)
        + a12 * np.where(a12 >= 0.0, P, N)
        + np.maximum(b1, 0.0) * f1
        + np.minimum(b1, 0.0) * w1
        + np.maximum(b2, 0.0) * f2
        + np.minimum(b2, 0.0) * w2
        + c
    )
    np.add(v, dt * L.max(axis=1).min(axis=0), out=out)


def _reduce_min_max(vals):
    """(K, J, N) -> value, control index, vertex index; first index wins ties."""
    gidx = np.argmax(vals, axis=1)
    gbest = np.take_along_axis(vals, gidx[:, None, :], axis=1)[:, 0, :]
    vidx = np.argmin(gbest, axis=0)
    vbest = np.take_along_axis(gbest, vidx[None, :], axis=0)[0]
    out_g = np.take_along_axis(gidx, vidx[None, :], axis=0)[0]
    return vbest, vidx.astype(np.int32), out_g.astype(np.int32)


def dpp_step_1d(vnext, x_lo, h, dt, mu, M, rc, Z, w, cubic, out_v, out_iv, out_ig):
    """One backward Bellman step on a 1-D state grid.

    vnext: (nx,) next-layer values; mu: (K, J, nx) drift rate; M: (K, J, nx, d)
    diffusion load; rc: (K, J, nx) running-cost rate; Z: (Q, d) quadrature
    abscissae; w: (Q,) weights.  Returns the worst query overshoot (distance
    beyond the domain) so the caller can enforce its escape margin.
    """
    K, J, nx = mu.shape
    method = "cubic" if cubic else "linear"
    sq = np.sqrt(dt)
    xs = x_lo + h * np.arange(nx)
    disp = np.einsum("kjxd,qd->kjqx", M, Z)
    q = xs[None, None, None, :] + mu[:, :, None, :] * dt + sq * disp
    idx, wts, over = _axis_locate(q.ravel(), x_lo, h, nx, method)
    vals = wts[0] * vnext[idx[0]]
    for ik, wk in zip(idx[1:], wts[1:]):
        vals = vals + wk * vnext[ik]
    vals = vals.reshape(K, J, len(w), nx)
    expv = np.einsum("q,kjqx->kjx", w, vals) + rc * dt
    vbest, vidx, gidx = _reduce_min_max(expv)
    out_v[:] = vbest
    out_iv[:] = vidx
    out_ig[:] = gidx
    return over


def dpp_step_2d(
    vnext, lo1, lo2, h1, h2, dt, mu, M, rc, Z, w, cubic, out_v, out_iv, out_ig
):
    """One backward Bellman step on a 2-D state grid.

    mu: (K, J, n1, n2, 2); M: (K, J, n1, n2, 2, d); rc: (K, J, n1, n2).
    """
    K, J, n1, n2 = rc.shape
    method = "cubic" if cubic else "linear"
    sq = np.sqrt(dt)
    ax1 = lo1 + h1 * np.arange(n1)
    ax2 = lo2 + h2 * np.arange(n2)
    X1, X2 = np.meshgrid(ax1, ax2, indexing="ij")
    disp = np.einsum("kjxyad,qd->kjqxya", M, Z)
    q1 = X1[None, None, None] + mu[:, :, None, ..., 0] * dt + sq * disp[..., 0]
    q2 = X2[None, None, None] + mu[:, :, None, ..., 1] * dt + sq * disp[..., 1]
    i1, w1, over1 = _axis_locate(q1.ravel(), lo1, h1, n1, method)
    i2, w2, over2 = _axis_locate(q2.ravel(), lo2, h2, n2, method)
    vals = 0.0
    for ia, wa in zip(i1, w1):
        row = 0.0
        for ib, wb in zip(i2, w2):
            row = row + wb * vnext[ia, ib]
        vals = vals + wa * row
    vals = vals.reshape(K, J, len(w), n1 * n2)
    expv = np.einsum("q,kjqx->kjx", w, vals) + rc.reshape(K, J, -1) * dt
    vbest, vidx, gidx = _reduce_min_max(expv)
    out_v[:] = vbest.reshape(n1, n2)
    out_iv[:] = vidx.reshape(n1, n2)
    out_ig[:] = gidx.reshape(n1, n2)
    return max(over1, over2)
