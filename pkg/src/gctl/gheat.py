"""Sublinear expectations via the nonlinear heat equation.

The expectation of phi(B_t) under volatility ambiguity equals u(t, 0) where
u solves u_t = G(D^2 u), u(0, .) = phi: a fully nonlinear, possibly
degenerate parabolic equation.  It is stepped here with an explicit monotone
scheme (central second differences, sign-adapted cross stencils, CFL
substepping), which converges to the viscosity solution precisely because it
is monotone, stable and consistent.  Degenerate vertices need no special
treatment: a zero second-order coefficient is just a zero coefficient.
"""

import math
import warnings

import numpy as np

from . import expr as ex
from ._backend import gheat_step_1d, gheat_step_2d
from .ambiguity import component_bounds
from .errors import (
    CFLOverflow,
    ConfigError,
    DimensionError,
    MonotonicityUnavailable,
    NumericsError,
)
from .grids import GridSpec, ValueField

MAX_TOTAL_STEPS = 10**7


def build_heat_grid(S, T, h=0.01, reporting_halfwidth=0.0, center=None, nt=None):
    """Grid whose domain extends 6 sigma-bar sqrt(T) beyond the reporting box.

    That margin keeps boundary truncation error out of the centrally
    reported values without imposing artificial boundary conditions.
    """
    d = S.dim_d
    if d > 2:
        raise DimensionError("heat grids support one or two Brownian dimensions")
    sigma_bar_sq, _ = component_bounds(S)
    center = np.zeros(d) if center is None else np.atleast_1d(np.asarray(center, float))
    half = reporting_halfwidth + 6.0 * np.sqrt(sigma_bar_sq * T)
    half = np.maximum(half, 4.0 * h)
    nx = tuple(2 * int(math.ceil(hw / h)) + 1 for hw in half)
    x_lo = tuple(c - (n - 1) // 2 * h for c, n in zip(center, nx))
    x_hi = tuple(c + (n - 1) // 2 * h for c, n in zip(center, nx))
    if nt is None:
        nt = substep_count(S, T, (h,) * d, 1)
    return GridSpec(x_lo, x_hi, nx, nt)


def cfl_dt_max(S, h):
    """Largest stable explicit step: min_i h_i^2 / (2 dim Lambda_max)."""
    lam = max(S.lambda_max, 1e-300)
    dim = len(h)
    return min(hi * hi for hi in h) / (2.0 * dim * lam)


def substep_count(S, dt, h, nt_layers):
    m = max(1, int(math.ceil(dt / cfl_dt_max(S, h))))
    if m * nt_layers > MAX_TOTAL_STEPS:
        raise CFLOverflow(
            f"stability requires {m * nt_layers} steps (> {MAX_TOTAL_STEPS}); "
            "coarsen the space grid or shorten the horizon"
        )
    return m


def _require_monotone_cross(S, h):
    # axis-neighbor weights g_ii/h_i^2 - |g12|/(h1 h2) must stay nonnegative
    r = h[1] / h[0]
    for k, g in enumerate(S.vertices):
        if abs(g[0, 1]) > min(g[0, 0] * r, g[1, 1] / r) + 1e-12:
            raise MonotonicityUnavailable(
                f"vertex {k} is not diagonally dominant (|g12| > min(g11, g22) "
                "after spacing scaling); the cross-derivative stencil would lose "
                "monotonicity"
            )


def _payoff_values(phi, grid, state_prefix="x"):
    if callable(phi):
        vals = phi(*grid.mesh())
        return np.broadcast_to(np.asarray(vals, dtype=float), grid.shape).copy()
    if isinstance(phi, str):
        phi = ex.parse_expr(phi, grid.dim, 0, state_prefix=state_prefix)
    bad = [kv for kv in ex.free_vars(phi) if kv[0] != "x"]
    if bad:
        raise ConfigError("heat-equation payoff may only reference state variables")
    cols = grid.node_columns()
    vals = ex.eval_vec(phi, 0.0, cols, [])
    return np.broadcast_to(np.asarray(vals, dtype=float), (len(cols[0]),)).reshape(
        grid.shape
    ).copy()


def _stack_rows(u):
    """View a layer as (rows, nx_last) for the batched 1-D kernel."""
    return u.reshape(-1, u.shape[-1])


def solve_gheat(S, phi, T, grid):
    """All time layers of the nonlinear heat flow started from phi.

    phi may be an expression (text or AST, states x1[,x2]), a callable of the
    mesh arrays, or a node-value array.  Layers are forward in time:
    times[k] = k T / nt, layer 0 is phi itself.
    """
    if S.dim_d != grid.dim:
        raise DimensionError("grid dimension must match the Brownian dimension")
    if grid.dim not in (1, 2):
        raise DimensionError("supported grid dimensions: 1 and 2")
    if grid.dim == 2:
        _require_monotone_cross(S, grid.h)

    u = (
        np.array(phi, dtype=float).reshape(grid.shape)
        if isinstance(phi, np.ndarray)
        else _payoff_values(phi, grid)
    )
    nt = grid.nt
    dt_layer = T / nt
    m = substep_count(S, dt_layer, grid.h, nt)
    dt = dt_layer / m

    layers = np.empty((nt + 1,) + grid.shape)
    layers[0] = u
    if grid.dim == 1:
        gam_diag = np.array([g[0, 0] for g in S.vertices])
        gmin, gmax = float(gam_diag.min()), float(gam_diag.max())
    else:
        g11 = np.array([g[0, 0] for g in S.vertices])
        g12 = np.array([g[0, 1] for g in S.vertices])
        g22 = np.array([g[1, 1] for g in S.vertices])

    work = u.copy()
    spare = np.empty_like(work)
    for k in range(nt):
        for _ in range(m):
            if grid.dim == 1:
                gheat_step_1d(_stack_rows(work), grid.h[0], dt, gmin, gmax, _stack_rows(spare))
            else:
                gheat_step_2d(work, grid.h[0], grid.h[1], dt, g11, g12, g22, spare)
            work, spare = spare, work
        if not np.all(np.isfinite(work)):
            raise NumericsError(f"non-finite values at time layer {k + 1}")
        layers[k + 1] = work
    times = np.linspace(0.0, T, nt + 1)
    return ValueField(grid, times, layers)


def g_expectation(S, phi, t, grid=None):
    """Expectation of phi evaluated at the increment of duration t.

    Solves the heat flow over [0, t] and reads the final layer at the
    origin.  With no grid given, one is built with spacing 0.01 (1-D) or
    0.05 (2-D) and the default 6-sigma domain margin.
    """
    if t <= 0:
        g = grid or build_heat_grid(S, 1e-6, h=0.01)
        vals = _payoff_values(phi, g) if not isinstance(phi, np.ndarray) else phi
        return float(
            ValueField(g, np.array([0.0]), vals[None]).interpolant(0, "linear").at_point(
                np.zeros(g.dim)
            )
        )
    if grid is None:
        grid = build_heat_grid(S, t, h=0.01 if S.dim_d == 1 else 0.05)
    field = solve_gheat(S, phi, t, grid)
    return field.interpolant(field.nt, "linear").at_point(np.zeros(grid.dim))


def nested_expectation(S, phi, times, grid=None, smooth_tol=1e-2):
    """Expectation of phi(y1, .., yN) over successive increments.

    y_k is the increment over (times[k-1], times[k]] (times[0] counts from
    0); the computation runs the defining backward recursion: the last
    argument is integrated out by a heat solve while the earlier ones ride
    along as grid-tabulated parameters, then the result feeds the next solve
    as initial data.  1-D ambiguity sets, at most three increments.
    """
    if S.dim_d != 1:
        raise DimensionError("nested expectations are implemented for d = 1")
    times = [float(t) for t in times]
    N = len(times)
    if N == 0 or any(b <= a for a, b in zip([0.0] + times, times)):
        raise DimensionError("times must be strictly increasing and positive")
    if N > 3:
        raise DimensionError("at most three nested increments are supported")
    if isinstance(phi, str):
        phi = ex.parse_expr(phi, N, 0, state_prefix="y")
    bad = [kv for kv in ex.free_vars(phi) if kv[0] != "x" or kv[1] >= N]
    if bad:
        raise ConfigError("nested payoff may only reference y1..yN")

    h = grid.h[0] if grid is not None else 0.05
    sigma_bar_sq, _ = component_bounds(S)
    sbar = float(np.sqrt(sigma_bar_sq[0]))
    deltas = np.diff([0.0] + times)
    axes = []
    for dk in deltas:
        half = max(6.0 * sbar * math.sqrt(dk), 4.0 * h)
        npts = 2 * int(math.ceil(half / h)) + 1
        axes.append(np.linspace(-(npts - 1) // 2 * h, (npts - 1) // 2 * h, npts))

    # tabulate phi on the tensor grid of all increments
    mesh = np.meshgrid(*axes, indexing="ij")
    cols = [mm.ravel() for mm in mesh]
    table = np.asarray(ex.eval_vec(phi, 0.0, cols, []), dtype=float)
    table = np.broadcast_to(table, (len(cols[0]),)).reshape([len(a) for a in axes]).copy()

    gam_diag = np.array([g[0, 0] for g in S.vertices])
    gmin, gmax = float(gam_diag.min()), float(gam_diag.max())
    for k in range(N - 1, -1, -1):
        # heat solve along the last remaining axis for duration deltas[k]
        dk = float(deltas[k])
        nxk = len(axes[k])
        m = substep_count(S, dk, (h,), 1)
        dt = dk / m
        shape_k = [len(a) for a in axes[: k + 1]]
        rows = np.ascontiguousarray(table).reshape(-1, nxk)
        spare = np.empty_like(rows)
        for _ in range(m):
            gheat_step_1d(rows, h, dt, gmin, gmax, spare)
            rows, spare = spare, rows
        if not np.all(np.isfinite(rows)):
            raise NumericsError(f"non-finite values while integrating increment {k + 1}")
        # read at y_k = 0 (center node), leaving the earlier parameters
        table = rows.reshape(shape_k)[..., (nxk - 1) // 2].copy()
        if k > 0 and table.shape[-1] >= 3:
            # interpolation-relevant variation: second differences of the table
            jumps = np.max(np.abs(np.diff(table, n=2, axis=-1)), initial=0.0)
            if jumps > 10.0 * smooth_tol:
                warnings.warn(
                    f"parameter grid under-resolved before increment {k}: "
                    f"adjacent tabulated values kink by {jumps:.3g}",
                    stacklevel=2,
                )
    return float(table)
