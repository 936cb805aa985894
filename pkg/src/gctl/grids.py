"""Space-time grids, value fields and feedback-policy fields.

All solvers share one uniform-grid convention: nx nodes per axis including
both endpoints, nt time steps, values reported on the central 50% of the
domain (each axis trimmed by a quarter on either side) so that boundary
truncation error stays out of every published number.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainEscape


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid: per-axis bounds and node counts, plus nt."""

    x_lo: tuple
    x_hi: tuple
    nx: tuple
    nt: int

    def __post_init__(self):
        object.__setattr__(self, "x_lo", tuple(float(a) for a in np.atleast_1d(self.x_lo)))
        object.__setattr__(self, "x_hi", tuple(float(a) for a in np.atleast_1d(self.x_hi)))
        object.__setattr__(self, "nx", tuple(int(a) for a in np.atleast_1d(self.nx)))
        if not (len(self.x_lo) == len(self.x_hi) == len(self.nx)):
            raise DimensionError("grid bounds and node counts disagree in dimension")
        for lo, hi, n in zip(self.x_lo, self.x_hi, self.nx):
            if hi <= lo:
                raise DimensionError("grid upper bound must exceed lower bound")
            if n < 3:
                raise DimensionError("need at least 3 nodes per axis")
        if self.nt < 1:
            raise DimensionError("need at least one time step")

    @property
    def dim(self):
        return len(self.nx)

    @property
    def h(self):
        return tuple(
            (hi - lo) / (n - 1) for lo, hi, n in zip(self.x_lo, self.x_hi, self.nx)
        )

    @property
    def shape(self):
        return self.nx

    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.x_lo, self.x_hi, self.nx)]

    def mesh(self):
        """Coordinate arrays of shape self.shape, one per axis."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def node_columns(self):
        """Flattened coordinate columns, each of length prod(nx)."""
        return [m.ravel() for m in self.mesh()]

    def central_mask(self):
        """Boolean array over nodes marking the central 50% of each axis."""
        mask = np.ones(self.shape, dtype=bool)
        for ax, (lo, hi, n) in enumerate(zip(self.x_lo, self.x_hi, self.nx)):
            quarter = 0.25 * (hi - lo)
            coords = np.linspace(lo, hi, n)
            keep = (coords >= lo + quarter - 1e-12) & (coords <= hi - quarter + 1e-12)
            shape = [1] * self.dim
            shape[ax] = n
            mask = mask & keep.reshape(shape)
        return mask

    def refined(self, space=2, time=4):
        """Halved spacing (factor `space`) with nt scaled by `time`."""
        return GridSpec(
            self.x_lo,
            self.x_hi,
            tuple((n - 1) * space + 1 for n in self.nx),
            self.nt * time,
        )

    def coarsened(self, space=2, time=4):
        for n in self.nx:
            if (n - 1) % space:
                raise DimensionError("node count does not coarsen evenly")
        return GridSpec(
            self.x_lo,
            self.x_hi,
            tuple((n - 1) // space + 1 for n in self.nx),
            max(1, self.nt // time),
        )


def _cubic_weights(tt):
    """4-point Lagrange weights at local coordinate tt in [0, 3]."""
    w0 = -(tt - 1.0) * (tt - 2.0) * (tt - 3.0) / 6.0
    w1 = tt * (tt - 2.0) * (tt - 3.0) / 2.0
    w2 = -tt * (tt - 1.0) * (tt - 3.0) / 2.0
    w3 = tt * (tt - 1.0) * (tt - 2.0) / 6.0
    return w0, w1, w2, w3


def _axis_locate(q, lo, h, n, method):
    """Clamped cell location along one axis.

    Returns (index arrays, weight arrays, overshoot) where overshoot is the
    largest distance any query lies outside [lo, lo + (n-1) h].
    """
    u = (np.asarray(q, dtype=float) - lo) / h
    over = max(float(np.max(-u, initial=0.0)), float(np.max(u - (n - 1), initial=0.0))) * h
    u = np.clip(u, 0.0, n - 1.0)
    if method == "linear" or n < 4:
        j = np.minimum(u.astype(np.int64), n - 2)
        s = u - j
        return (j, j + 1), (1.0 - s, s), over
    j = np.minimum(u.astype(np.int64), n - 2)
    b = np.clip(j - 1, 0, n - 4)
    tt = u - b
    w = _cubic_weights(tt)
    return (b, b + 1, b + 2, b + 3), w, over


class LayerInterpolant:
    """Separable interpolant of node values on a uniform grid.

    method 'cubic' (default) reproduces cubics along each axis; 'linear' is
    the monotone piecewise-multilinear choice.  Queries are clamped to the
    domain; anything farther out than one cell width raises DomainEscape
    unless `check=False`.
    """

    def __init__(self, grid, values, method="cubic", check=True):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != grid.shape:
            raise DimensionError("values shape does not match grid")
        if method not in ("cubic", "linear"):
            raise DimensionError(f"unknown interpolation method {method!r}")
        self.method = method
        self.check = check

    def __call__(self, *coords):
        """Evaluate at coordinate arrays (one per axis, broadcastable)."""
        if len(coords) == 1 and self.grid.dim > 1 and np.ndim(coords[0]) == 2:
            pts = np.asarray(coords[0], dtype=float)
            coords = tuple(pts[:, a] for a in range(self.grid.dim))
        if len(coords) != self.grid.dim:
            raise DimensionError("query dimension does not match grid")
        coords = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords])
        out_shape = coords[0].shape
        worst = 0.0
        axis_data = []
        for ax in range(self.grid.dim):
            idx, w, over = _axis_locate(
                coords[ax].ravel(),
                self.grid.x_lo[ax],
                self.grid.h[ax],
                self.grid.nx[ax],
                self.method,
            )
            worst = max(worst, over)
            axis_data.append((idx, w))
        if self.check and worst > max(self.grid.h) * (1.0 + 1e-9):
            raise DomainEscape(
                f"query escapes the grid by {worst:.4g} (> one cell); "
                "enlarge the domain or refine the time step"
            )
        if self.grid.dim == 1:
            idx, w = axis_data[0]
            acc = sum(wk * self.values[ik] for ik, wk in zip(idx, w))
        else:
            (i1, w1), (i2, w2) = axis_data
            acc = 0.0
            for ia, wa in zip(i1, w1):
                row = sum(wb * self.values[ia, ib] for ib, wb in zip(i2, w2))
                acc = acc + wa * row
        return np.asarray(acc).reshape(out_shape)

    def at_point(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self(*[x[a] for a in range(self.grid.dim)]))


class ValueField:
    """Value-function samples on all time layers of a grid.

    `times` is increasing with len nt+1; values[k] is the layer at times[k].
    Solvers producing terminal-value problems store the terminal condition
    in the last layer.
    """

    def __init__(self, grid, times, values):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.times),) + grid.shape:
            raise DimensionError("value layers do not match grid/time shape")

    @property
    def nt(self):
        return len(self.times) - 1

    def layer(self, k):
        return self.values[k]

    def layer_index(self, t, tol=1e-9):
        k = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        k = min(max(k, 0), self.nt)
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)) + 1e-12:
            raise DimensionError(f"time {t} is not on a stored layer")
        return k

    def interpolant(self, k, method="cubic", check=True):
        return LayerInterpolant(self.grid, self.values[k], method, check)

    def at(self, t, x, method="cubic"):
        """Linear in time between layers, separable `method` in space."""
        t = float(t)
        ts = self.times
        k = int(np.clip(np.searchsorted(ts, t) - 1, 0, self.nt - 1))
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        w = min(max(w, 0.0), 1.0)
        a = self.interpolant(k, method).at_point(x)
        b = self.interpolant(k + 1, method).at_point(x)
        return (1.0 - w) * a + w * b

    def central_sup_error(self, reference):
        """Sup over central nodes and all layers of |values - reference|.

        `reference` is a callable (t, mesh columns...) -> layer array, or a
        ValueField on the same grid.
        """
        mask = self.grid.central_mask()
        worst = 0.0
        if isinstance(reference, ValueField):
            diff = np.abs(self.values - reference.values)
            return float(np.max(diff[:, mask]))
        mesh = self.grid.mesh()
        for k, t in enumerate(self.times):
            ref = reference(t, *mesh)
            worst = max(worst, float(np.max(np.abs(self.values[k] - ref)[mask])))
        return worst

    def growth_constant(self):
        """max |V| / (1 + |x|^2) over every node and layer."""
        mesh = self.grid.mesh()
        r2 = sum(m * m for m in mesh)
        return float(np.max(np.abs(self.values) / (1.0 + r2)))

    def write_csv(self, path):
        cols = self.grid.node_columns()
        header = ["t"] + [f"x{a + 1}" for a in range(self.grid.dim)] + ["value"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, t in enumerate(self.times):
                flat = self.values[k].ravel()
                for i in range(flat.size):
                    w.writerow(
                        [f"{t:.17g}"]
                        + [f"{c[i]:.17g}" for c in cols]
                        + [f"{flat[i]:.17g}"]
                    )


class PolicyField:
    """Per-(time step, node) minimizing control and worst volatility vertex.

    ctrl_idx/gamma_idx have shape (nt,) + grid.shape and index into
    `controls` (K, m) and the ambiguity vertex list respectively.  Feedback
    evaluation interpolates the control vectors multilinearly in space with
    clamping and uses the step whose interval contains t.
    """

    def __init__(self, grid, times, controls, ctrl_idx, gamma_idx):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.controls = np.asarray(controls, dtype=float)
        self.ctrl_idx = np.asarray(ctrl_idx)
        self.gamma_idx = np.asarray(gamma_idx)
        nt = len(self.times) - 1
        if self.ctrl_idx.shape != (nt,) + grid.shape:
            raise DimensionError("policy index shape mismatch")
        if self.gamma_idx.shape != (nt,) + grid.shape:
            raise DimensionError("vertex index shape mismatch")

    @property
    def m(self):
        return self.controls.shape[1]

    def step_of(self, t):
        dt = self.times[1] - self.times[0]
        k = int(np.floor((float(t) - self.times[0]) / dt + 1e-12))
        return min(max(k, 0), len(self.times) - 2)

    def control_at(self, t, x):
        """Feedback control at time t, states x of shape (n,) or (P, n)."""
        k = self.step_of(t)
        vecs = self.controls[self.ctrl_idx[k]]  # grid.shape + (m,)
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        field = LayerInterpolant(self.grid, np.zeros(self.grid.shape), "linear", check=False)
        cols = [pts[:, a] for a in range(self.grid.dim)]
        out = np.empty((pts.shape[0], self.m))
        for c in range(self.m):
            field.values = vecs[..., c]
            out[:, c] = field(*cols)
        return out[0] if single else out

    def vertex_at(self, t, x):
        """Worst vertex index at the node nearest to x (indices do not mix)."""
        k = self.step_of(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ids = []
        for ax in range(self.grid.dim):
            j = int(round((x[ax] - self.grid.x_lo[ax]) / self.grid.h[ax]))
            ids.append(min(max(j, 0), self.grid.nx[ax] - 1))
        return int(self.gamma_idx[k][tuple(ids)])

    def write_csv(self, path, value_field=None):
        cols = self.grid.node_columns()
        header = (
            ["t"]
            + [f"x{a + 1}" for a in range(self.grid.dim)]
            + ["value"]
            + [f"u{c + 1}" for c in range(self.m)]
            + ["worst_vertex"]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.times) - 1):
                t = self.times[k]
                vals = (
                    value_field.values[k].ravel()
                    if value_field is not None
                    else np.zeros(int(np.prod(self.grid.shape)))
                )
                ci = self.ctrl_idx[k].ravel()
                gi = self.gamma_idx[k].ravel()
                for i in range(ci.size):
                    u = self.controls[ci[i]]
                    w.writerow(
                        [f"{t:.17g}"]
                        + [f"{c[i]:.17g}" for c in cols]
                        + [f"{vals[i]:.17g}"]
                        + [f"{uc:.17g}" for uc in u]
                        + [str(int(gi[i]))]
                    )


def read_policy_csv(path):
    """Rebuild a PolicyField from its CSV serialization."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    dim = sum(1 for name in header if name.startswith("x"))
    m = sum(1 for name in header if name.startswith("u"))
    data = np.array([[float(v) for v in row] for row in body])
    times = np.unique(data[:, 0])
    axes = [np.unique(data[:, 1 + a]) for a in range(dim)]
    nx = tuple(len(a) for a in axes)
    nt = len(times)
    grid = GridSpec(
        tuple(a[0] for a in axes), tuple(a[-1] for a in axes), nx, nt
    )
    uvecs = data[:, 1 + dim + 1 : 1 + dim + 1 + m]
    controls, inverse = np.unique(uvecs, axis=0, return_inverse=True)
    ctrl_idx = np.zeros((nt,) + nx, dtype=np.int32)
    gamma_idx = np.zeros((nt,) + nx, dtype=np.int32)
    pos = {t: k for k, t in enumerate(times)}
    node_index = [
        {round(float(v), 12): i for i, v in enumerate(a)} for a in axes
    ]
    for r, row in enumerate(data):
        k = pos[row[0]]
        ids = tuple(node_index[a][round(float(row[1 + a]), 12)] for a in range(dim))
        ctrl_idx[(k,) + ids] = inverse[r]
        gamma_idx[(k,) + ids] = int(row[-1])
    dt = times[1] - times[0] if nt > 1 else 1.0
    full_times = np.append(times, times[-1] + dt)
    return PolicyField(grid, full_times, controls, ctrl_idx, gamma_idx)
