"""Control-problem definitions and JSON config ingestion.

A problem instance is a finite-horizon controlled diffusion under volatility
uncertainty: drift b, quadratic-variation loadings h_ij, diffusion sigma,
running costs f and g_ij, terminal cost phi, and a compact control set.
Coefficients are expressions over (t, x1..xn, v1..vm), so every instance is
fully reproducible from its config file.
"""

import itertools
import json
import warnings

import numpy as np

from . import expr as ex
from .ambiguity import AmbiguitySet, check_h3
from .errors import ConfigError, DimensionError
from .grids import GridSpec


class BoxControlSet:
    """Axis-aligned box [lo, hi] discretized with `counts` points per axis."""

    def __init__(self, lo, hi, counts):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.counts = np.atleast_1d(np.asarray(counts, dtype=int))
        if not (self.lo.shape == self.hi.shape == self.counts.shape):
            raise ConfigError("control box lo/hi/counts must have equal length")
        if np.any(self.hi < self.lo):
            raise ConfigError("control box needs lo <= hi componentwise")
        if np.any(self.counts < 1):
            raise ConfigError("control box counts must be >= 1")

    @property
    def m(self):
        return len(self.lo)


class FiniteControlSet:
    """Explicit nonempty list of admissible control vectors."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.size == 0:
            raise ConfigError("finite control set must be nonempty")

    @property
    def m(self):
        return self.points.shape[1]


def discretize_controls(cs):
    """Control set -> (K, m) array of control vectors, lexicographic order.

    A box axis with a single point collapses to its midpoint.
    """
    if isinstance(cs, FiniteControlSet):
        return np.array(cs.points, dtype=float)
    axes = []
    for lo, hi, c in zip(cs.lo, cs.hi, cs.counts):
        if c == 1:
            axes.append(np.array([0.5 * (lo + hi)]))
        else:
            axes.append(np.linspace(lo, hi, c))
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    return pts.reshape(-1, cs.m)


class ControlProblem:
    """Immutable bundle of problem data; evaluation methods are pure."""

    def __init__(
        self,
        n,
        d,
        m,
        horizon,
        b,
        h,
        sigma,
        f,
        g,
        phi,
        control_set,
        name="problem",
        h3_certificate=None,
    ):
        self.n = int(n)
        self.d = int(d)
        self.m = int(m)
        self.horizon = float(horizon)
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        self.b = list(b)  # n expressions
        self.h = dict(h)  # {(i, j) i<=j, 0-based: [n expressions]}
        self.sigma = [list(row) for row in sigma]  # n rows of d expressions
        self.f = f
        self.g = dict(g)  # {(i, j) i<=j: expression}
        self.phi = phi
        self.control_set = control_set
        self.name = name
        self.h3_certificate = h3_certificate
        if len(self.b) != self.n:
            raise ConfigError(f"b must have {self.n} components")
        if len(self.sigma) != self.n or any(len(r) != self.d for r in self.sigma):
            raise ConfigError(f"sigma must be {self.n} x {self.d}")
        for (i, j) in list(self.h) + list(self.g):
            if not (0 <= i <= j < self.d):
                raise ConfigError("h/g indices must satisfy 1 <= i <= j <= d")

    # --- symmetric access; only the upper triangle is stored (h_ij = h_ji)
    def h_entry(self, i, j):
        return self.h.get((min(i, j), max(i, j)))

    def g_entry(self, i, j):
        return self.g.get((min(i, j), max(i, j)))

    @property
    def t_dependent(self):
        asts = list(self.b) + [self.f] + [e for r in self.sigma for e in r]
        asts += [e for lst in self.h.values() for e in lst] + list(self.g.values())
        return any(ex.uses_t(a) for a in asts)

    # --- pointwise evaluation ------------------------------------------------
    def b_at(self, t, x, v):
        return np.array([ex.eval_expr(e, t, x, v) for e in self.b])

    def sigma_at(self, t, x, v):
        return np.array([[ex.eval_expr(e, t, x, v) for e in row] for row in self.sigma])

    def h_at(self, i, j, t, x, v):
        e = self.h_entry(i, j)
        if e is None:
            return np.zeros(self.n)
        return np.array([ex.eval_expr(c, t, x, v) for c in e])

    def f_at(self, t, x, v):
        return ex.eval_expr(self.f, t, x, v)

    def g_at(self, i, j, t, x, v):
        e = self.g_entry(i, j)
        return 0.0 if e is None else ex.eval_expr(e, t, x, v)

    def phi_at(self, x):
        return ex.eval_expr(self.phi, 0.0, x, [])

    # --- vectorized evaluation over coordinate columns ----------------------
    def phi_nodes(self, xcols):
        out = ex.eval_vec(self.phi, 0.0, list(xcols), [])
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(xcols[0])).copy()


def _as_zero(n):
    return [ex.constant_expr(0.0) for _ in range(n)]


def _parse_pair_key(key, d):
    """'ij' or 'i,j' -> 0-based (i, j); rejects lower-triangle keys."""
    if "," in key:
        parts = key.split(",")
    else:
        parts = list(key)
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        raise ConfigError(f"bad coefficient key {key!r}; use 'ij' with 1 <= i <= j")
    i, j = (int(p) - 1 for p in parts)
    if i > j:
        raise ConfigError(
            f"coefficient key {key!r} is below the diagonal; only the upper "
            "triangle is accepted (symmetry is structural)"
        )
    if not (0 <= i <= j < d):
        raise ConfigError(f"coefficient key {key!r} out of range for d={d}")
    return i, j


def problem_from_dict(cfg, *, require_h3=True, h1_check=True):
    """Build (ControlProblem, AmbiguitySet, GridSpec) from a config mapping."""
    try:
        n = int(cfg["state_dim"])
        d = int(cfg["brownian_dim"])
        m = int(cfg["control_dim"])
        horizon = float(cfg["horizon"])
        amb_cfg = cfg["ambiguity"]["vertices"]
        cs_cfg = cfg["control_set"]
        co = cfg["coefficients"]
        grid_cfg = cfg["grid"]
    except (KeyError, TypeError) as err:
        raise ConfigError(f"config is missing required field: {err}") from err

    try:
        S = AmbiguitySet(amb_cfg)
    except DimensionError as err:
        raise ConfigError(f"bad ambiguity vertices: {err}") from err
    if S.dim_d != d:
        raise ConfigError(f"ambiguity vertices are {S.dim_d}-dimensional, expected {d}")

    if cs_cfg.get("type") == "box":
        control_set = BoxControlSet(cs_cfg["lo"], cs_cfg["hi"], cs_cfg["counts"])
    elif cs_cfg.get("type") == "finite":
        control_set = FiniteControlSet(cs_cfg["points"])
    else:
        raise ConfigError("control_set.type must be 'box' or 'finite'")
    if control_set.m != m:
        raise ConfigError("control_set dimension disagrees with control_dim")

    def parse(src, what):
        try:
            return ex.parse_expr(str(src), n, m)
        except ex.ExprError:
            raise
        except Exception as err:  # pragma: no cover - defensive
            raise ConfigError(f"cannot parse {what}: {err}") from err

    b_list = co.get("b", ["0"] * n)
    if len(b_list) != n:
        raise ConfigError(f"coefficients.b must list {n} expressions")
    b = [parse(s, "b") for s in b_list]

    sig_rows = co.get("sigma", [["0"] * d for _ in range(n)])
    if len(sig_rows) != n or any(len(r) != d for r in sig_rows):
        raise ConfigError(f"coefficients.sigma must be {n} x {d}")
    sigma = [[parse(s, "sigma") for s in row] for row in sig_rows]

    h = {}
    for key, lst in (co.get("h") or {}).items():
        ij = _parse_pair_key(key, d)
        if len(lst) != n:
            raise ConfigError(f"coefficients.h[{key!r}] must list {n} expressions")
        h[ij] = [parse(s, "h") for s in lst]

    g = {}
    for key, src in (co.get("g") or {}).items():
        ij = _parse_pair_key(key, d)
        g[ij] = parse(src, "g")

    f = parse(co.get("f", "0"), "f")
    phi_src = co.get("phi", "0")
    phi = ex.parse_expr(str(phi_src), n, 0)
    if ex.uses_t(phi):
        raise ConfigError("phi must not depend on t")

    certificate = None
    if require_h3:
        certificate = check_h3(S)

    problem = ControlProblem(
        n, d, m, horizon, b, h, sigma, f, g, phi, control_set,
        name=str(cfg.get("name", "problem")),
        h3_certificate=certificate,
    )

    try:
        grid = GridSpec(
            grid_cfg["x_lo"], grid_cfg["x_hi"], grid_cfg["nx"], int(grid_cfg["nt"])
        )
    except (KeyError, DimensionError) as err:
        raise ConfigError(f"bad grid section: {err}") from err
    if grid.dim != n:
        raise ConfigError("grid dimension disagrees with state_dim")

    if h1_check:
        report = spot_check_h1(problem, grid)
        if report["suspect"]:
            warnings.warn(
                "Lipschitz spot check: finite-difference ratios of "
                f"{', '.join(report['suspect'])} grow with sample range; "
                "coefficients may violate the global Lipschitz assumption",
                stacklevel=2,
            )
        problem.h1_report = report
    return problem, S, grid


def load_problem(config_path):
    """Read a JSON config; see README for the schema.

    The ambiguity set must have at least one non-degenerate component
    (NoNondegenerateComponent otherwise): without it the underlying control
    problem is ill-posed.  Built-in benchmarks that deliberately probe the
    fully degenerate regime are constructed via the registry instead.
    """
    try:
        with open(config_path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return problem_from_dict(cfg)


def load_ambiguity(config_path):
    """Read only the ambiguity section (no well-posedness gate).

    Sufficient for expectation evaluation, which does not involve controls.
    """
    try:
        with open(config_path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    try:
        return AmbiguitySet(cfg["ambiguity"]["vertices"])
    except (KeyError, TypeError) as err:
        raise ConfigError("config has no ambiguity.vertices section") from err
    except DimensionError as err:
        raise ConfigError(f"bad ambiguity vertices: {err}") from err


def spot_check_h1(problem, grid, samples=100, seed=0):
    """Finite-difference Lipschitz ratios of the coefficients at two scales.

    Trust-but-verify: a global Lipschitz bound cannot be decided from an
    expression, so ratios are sampled and a growth between scales is only
    warned about.  b/h/sigma use the plain ratio; f/g/phi the quadratic-
    growth-normalized one.
    """
    rng = np.random.default_rng(seed)
    n, m = problem.n, problem.m
    lo = np.array(grid.x_lo)
    hi = np.array(grid.x_hi)
    cs = problem.control_set
    if isinstance(cs, BoxControlSet):
        v_lo, v_hi = cs.lo, cs.hi
    else:
        v_lo, v_hi = cs.points.min(axis=0), cs.points.max(axis=0)
    span = float(np.max(hi - lo))

    groups = {
        "b": list(problem.b),
        "sigma": [e for row in problem.sigma for e in row],
        "h": [e for lst in problem.h.values() for e in lst],
        "f": [problem.f],
        "g": list(problem.g.values()),
        "phi": [problem.phi],
    }
    quad_normalized = {"f", "g", "phi"}

    def ratios(scale):
        worst = {k: 0.0 for k in groups}
        for _ in range(samples):
            t = rng.uniform(0.0, problem.horizon)
            x = rng.uniform(lo, hi)
            v = rng.uniform(v_lo, v_hi) if m else np.zeros(0)
            dx = rng.normal(size=n)
            dx *= scale / max(np.linalg.norm(dx), 1e-300)
            dv = rng.normal(size=m) if m else np.zeros(0)
            if m:
                dv *= scale / max(np.linalg.norm(dv), 1e-300)
            x2, v2 = x + dx, np.clip(v + dv, v_lo, v_hi) if m else v
            dist = np.linalg.norm(x2 - x) + (np.linalg.norm(v2 - v) if m else 0.0)
            if dist == 0.0:
                continue
            norm_quad = (1.0 + np.linalg.norm(x) + np.linalg.norm(x2)) * np.linalg.norm(
                x2 - x
            ) + (np.linalg.norm(v2 - v) if m else 0.0)
            for name, asts in groups.items():
                den = norm_quad if name in quad_normalized else dist
                for a in asts:
                    if name == "phi":
                        diff = abs(ex.eval_expr(a, 0.0, x, []) - ex.eval_expr(a, 0.0, x2, []))
                    else:
                        diff = abs(ex.eval_expr(a, t, x, v) - ex.eval_expr(a, t, x2, v2))
                    worst[name] = max(worst[name], diff / max(den, 1e-300))
        return worst

    small = ratios(1e-3 * span)
    large = ratios(0.5 * span)
    suspect = [
        k
        for k in groups
        if groups[k] and large[k] > 3.0 * max(small[k], 1e-9) and large[k] > 1e-6
    ]
    return {"small_scale": small, "large_scale": large, "suspect": suspect}


class CoefficientTables:
    """Tabulates coefficients on grid nodes per (control, vertex).

    Produces the arrays the stepping kernels consume: drift rate mu (with the
    quadratic-variation loadings contracted against the vertex), diffusion
    load M = sigma sqrt(gamma), effective diffusion a = sigma gamma sigma',
    and running-cost rate rc = f + sum_ij g_ij gamma_ij.  Tables of problems
    with time-independent coefficients are computed once and reused.
    """

    def __init__(self, problem, S, grid, controls):
        self.problem = problem
        self.S = S
        self.grid = grid
        self.controls = np.asarray(controls, dtype=float)
        if self.controls.ndim != 2 or self.controls.shape[0] == 0:
            raise ConfigError("control list must be a nonempty (K, m) array")
        self.xcols = grid.node_columns()
        self.N = len(self.xcols[0])
        self.gammas = S.vertex_array()  # (J, d, d)
        self.sqrt_gammas = np.stack(S.sqrt_vertices())
        self.autonomous = not problem.t_dependent
        self._cache = {}

    @property
    def K(self):
        return self.controls.shape[0]

    @property
    def J(self):
        return self.gammas.shape[0]

    def _evaluate(self, t):
        p, N = self.problem, self.N
        K, J, n, d = self.K, self.J, p.n, p.d
        sig = np.empty((K, N, n, d))
        bdrift = np.empty((K, N, n))
        rc_f = np.empty((K, N))
        h_vals = {}
        g_vals = {}
        for k in range(K):
            v = [float(c) for c in self.controls[k]]
            for i in range(n):
                bdrift[k, :, i] = ex.eval_vec(p.b[i], t, self.xcols, v)
                for e in range(d):
                    sig[k, :, i, e] = ex.eval_vec(p.sigma[i][e], t, self.xcols, v)
            rc_f[k, :] = ex.eval_vec(p.f, t, self.xcols, v)
            for ij, lst in p.h.items():
                arr = np.empty((N, n))
                for i in range(n):
                    arr[:, i] = ex.eval_vec(lst[i], t, self.xcols, v)
                h_vals.setdefault(ij, np.empty((K, N, n)))[k] = arr
            for ij, e in p.g.items():
                g_vals.setdefault(ij, np.empty((K, N)))[k] = ex.eval_vec(
                    e, t, self.xcols, v
                )

        mu = np.broadcast_to(bdrift[:, None], (K, J, N, n)).copy()
        rc = np.broadcast_to(rc_f[:, None], (K, J, N)).copy()
        for (i, j), arr in h_vals.items():
            weight = self.gammas[:, i, j] * (1.0 if i == j else 2.0)  # (J,)
            mu += weight[None, :, None, None] * arr[:, None]
        for (i, j), arr in g_vals.items():
            weight = self.gammas[:, i, j] * (1.0 if i == j else 2.0)
            rc += weight[None, :, None] * arr[:, None]

        M = np.einsum("kxnd,jde->kjxne", sig, self.sqrt_gammas)
        a = np.einsum("kxnd,jde,kxme->kjxnm", sig, self.gammas, sig)
        return {"mu": mu, "M": M, "a": a, "rc": rc}

    def at(self, t):
        key = None if self.autonomous else round(float(t), 12)
        if key not in self._cache:
            if not self.autonomous and len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = self._evaluate(float(t))
        return self._cache[key]
