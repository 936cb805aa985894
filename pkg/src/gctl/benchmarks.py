"""Registry of built-in benchmark problems with closed-form values.

Each entry carries a full problem instance plus either a closed-form value
function (as an expression in t, x1..xn) or a reference value at a specific
point.  Closed forms are self-validated at first use: their symbolic
derivatives must satisfy the HJB equation to 1e-8 at 200 random sample
points.  The ambiguity set {0, 1} is fully degenerate on purpose - these
problems exercise exactly the regime the solvers are built for - so the
registry constructs them directly rather than through the config loader's
well-posedness gate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .ambiguity import AmbiguitySet
from .errors import ConfigError
from .grids import GridSpec
from .hjb import HamiltonianInputs, hamiltonian
from .problem import BoxControlSet, ControlProblem, discretize_controls


@dataclass
class BenchmarkEntry:
    name: str
    summary: str
    tolerance: float
    dpp_tolerance: float
    note: str
    closed_form_text: str = None
    reference_value: float = None
    reference_point: tuple = None
    _factory: callable = None
    _validated: bool = field(default=False, repr=False)

    def build(self):
        """Fresh (ControlProblem, AmbiguitySet, GridSpec) triple."""
        return self._factory()

    @property
    def closed_form(self):
        if self.closed_form_text is None:
            return None
        problem, _, _ = self.build()
        return ex.parse_expr(self.closed_form_text, problem.n, 0)

    def closed_form_layer(self, grid, t=0.0):
        ast = self.closed_form
        cols = grid.node_columns()
        vals = ex.eval_vec(ast, t, cols, [])
        return np.broadcast_to(np.asarray(vals, float), (len(cols[0]),)).reshape(
            grid.shape
        )


def _expr(src, n, m):
    return ex.parse_expr(src, n, m)


def _scalar_problem(name, b, sigma, f, g11, phi, control_set, horizon=1.0):
    n = d = 1
    m = control_set.m
    h = {}
    g = {}
    if g11 is not None:
        g[(0, 0)] = _expr(g11, n, m)
    return ControlProblem(
        n,
        d,
        m,
        horizon,
        [_expr(b, n, m)],
        h,
        [[_expr(sigma, n, m)]],
        _expr(f, n, m),
        g,
        ex.parse_expr(phi, n, 0),
        control_set,
        name=name,
    )


def _degenerate_set():
    return AmbiguitySet.from_scalars([0.0, 1.0])


def _make_drift_linear():
    p = _scalar_problem(
        "DRIFT-LINEAR", "v1", "1", "0", None, "x1",
        BoxControlSet([-1.0], [1.0], [21]),
    )
    return p, _degenerate_set(), GridSpec((-8.0,), (8.0,), (161,), 860)


def _make_degen_vol():
    p = _scalar_problem(
        "DEGEN-VOL", "0", "v1", "0", None, "0 - x1^2",
        BoxControlSet([1.0], [2.0], [11]),
    )
    return p, _degenerate_set(), GridSpec((-8.0,), (8.0,), (161,), 3400)


def _make_runcost():
    p = _scalar_problem(
        "RUNCOST", "v1", "1", "v1^2", None, "x1",
        BoxControlSet([-1.0], [1.0], [41]),
    )
    return p, _degenerate_set(), GridSpec((-8.0,), (8.0,), (161,), 860)


def _make_qv_cost():
    p = _scalar_problem(
        "QV-COST", "0", "0", "0", "1", "0",
        BoxControlSet([0.0], [1.0], [1]),
    )
    return p, _degenerate_set(), GridSpec((-6.0,), (6.0,), (121,), 200)


def _make_gheat_convex():
    p = _scalar_problem(
        "GHEAT-CONVEX", "0", "1", "0", None, "pos(x1)",
        BoxControlSet([0.0], [0.0], [1]),
    )
    return p, _degenerate_set(), GridSpec((-6.0,), (6.0,), (241,), 3400)


def _make_degen_gheat():
    p = _scalar_problem(
        "DEGEN-GHEAT", "0", "1", "0", None, "0 - x1^2",
        BoxControlSet([0.0], [0.0], [1]),
    )
    return p, _degenerate_set(), GridSpec((-6.0,), (6.0,), (121,), 860)


REGISTRY = {
    "DRIFT-LINEAR": BenchmarkEntry(
        name="DRIFT-LINEAR",
        summary="controlled drift, unit vol: V = x - (T - t), bang-bang control -1",
        tolerance=1e-2,
        dpp_tolerance=5e-3,
        note="linear terminal cost makes the gradient one, so the best drift is "
        "the leftmost control and diffusion integrates out",
        closed_form_text="x1 - 1 + t",
        _factory=_make_drift_linear,
    ),
    "DEGEN-VOL": BenchmarkEntry(
        name="DEGEN-VOL",
        summary="controlled volatility, concave target: V = -x^2, worst scenario "
        "switches the diffusion off",
        tolerance=2e-2,
        dpp_tolerance=2e-2,
        note="concavity makes zero the worst variance rate, so the value is frozen "
        "at the terminal cost: the degenerate vertex must not pick up artificial "
        "diffusion",
        closed_form_text="0 - x1^2",
        reference_value=-1.0,
        reference_point=(0.0, 1.0),
        _factory=_make_degen_vol,
    ),
    "RUNCOST": BenchmarkEntry(
        name="RUNCOST",
        summary="drift control with quadratic running cost: V = x - (T - t)/4, "
        "interior optimum -1/2",
        tolerance=1e-2,
        dpp_tolerance=5e-3,
        note="pointwise minimum of v + v^2 over the control grid",
        closed_form_text="x1 - 0.25 + 0.25*t",
        reference_value=-0.25,
        reference_point=(0.0, 0.0),
        _factory=_make_runcost,
    ),
    "QV-COST": BenchmarkEntry(
        name="QV-COST",
        summary="pure quadratic-variation running cost: V = (T - t), spatially "
        "constant",
        tolerance=1e-3,
        dpp_tolerance=1e-6,
        note="only the worst-case variance-rate channel contributes",
        closed_form_text="1 - t",
        reference_value=1.0,
        reference_point=(0.0, 0.0),
        _factory=_make_qv_cost,
    ),
    "GHEAT-CONVEX": BenchmarkEntry(
        name="GHEAT-CONVEX",
        summary="uncontrolled convex payoff pos(x): value at the origin is "
        "1/sqrt(2 pi), independent of the lower variance rate",
        tolerance=5e-3,
        dpp_tolerance=2e-2,
        note="convex data propagate at the largest variance rate, reducing to the "
        "classical heat flow; the closed form (a Gaussian call value) is not "
        "expressible in the coefficient grammar, so the entry pins the value at "
        "the origin instead",
        reference_value=1.0 / math.sqrt(2.0 * math.pi),
        reference_point=(0.0, 0.0),
        _factory=_make_gheat_convex,
    ),
    "DEGEN-GHEAT": BenchmarkEntry(
        name="DEGEN-GHEAT",
        summary="uncontrolled concave payoff -x^2: V = -x^2, frozen in time",
        tolerance=2e-2,
        dpp_tolerance=2e-2,
        note="the worst scenario for concave data is zero variance",
        closed_form_text="0 - x1^2",
        reference_value=0.0,
        reference_point=(0.0, 0.0),
        _factory=_make_degen_gheat,
    ),
}


def builtin_names():
    return list(REGISTRY)


def get_builtin(name):
    """Look up a benchmark; validates its closed form on first access."""
    key = str(name).upper()
    if key not in REGISTRY:
        import difflib

        hint = difflib.get_close_matches(key, REGISTRY, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(f"unknown builtin {name!r}{extra}")
    entry = REGISTRY[key]
    if not entry._validated:
        validate_entry(entry)
        entry._validated = True
    return entry


def validate_entry(entry, n_points=200, tol=1e-8, seed=20240501):
    """Closed forms must satisfy the HJB equation at random sample points.

    Derivatives are taken symbolically (finite differences would drown the
    1e-8 tolerance in cancellation noise); the control infimum runs over the
    entry's own discretized control set.
    """
    if entry.closed_form_text is None:
        return
    problem, S, grid = entry.build()
    W = ex.parse_expr(entry.closed_form_text, problem.n, 0)
    Wt = ex.diff(W, "t")
    Wx = [ex.diff(W, "x", i) for i in range(problem.n)]
    Wxx = [[ex.diff(Wx[i], "x", j) for j in range(problem.n)] for i in range(problem.n)]
    controls = discretize_controls(problem.control_set)
    rng = np.random.default_rng(seed)
    lo = np.array(grid.x_lo) / 2.0
    hi = np.array(grid.x_hi) / 2.0
    worst = 0.0
    for _ in range(n_points):
        t = float(rng.uniform(0.0, problem.horizon))
        x = rng.uniform(lo, hi)
        p = np.array([ex.eval_expr(e, t, x, []) for e in Wx])
        A = np.array(
            [[ex.eval_expr(Wxx[i][j], t, x, []) for j in range(problem.n)] for i in range(problem.n)]
        )
        A = 0.5 * (A + A.T)
        h_min = min(
            hamiltonian(problem, S, HamiltonianInputs(t, x, p, A, v)) for v in controls
        )
        resid = abs(ex.eval_expr(Wt, t, x, []) + h_min)
        worst = max(worst, resid)
    if worst > tol:
        raise ConfigError(
            f"benchmark {entry.name}: closed form violates the HJB equation "
            f"(residual {worst:.3g} > {tol})"
        )
    # terminal condition check at the same points
    for _ in range(20):
        x = rng.uniform(lo, hi)
        w_term = ex.eval_expr(W, problem.horizon, x, [])
        if abs(w_term - problem.phi_at(x)) > tol:
            raise ConfigError(
                f"benchmark {entry.name}: closed form misses the terminal condition"
            )


def list_builtins():
    """Formatted one-line descriptions, in registry order."""
    lines = []
    for name, e in REGISTRY.items():
        form = e.closed_form_text or f"value {e.reference_value:.5f} at {e.reference_point}"
        lines.append(f"{name:14s} {e.summary}  [closed form: {form}]")
    return lines
