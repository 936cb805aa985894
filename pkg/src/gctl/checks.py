"""Property and regularity check suites over solved value fields.

The value function of a well-posed instance is locally Lipschitz in space
with a quadratically growing constant and Holder-1/2 in time; the suites
measure the discrete analogues

    |V(t,x)-V(t,x')| / ((1+|x|+|x'|) |x-x'|)   (space ratio)
    |V(t,x)-V(t+s,x)| / ((1+|x|^2) sqrt(s))     (time ratio)

over the central region and flag instability under grid refinement, check
the short-horizon moment growth of simulated paths, and test the one-step
programming identity against the backward recursion.
"""

import json
from dataclasses import dataclass

import numpy as np

from ._backend import BACKEND_NAME
from .benchmarks import REGISTRY, get_builtin
from .dpp import bellman_backward, dpp_consistency_check
from .errors import ConfigError, GctlError, SolverError
from .grids import GridSpec
from .gsde import moment_check
from .hjb import solve_hjb
from .problem import load_problem


@dataclass
class RegularityReport:
    """Normalized space/time difference ratios of a value field."""

    space_ratio: float
    time_ratio: float
    growth_constant: float


def _strides(limit):
    s, out = 1, []
    while s <= limit:
        out.append(s)
        s *= 2
    return out or [1]


def regularity_report(V):
    """Measure the normalized ratios over the central region.

    Space pairs are taken along every axis at power-of-two strides; time
    pairs across layers likewise.
    """
    grid = V.grid
    mask = grid.central_mask()
    mesh = grid.mesh()
    vals = V.values
    space_ratio = 0.0
    for ax in range(grid.dim):
        n = grid.nx[ax]
        coords = mesh[ax]
        radius = np.sqrt(sum(m * m for m in mesh))
        for s in _strides(max(1, n // 4)):
            sl_a = [slice(None)] * grid.dim
            sl_b = [slice(None)] * grid.dim
            sl_a[ax] = slice(None, -s)
            sl_b[ax] = slice(s, None)
            sl_a, sl_b = tuple(sl_a), tuple(sl_b)
            pair_mask = mask[sl_a] & mask[sl_b]
            if not np.any(pair_mask):
                continue
            num = np.abs(vals[(slice(None),) + sl_b] - vals[(slice(None),) + sl_a])[
                :, pair_mask
            ]
            dist = np.abs(coords[sl_b] - coords[sl_a])[pair_mask]
            den = (1.0 + radius[sl_a][pair_mask] + radius[sl_b][pair_mask]) * dist
            space_ratio = max(space_ratio, float(np.max(num / den)))
    time_ratio = 0.0
    nt = V.nt
    r2 = sum(m * m for m in mesh)
    den_x = (1.0 + r2)[mask]
    for s in _strides(max(1, nt)):
        if s > nt:
            break
        dt_s = V.times[s] - V.times[0]
        num = np.abs(vals[s:] - vals[:-s])[:, mask]
        time_ratio = max(
            time_ratio, float(np.max(num / (den_x[None, :] * np.sqrt(dt_s))))
        )
    return RegularityReport(
        space_ratio=space_ratio,
        time_ratio=time_ratio,
        growth_constant=V.growth_constant(),
    )


def _check(name, measured, bound, passed, info=""):
    return {
        "name": name,
        "measured": None if measured is None else float(measured),
        "bound": None if bound is None else float(bound),
        "passed": bool(passed),
        "info": info,
    }


RATIO_FLOOR = 1e-8


def regularity_checks(problem, S, grid):
    """Ratios must grow by less than 50% from a 2x-coarser grid to this one."""
    coarse = grid.coarsened(2, 2)
    rep_c = regularity_report(solve_hjb(problem, S, coarse))
    rep_f = regularity_report(solve_hjb(problem, S, grid))
    out = []
    for label, c, f in (
        ("space", rep_c.space_ratio, rep_f.space_ratio),
        ("time", rep_c.time_ratio, rep_f.time_ratio),
    ):
        bound = max(1.5 * c, RATIO_FLOOR)
        out.append(
            _check(
                f"regularity-{label}-ratio",
                f,
                bound,
                f <= bound,
                f"coarse {c:.4g} -> fine {f:.4g}",
            )
        )
    out.append(
        _check(
            "quadratic-growth-constant",
            rep_f.growth_constant,
            None,
            np.isfinite(rep_f.growth_constant),
            "max |V| / (1 + |x|^2)",
        )
    )
    return out


def moment_checks(problem, S, seed):
    deltas = [f * problem.horizon for f in (0.4, 0.2, 0.1, 0.05)]
    rep = moment_check(problem, S, np.zeros(problem.n), deltas, 2000, seed)
    finite = all(np.isfinite(v) for v in rep.values) and np.isfinite(rep.slope)
    in_range = 0.8 <= rep.slope <= 2.3
    return [
        _check(
            "moment-sup-slope",
            rep.slope,
            None,
            finite and in_range,
            f"log-log slope of worst-case E sup |X - x0|^2 over {deltas}",
        ),
        _check(
            "moment-growth-constant",
            max(rep.c_estimates),
            None,
            finite,
            "max over deltas of value / ((1 + |x0|^2) delta)",
        ),
    ]


def dpp_checks(problem, S, grid, tolerance, value_probe=None):
    """Consistency residual at half-horizon, plus closed-form probes."""
    nt_half = grid.nt // 2
    delta = (grid.nt - nt_half) * (problem.horizon / grid.nt)
    rep = dpp_consistency_check(problem, S, grid, 0.0, delta)
    out = [
        _check(
            "dpp-consistency-residual",
            rep.residual,
            tolerance,
            rep.residual <= tolerance,
            f"delta={delta:.4g}; interpolation-error scale {rep.interp_error_bound:.3g}",
        )
    ]
    if value_probe is not None:
        entry, field = value_probe
        if entry.reference_value is not None:
            t0, x0 = entry.reference_point[0], entry.reference_point[1:]
            got = field.at(t0, np.atleast_1d(x0))
            err = abs(got - entry.reference_value)
            out.append(
                _check(
                    "dpp-reference-value",
                    err,
                    entry.tolerance,
                    err <= entry.tolerance,
                    f"V({t0}, {x0}) = {got:.6f} vs {entry.reference_value:.6f}",
                )
            )
        if entry.closed_form_text is not None:
            ref = entry.closed_form_layer(grid, 0.0)
            mask = grid.central_mask()
            err = float(np.max(np.abs(field.values[0] - ref)[mask]))
            out.append(
                _check(
                    "dpp-closed-form-sup",
                    err,
                    entry.tolerance,
                    err <= entry.tolerance,
                    "sup over the central region at t=0",
                )
            )
    return out


SUITES = ("regularity", "moments", "dpp", "all")


def resolve_source(source):
    """Builtin name or config path -> (entry-or-None, problem, S, grid)."""
    if str(source).upper() in REGISTRY:
        entry = get_builtin(source)
        problem, S, grid = entry.build()
        return entry, problem, S, grid
    problem, S, grid = load_problem(source)
    return None, problem, S, grid


def run_check_suite(source, suite, seed=20240501, out=None, grid_override=None):
    """Run the requested suite; returns (exit_code, report dict).

    Exit codes: 0 all checks pass, 2 configuration error, 3 solver error,
    4 at least one check failed.
    """
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")
    report = {
        "version": 1,
        "source": str(source),
        "suite": suite,
        "backend": BACKEND_NAME,
        "seed": int(seed),
        "error": None,
        "checks": [],
        "passed": False,
        "exit_code": 0,
    }
    code = 0
    try:
        entry, problem, S, grid = resolve_source(source)
        if grid_override:
            nx = grid_override.get("nx") or grid.nx
            nt = grid_override.get("nt") or grid.nt
            grid = GridSpec(grid.x_lo, grid.x_hi, nx, nt)
        checks = []
        if suite in ("regularity", "all"):
            checks += regularity_checks(problem, S, grid)
        if suite in ("moments", "all"):
            checks += moment_checks(problem, S, seed)
        if suite in ("dpp", "all"):
            tol = entry.dpp_tolerance if entry is not None else 2e-2
            probe = None
            field, _ = bellman_backward(problem, S, grid)
            if entry is not None:
                probe = (entry, field)
            checks += dpp_checks(problem, S, grid, tol, probe)
        report["checks"] = checks
        report["passed"] = all(c["passed"] for c in checks)
        code = 0 if report["passed"] else 4
    except ConfigError as err:
        report["error"] = f"{type(err).__name__}: {err}"
        code = 2
    except SolverError as err:
        report["error"] = f"{type(err).__name__}: {err}"
        code = 3
    except GctlError as err:
        report["error"] = f"{type(err).__name__}: {err}"
        code = 2
    report["exit_code"] = code
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return code, report
