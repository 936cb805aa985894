"""Command-line front end.

Subcommands: g-expect, solve-hjb, solve-dpp, simulate, check, bench, list.
All outputs are CSV or JSON for external plotting; runs with a fixed --seed
are bit-reproducible.  Exit codes: 0 success, 2 configuration error,
3 solver error, 4 check failure.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import expr as ex
from .benchmarks import get_builtin, list_builtins
from .checks import run_check_suite
from .dpp import bellman_backward
from .errors import ConfigError, ExprError, GctlError, SolverError
from .gheat import build_heat_grid, solve_gheat
from .grids import read_policy_csv
from .gsde import estimate_cost, schedule_family, simulate_paths
from .hjb import convergence_study, solve_hjb
from .problem import load_ambiguity, load_problem


def _apply_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _add_common(sp, config=True, seed=True, out=True, threads=True):
    if config:
        sp.add_argument("--config", help="problem config (JSON)")
        sp.add_argument("--builtin", help="benchmark name from `gctl list`")
    if seed:
        sp.add_argument("--seed", type=int, default=0, help="random seed")
    if threads:
        sp.add_argument("--threads", type=int, help="thread budget for BLAS pools")
    if out:
        sp.add_argument("--out", help="output file path")


def _resolve(args, need_problem=True):
    if getattr(args, "builtin", None):
        entry = get_builtin(args.builtin)
        problem, S, grid = entry.build()
        return entry, problem, S, grid
    if not getattr(args, "config", None):
        raise ConfigError("pass --config PATH or --builtin NAME")
    if need_problem:
        problem, S, grid = load_problem(args.config)
        return None, problem, S, grid
    return None, None, load_ambiguity(args.config), None


def _write_final_layer_csv(field, path):
    grid = field.grid
    cols = grid.node_columns()
    header = [f"x{a + 1}" for a in range(grid.dim)] + ["u"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        flat = field.values[-1].ravel()
        for i in range(flat.size):
            w.writerow([f"{c[i]:.17g}" for c in cols] + [f"{flat[i]:.17g}"])


def cmd_g_expect(args):
    if getattr(args, "builtin", None):
        _, _, S, _ = _resolve(args)
    else:
        _, _, S, _ = _resolve(args, need_problem=False)
    grid = build_heat_grid(S, args.time, h=args.h)
    field = solve_gheat(S, args.payoff, args.time, grid)
    value = field.interpolant(field.nt, "linear").at_point(np.zeros(grid.dim))
    print(f"expectation at the origin after t={args.time:g}: {value:.10g}")
    if args.out:
        _write_final_layer_csv(field, args.out)
        print(f"final layer written to {args.out}")
    return 0


def cmd_solve_hjb(args):
    entry, problem, S, grid = _resolve(args)
    if args.convergence:
        grids = [grid.coarsened(4, 16), grid.coarsened(2, 4), grid]
        reference = entry.closed_form_text if entry is not None else None
        rep = convergence_study(problem, S, grids, reference)
        payload = json.dumps(rep.to_json_dict(), indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(payload + "\n")
        else:
            print(payload)
        return 0
    field = solve_hjb(problem, S, grid)
    if args.out:
        field.write_csv(args.out)
        print(f"value field written to {args.out}")
    else:
        mid = tuple(n // 2 for n in grid.shape)
        print(f"V(0, center) = {field.values[0][mid]:.10g}")
    return 0


def cmd_solve_dpp(args):
    entry, problem, S, grid = _resolve(args)
    field, policy = bellman_backward(problem, S, grid)
    if args.out:
        field.write_csv(args.out)
        print(f"value field written to {args.out}")
    if args.policy:
        policy.write_csv(args.policy, value_field=field)
        print(f"policy written to {args.policy}")
    if not args.out and not args.policy:
        mid = tuple(n // 2 for n in grid.shape)
        print(f"V(0, center) = {field.values[0][mid]:.10g}")
    return 0


def _parse_x0(text, n):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ConfigError(f"--x0 needs {n} component(s)")
    return np.array([float(p) for p in parts])


def _open_loop_from_exprs(text, m, n_steps, times):
    sources = [s for s in text.split(";") if s.strip()]
    if len(sources) != m:
        raise ConfigError(f"--control needs {m} ';'-separated expression(s)")
    asts = [ex.parse_expr(s, 0, 0) for s in sources]
    seq = np.empty((n_steps, m))
    for k in range(n_steps):
        for c, ast in enumerate(asts):
            seq[k, c] = ex.eval_expr(ast, times[k], [], [])
    return seq


def _write_paths_csv(bundle, path):
    P, S1, n = bundle.X.shape
    d = bundle.B.shape[2]
    header = (
        ["path", "step", "t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"b{i + 1}" for i in range(d)]
        + [f"qv{i + 1}{j + 1}" for i in range(d) for j in range(i, d)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in range(P):
            for k in range(S1):
                row = [str(p), str(k), f"{bundle.times[k]:.17g}"]
                row += [f"{v:.17g}" for v in bundle.X[p, k]]
                row += [f"{v:.17g}" for v in bundle.B[p, k]]
                row += [
                    f"{bundle.qv[k, i, j]:.17g}" for i in range(d) for j in range(i, d)
                ]
                w.writerow(row)


def cmd_simulate(args):
    entry, problem, S, grid = _resolve(args)
    x0 = _parse_x0(args.x0, problem.n)
    n_steps = args.steps
    T = problem.horizon
    times = np.linspace(0.0, T, n_steps + 1)
    if args.policy:
        control = read_policy_csv(args.policy)
    elif args.control is not None:
        control = _open_loop_from_exprs(args.control, problem.m, n_steps, times)
    else:
        raise ConfigError("pass --policy P.csv or --control \"expr[;expr]\"")
    fam = schedule_family(S, n_steps, max(args.schedules, len(S.vertices)), args.seed)
    est = estimate_cost(problem, S, 0.0, x0, control, fam, args.paths, args.seed)
    print(
        f"worst-case cost estimate over {len(fam)} schedules: "
        f"{est.value:.6g} (std error {est.std_error:.3g})"
    )
    if args.out:
        bundle = simulate_paths(
            problem, S, x0, control, est.worst_schedule, args.paths, n_steps, args.seed
        )
        _write_paths_csv(bundle, args.out)
        print(f"worst-schedule paths written to {args.out}")
    return 0


def cmd_check(args):
    override = {}
    if args.nx:
        override["nx"] = tuple(args.nx)
    if args.nt:
        override["nt"] = args.nt
    source = args.builtin or args.config
    if not source:
        raise ConfigError("pass --config PATH or --builtin NAME")
    code, report = run_check_suite(
        source, args.suite, seed=args.seed, out=args.out, grid_override=override or None
    )
    for c in report["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        bound = "" if c["bound"] is None else f" (bound {c['bound']:.3g})"
        measured = "n/a" if c["measured"] is None else f"{c['measured']:.4g}"
        print(f"[{status}] {c['name']}: {measured}{bound}")
    if report["error"]:
        print(f"error: {report['error']}", file=sys.stderr)
    if not args.out:
        print(json.dumps(report, indent=2, sort_keys=True))
    return code


def _bench_workloads():
    rng = np.random.default_rng(0)
    nx = 1201
    u1 = rng.normal(size=(8, nx))
    K, J, nxs = 21, 2, 161
    v1 = rng.normal(size=nxs)
    a = np.abs(rng.normal(size=(K, J, nxs))) + 0.1
    b = rng.normal(size=(K, J, nxs))
    c = rng.normal(size=(K, J, nxs))
    M = rng.normal(size=(K, J, nxs, 1))
    from .dpp import quad_rule

    Z, W = quad_rule(1, 5)
    n2 = 81
    u2 = rng.normal(size=(n2, n2))
    g11 = np.array([1.0, 0.5])
    g12 = np.array([0.2, -0.1])
    g22 = np.array([1.0, 0.8])
    return {
        "gheat_step_1d": lambda k: k.gheat_step_1d(
            u1, 0.01, 1e-5, 0.0, 1.0, np.empty_like(u1)
        ),
        "gheat_step_2d": lambda k: k.gheat_step_2d(
            u2, 0.1, 0.1, 1e-4, g11, g12, g22, np.empty_like(u2)
        ),
        "hjb_step_1d": lambda k: k.hjb_step_1d(
            v1, 0.1, 1e-4, a, b, c, np.empty_like(v1)
        ),
        "dpp_step_1d": lambda k: k.dpp_step_1d(
            v1,
            -8.0,
            0.1,
            1e-3,
            b,
            M,
            c,
            Z,
            W,
            1,
            np.empty(nxs),
            np.empty(nxs, dtype=np.int32),
            np.empty(nxs, dtype=np.int32),
        ),
    }


def cmd_bench(args):
    from . import _kernels_py

    backends = [("python", _kernels_py)]
    try:
        from . import _kernels  # type: ignore[attr-defined]

        backends.append(("compiled", _kernels))
    except ImportError:
        print("compiled backend unavailable; timing the python kernels only")
    workloads = _bench_workloads()
    rows = []
    for name, fn in workloads.items():
        timings = {}
        for bname, mod in backends:
            fn(mod)  # warm up
            reps = args.repeat
            best = min(
                _time_once(fn, mod, inner=args.inner) for _ in range(reps)
            )
            timings[bname] = best * 1000.0 / args.inner
        row = {"kernel": name, **timings}
        if len(timings) == 2:
            row["speedup"] = timings["python"] / timings["compiled"]
        rows.append(row)
    width = max(len(r["kernel"]) for r in rows)
    header = f"{'kernel':<{width}}  python ms"
    if len(backends) == 2:
        header += "  compiled ms  speedup"
    print(header)
    for r in rows:
        line = f"{r['kernel']:<{width}}  {r['python']:9.4f}"
        if "compiled" in r:
            line += f"  {r['compiled']:11.4f}  {r['speedup']:7.1f}x"
        print(line)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["kernel", "python"] + (
                ["compiled", "speedup"] if len(backends) == 2 else []
            )
            w.writerow(cols)
            for r in rows:
                w.writerow([r.get(k, "") for k in cols])
        print(f"timings written to {args.out}")
    return 0


def _time_once(fn, mod, inner=50):
    t0 = time.perf_counter()
    for _ in range(inner):
        fn(mod)
    return time.perf_counter() - t0


def cmd_list(args):
    for line in list_builtins():
        print(line)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="gctl",
        description="solvers for stochastic optimal control under volatility uncertainty",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("g-expect", help="evaluate a sublinear expectation")
    _add_common(sp)
    sp.add_argument("--payoff", required=True, help="payoff expression in x1[,x2]")
    sp.add_argument("--time", type=float, required=True, help="increment duration")
    sp.add_argument("--h", type=float, default=0.01, help="grid spacing")
    sp.set_defaults(fn=cmd_g_expect)

    sp = sub.add_parser("solve-hjb", help="finite-difference value function")
    _add_common(sp)
    sp.add_argument("--convergence", action="store_true", help="emit a refinement study")
    sp.set_defaults(fn=cmd_solve_hjb)

    sp = sub.add_parser("solve-dpp", help="backward dynamic programming value/policy")
    _add_common(sp)
    sp.add_argument("--policy", help="write the minimizing policy to this CSV")
    sp.set_defaults(fn=cmd_solve_dpp)

    sp = sub.add_parser("simulate", help="scenario Monte Carlo cost estimate")
    _add_common(sp)
    sp.add_argument("--x0", required=True, help="initial state, comma separated")
    sp.add_argument("--policy", help="feedback policy CSV from solve-dpp")
    sp.add_argument("--control", help="open-loop control expression(s) of t, ';'-separated")
    sp.add_argument("--schedules", type=int, default=4, help="scenario family size")
    sp.add_argument("--paths", type=int, default=4096)
    sp.add_argument("--steps", type=int, default=256)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("check", help="run property/regularity suites")
    _add_common(sp)
    sp.add_argument(
        "--suite", default="all", choices=("regularity", "moments", "dpp", "all")
    )
    sp.add_argument("--nx", type=int, nargs="+", help="override grid node counts")
    sp.add_argument("--nt", type=int, help="override time steps")
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("bench", help="time the stepping kernels per backend")
    _add_common(sp, config=False, seed=False)
    sp.add_argument("--repeat", type=int, default=5)
    sp.add_argument("--inner", type=int, default=50)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("list", help="list built-in benchmarks")
    sp.set_defaults(fn=cmd_list)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    _apply_threads(getattr(args, "threads", None))
    try:
        return args.fn(args)
    except (ConfigError, ExprError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return 3
    except GctlError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
