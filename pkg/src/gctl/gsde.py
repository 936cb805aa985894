"""Scenario Monte Carlo for the controlled state equation.

The ambiguity over volatility is sampled through explicit scenarios: a
volatility schedule assigns one ambiguity vertex to each time step, which
pins down a simulatable probability law (quadratic variation gamma dt per
step, Brownian increments sqrt(gamma) xi sqrt(dt)).  The worst case over a
finite family of schedules is a statistically consistent lower bound of the
sublinear cost functional; enlarging the family can only raise it.

Reproducibility: path p draws all of its Gaussians from a counter-based
Philox stream keyed by (seed, p), so results are bitwise identical across
runs and independent of any parallel execution order.
"""

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import DimensionError, SimulationBlowup
from .grids import PolicyField
from .problem import discretize_controls


@dataclass(frozen=True)
class VolatilitySchedule:
    """Piecewise-constant vertex selection: one simulatable scenario."""

    vertex_index_per_step: tuple

    def __post_init__(self):
        object.__setattr__(
            self,
            "vertex_index_per_step",
            tuple(int(i) for i in self.vertex_index_per_step),
        )

    @property
    def step_count(self):
        return len(self.vertex_index_per_step)

    def validate(self, S):
        if any(not 0 <= i < len(S.vertices) for i in self.vertex_index_per_step):
            raise DimensionError("schedule references a vertex out of range")
        return self


def constant_schedule(vertex_index, n_steps):
    return VolatilitySchedule((int(vertex_index),) * n_steps)


def schedule_family(S, n_steps, size, seed=0):
    """All constant-vertex schedules plus random piecewise switchings.

    The first len(vertices) members are the constant schedules; the rest
    switch between vertices on a few random segments, deterministically in
    the seed.
    """
    J = len(S.vertices)
    fam = [constant_schedule(j, n_steps) for j in range(J)]
    rng = np.random.default_rng(seed)
    while len(fam) < size:
        pieces = int(rng.integers(2, 9))
        cuts = np.sort(rng.integers(1, n_steps, size=pieces - 1))
        idx = np.empty(n_steps, dtype=int)
        start = 0
        for c in list(cuts) + [n_steps]:
            idx[start:c] = int(rng.integers(0, J))
            start = c
        fam.append(VolatilitySchedule(tuple(idx)))
    return fam[:size]


@dataclass
class PathBundle:
    """Simulated paths: states X (P, S+1, n), noise B (P, S+1, d), and the
    quadratic variation (S+1, d, d), which is schedule-determined and hence
    shared by every path."""

    times: np.ndarray
    X: np.ndarray
    B: np.ndarray
    qv: np.ndarray
    seed: int


def _path_noise(seed, n_paths, n_steps, d):
    out = np.empty((n_paths, n_steps, d))
    for p in range(n_paths):
        gen = np.random.Generator(
            np.random.Philox(key=(int(seed) & (2**64 - 1)) * 2**64 + p)
        )
        out[p] = gen.standard_normal((n_steps, d))
    return out


def _control_provider(problem, control, n_steps, times):
    """Normalize the control argument to a per-step callable of the states."""
    m = problem.m
    if isinstance(control, PolicyField):
        def fb(k, X):
            return control.control_at(times[k], X)

        return fb
    arr = np.asarray(control, dtype=float)
    if arr.ndim == 1:
        if arr.shape != (m,):
            raise DimensionError(f"constant control must have {m} components")
        seq = np.broadcast_to(arr, (n_steps, m))
    elif arr.ndim == 2:
        if arr.shape != (n_steps, m):
            raise DimensionError(f"open-loop control must be ({n_steps}, {m})")
        seq = arr
    else:
        raise DimensionError("control must be a vector, a sequence, or a PolicyField")

    def ol(k, X):
        return np.broadcast_to(seq[k], (X.shape[0], m))

    return ol


def _eval_coeff_paths(ast, t, X, V):
    xcols = [X[:, i] for i in range(X.shape[1])]
    vcols = [V[:, j] for j in range(V.shape[1])]
    out = ex.eval_vec(ast, t, xcols, vcols)
    return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],))


def simulate_paths(problem, S, x0, control, sched, n_paths, n_steps, seed, t0=0.0):
    """Euler scheme over [t0, T] under one volatility schedule.

    X <- X + b dt + sum_ij h_ij gamma_ij dt + sigma sqrt(gamma) xi sqrt(dt),
    with the quadratic variation advanced by gamma dt per step.  Determinism:
    output is a pure function of (seed, inputs).
    """
    sched.validate(S)
    if sched.step_count != n_steps:
        raise DimensionError("schedule length must equal n_steps")
    n, d, m = problem.n, problem.d, problem.m
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (n,):
        raise DimensionError(f"x0 must have {n} components")
    T = problem.horizon
    dt = (T - t0) / n_steps
    times = t0 + dt * np.arange(n_steps + 1)
    noise = _path_noise(seed, n_paths, n_steps, d)
    roots = S.sqrt_vertices()
    gammas = S.vertex_array()

    X = np.empty((n_paths, n_steps + 1, n))
    B = np.zeros((n_paths, n_steps + 1, d))
    qv = np.zeros((n_steps + 1, d, d))
    X[:, 0] = x0
    ctrl = _control_provider(problem, control, n_steps, times)
    sqdt = np.sqrt(dt)

    for k in range(n_steps):
        j = sched.vertex_index_per_step[k]
        gam = gammas[j]
        t = times[k]
        Xk = X[:, k]
        V = np.atleast_2d(ctrl(k, Xk))
        dB = noise[:, k] @ roots[j].T * sqdt  # (P, d)
        drift = np.empty((n_paths, n))
        for i in range(n):
            drift[:, i] = _eval_coeff_paths(problem.b[i], t, Xk, V)
        for (i1, j1), lst in problem.h.items():
            w = gam[i1, j1] * (1.0 if i1 == j1 else 2.0)
            if w != 0.0:
                for i in range(n):
                    drift[:, i] += w * _eval_coeff_paths(lst[i], t, Xk, V)
        diff = np.zeros((n_paths, n))
        for i in range(n):
            for e in range(d):
                sig_ie = _eval_coeff_paths(problem.sigma[i][e], t, Xk, V)
                diff[:, i] += sig_ie * dB[:, e]
        Xnew = Xk + drift * dt + diff
        if not np.all(np.isfinite(Xnew)):
            badp, badi = np.argwhere(~np.isfinite(Xnew))[0]
            raise SimulationBlowup(
                f"non-finite state at path {badp}, step {k + 1}", path=int(badp), step=k + 1
            )
        X[:, k + 1] = Xnew
        B[:, k + 1] = B[:, k] + dB
        qv[k + 1] = qv[k] + gam * dt
    return PathBundle(times=times, X=X, B=B, qv=qv, seed=int(seed))


@dataclass
class ScenarioEstimate:
    """Worst-case-over-schedules Monte Carlo estimate of the cost."""

    value: float
    std_error: float
    worst_schedule: VolatilitySchedule


def _cost_samples(problem, S, bundle, control, sched):
    """Per-path terminal + running cost along a simulated bundle."""
    times = bundle.times
    n_steps = len(times) - 1
    dt = times[1] - times[0]
    gammas = S.vertex_array()
    P = bundle.X.shape[0]
    total = np.zeros(P)
    ctrl = _control_provider(problem, control, n_steps, times)
    for k in range(n_steps):
        t = times[k]
        Xk = bundle.X[:, k]
        V = np.atleast_2d(ctrl(k, Xk))
        gam = gammas[sched.vertex_index_per_step[k]]
        total += _eval_coeff_paths(problem.f, t, Xk, V) * dt
        for (i1, j1), e in problem.g.items():
            w = gam[i1, j1] * (1.0 if i1 == j1 else 2.0)
            if w != 0.0:
                total += w * _eval_coeff_paths(e, t, Xk, V) * dt
    XT = bundle.X[:, -1]
    phi_vals = ex.eval_vec(problem.phi, 0.0, [XT[:, i] for i in range(problem.n)], [])
    total += np.broadcast_to(np.asarray(phi_vals, dtype=float), (P,))
    return total


def estimate_cost(problem, S, t, x0, control, schedule_family, n_paths, seed):
    """max over the schedule family of Monte Carlo cost means.

    A lower-bound estimator of the worst-case cost (the family is a finite
    subset of the scenario class); the same noise drives every schedule, so
    enlarging the family never decreases the value.
    """
    if not schedule_family:
        raise DimensionError("schedule family must be nonempty")
    n_steps = schedule_family[0].step_count
    if any(s.step_count != n_steps for s in schedule_family):
        raise DimensionError("all schedules must share one step count")
    best = None
    for sched in schedule_family:
        bundle = simulate_paths(
            problem, S, x0, control, sched, n_paths, n_steps, seed, t0=t
        )
        samples = _cost_samples(problem, S, bundle, control, sched)
        mean = float(samples.mean())
        se = float(samples.std(ddof=1) / np.sqrt(len(samples))) if len(samples) > 1 else 0.0
        if best is None or mean > best[0]:
            best = (mean, se, sched)
    return ScenarioEstimate(value=best[0], std_error=best[1], worst_schedule=best[2])


@dataclass
class MomentReport:
    """Short-horizon moment growth: values m(delta), log-log slope, and the
    ratios m(delta) / ((1 + |x0|^2) delta) estimating the growth constant."""

    deltas: list
    values: list
    slope: float
    c_estimates: list


def moment_check(problem, S, x0, deltas, n_paths, seed, n_steps=256, control=None):
    """Worst-case mean of sup_{s <= delta} |X_s - x0|^2 against delta.

    Pure diffusion grows linearly in delta (slope 1), pure drift
    quadratically (slope 2).  Constant-vertex schedules only; the control
    defaults to the first discretized control vector.
    """
    deltas = sorted(float(dl) for dl in deltas)
    if control is None:
        control = discretize_controls(problem.control_set)[0]
    d_max = deltas[-1]
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    values = []
    # simulate once per vertex over [0, d_max]; prefix maxima give every delta
    sup_by_vertex = []
    for j in range(len(S.vertices)):
        sched = constant_schedule(j, n_steps)
        sub = _clone_with_horizon(problem, d_max)
        bundle = simulate_paths(sub, S, x0, control, sched, n_paths, n_steps, seed)
        dev = np.sum((bundle.X - x0[None, None, :]) ** 2, axis=2)  # (P, S+1)
        sup_by_vertex.append(np.maximum.accumulate(dev, axis=1))
    for dl in deltas:
        k = max(1, int(round(dl / d_max * n_steps)))
        values.append(max(float(s[:, k].mean()) for s in sup_by_vertex))
    slope = float(np.polyfit(np.log(deltas), np.log(np.maximum(values, 1e-300)), 1)[0])
    norm = 1.0 + float(np.sum(x0**2))
    c_est = [v / (norm * dl) for v, dl in zip(values, deltas)]
    return MomentReport(deltas=list(deltas), values=values, slope=slope, c_estimates=c_est)


def _clone_with_horizon(problem, horizon):
    import copy

    sub = copy.copy(problem)
    sub.horizon = float(horizon)
    return sub


def worst_schedule_along_nominal(policy, problem, S, x0):
    """Schedule of worst vertices read off the policy along the noise-free path.

    Starting at x0, advance by the drift under the stored control and worst
    vertex at the current point; collect the vertex indices.  This turns the
    feedback worst-case data into a simulatable open-loop schedule.
    """
    n_steps = len(policy.times) - 1
    dt = policy.times[1] - policy.times[0]
    gammas = S.vertex_array()
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    idx = []
    for k in range(n_steps):
        t = policy.times[k]
        j = policy.vertex_at(t, x)
        idx.append(j)
        v = policy.control_at(t, x)
        gam = gammas[j]
        drift = problem.b_at(t, x, v).copy()
        for (i1, j1), lst in problem.h.items():
            w = gam[i1, j1] * (1.0 if i1 == j1 else 2.0)
            if w != 0.0:
                drift += w * np.array([ex.eval_expr(c, t, x, v) for c in lst])
        x = x + drift * dt
    return VolatilitySchedule(tuple(idx))
