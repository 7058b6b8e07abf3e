"""Monte Carlo verification of the all-time bound.

The harness simulates many independent trajectories of the online
recursion, estimates the initial-condition term, fits the tail-exponent
constant from simulated weighted noise sums when none is supplied, and
compares the empirical all-time event frequency against the closed-form
lower bound.

Reproducibility contract: every result is a pure function of the
experiment configuration, including the master seed.  Each trajectory
owns the stream ``rng.stream(master_seed, index)``; trajectories are
processed in fixed-size batches and assembled by index, so the outputs
are bit-identical for any batch split or worker count.

Grid sweeps over the radius parameters reuse one trajectory ensemble
(common random numbers); violation counts are therefore exactly, not
statistically, monotone across the grids.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytic import AnalyticSolution, PolicyEvalProblem, solve_problem
from .bounds import (
    TailSummary,
    build_query,
    check_n0,
    decay_curve,
    floor_term,
    tail_probability,
)
from .errors import InfeasibleStart, InsufficientTailData, NonFinite, ValidationError
from .rng import stream
from .schedule import StepSchedule

WILSON_Z = 1.959963984540054  # two-sided 95%
MAX_ERR_MATRIX_CELLS = 40_000_000  # float32 error matrix cap (~160 MB)
_NONFINITE_CHECK_STRIDE = 256


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    """Wilson score interval; valid at 0 and n successes."""
    if n <= 0:
        raise ValidationError("interval needs a positive sample count")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def wilson_half_width(successes: int, n: int, z: float = WILSON_Z) -> float:
    lo, hi = wilson_interval(successes, n, z)
    return 0.5 * (hi - lo)


@dataclass
class ExperimentConfig:
    """Everything a run depends on; results are a pure function of this."""

    problem: PolicyEvalProblem
    schedule: StepSchedule
    n0: int
    horizon: int
    n_trajectories: int
    master_seed: int
    epsilon: float
    delta: float
    D_const: float | None = None
    initial_state_policy: str = "stationary"
    initial_x: np.ndarray | None = None
    epsilon_grid: tuple[float, ...] | None = None
    delta_grid: tuple[float, ...] | None = None
    batch_size: int = 512

    def __post_init__(self) -> None:
        if self.n_trajectories < 1:
            raise ValidationError("need at least one trajectory")
        if self.n0 < 0 or self.horizon <= self.n0:
            raise ValidationError(f"need horizon > n0 >= 0, got n0={self.n0}, horizon={self.horizon}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValidationError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0.0 < self.delta <= 1.0:
            raise ValidationError(f"delta must lie in (0, 1], got {self.delta}")
        policy = self.initial_state_policy
        if policy not in ("stationary", "uniform") and not policy.startswith("fixed:"):
            raise ValidationError(
                f"initial_state_policy must be 'stationary', 'uniform' or 'fixed:<i>', got {policy!r}"
            )
        d = self.problem.n_features
        if self.initial_x is None:
            self.initial_x = np.zeros(d)
        else:
            self.initial_x = np.asarray(self.initial_x, dtype=float)
            if self.initial_x.shape != (d,):
                raise ValidationError(f"initial_x must have shape ({d},)")
        for name, grid in (("epsilon_grid", self.epsilon_grid), ("delta_grid", self.delta_grid)):
            if grid is not None and not all(0.0 < g <= 1.0 for g in grid):
                raise ValidationError(f"{name} entries must lie in (0, 1]")

    def fixed_initial_state(self) -> int:
        if self.initial_state_policy.startswith("fixed:"):
            i = int(self.initial_state_policy.split(":", 1)[1])
            if not 0 <= i < self.problem.n_states:
                raise ValidationError(f"fixed initial state {i} out of range")
            return i
        return -1


# ---------------------------------------------------------------------------
# batched simulation engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _EnsembleSpec:
    """Picklable bundle of everything one worker needs."""

    cum_rows: np.ndarray
    cum_pi: np.ndarray
    phi: np.ndarray
    next_phi: np.ndarray
    rewards: np.ndarray
    gamma: float
    steps: np.ndarray
    x_star: np.ndarray
    initial_x: np.ndarray
    init_policy: str
    init_state: int
    master_seed: int
    n0: int
    horizon: int
    eps_grid: np.ndarray | None = None
    decay: np.ndarray | None = None
    primary_eps: float = 0.0
    primary_floor: float = math.inf
    count_violations: bool = False
    track_noise_sum: bool = False
    offset_sol: np.ndarray | None = None
    linear_sol: np.ndarray | None = None
    expected_offset: np.ndarray | None = None
    expected_linear: np.ndarray | None = None
    fit_ms: np.ndarray | None = None
    diag_ms: np.ndarray | None = None
    want_err_matrix: bool = False


@dataclass
class _ChunkOut:
    lo: int
    hi: int
    err_n0: np.ndarray
    max_excess: np.ndarray | None
    per_m_counts: np.ndarray | None
    err_max_per_m: np.ndarray | None
    noise_sums: np.ndarray | None
    diag_err: np.ndarray | None
    err_matrix: np.ndarray | None


def _simulate_chunk(spec: _EnsembleSpec, lo: int, hi: int) -> _ChunkOut:
    B = hi - lo
    T = spec.horizon
    s, d = spec.phi.shape
    n0 = spec.n0
    span = T - n0 + 1

    us = np.empty((B, T + 1))
    for j, i in enumerate(range(lo, hi)):
        us[j] = stream(spec.master_seed, i).random(T + 1)

    if spec.init_policy == "fixed":
        init = np.full(B, spec.init_state, dtype=np.int64)
    elif spec.init_policy == "uniform":
        init = np.minimum((us[:, 0] * s).astype(np.int64), s - 1)
    else:
        init = np.minimum(
            np.searchsorted(spec.cum_pi, us[:, 0], side="right"), s - 1
        ).astype(np.int64)

    states = np.empty((B, T + 1), dtype=np.int64)
    states[:, 0] = init
    for n in range(T):
        rows = spec.cum_rows[states[:, n]]
        states[:, n + 1] = np.minimum((rows <= us[:, n + 1, None]).sum(axis=1), s - 1)
    del us

    x = np.repeat(spec.initial_x[None, :], B, axis=0)
    err_n0 = np.empty(B)
    n_eps = 0 if spec.eps_grid is None else len(spec.eps_grid)
    max_excess = np.full((B, n_eps), -np.inf) if n_eps else None
    per_m_counts = np.zeros(span, dtype=np.int64) if spec.count_violations else None
    err_max_per_m = np.zeros(span) if spec.count_violations else None
    noise_sums = (
        np.empty((B, len(spec.fit_ms))) if spec.track_noise_sum and spec.fit_ms is not None else None
    )
    diag_err = np.empty((B, len(spec.diag_ms))) if spec.diag_ms is not None else None
    err_matrix = np.empty((B, span), dtype=np.float32) if spec.want_err_matrix else None

    S = np.zeros((B, d))
    fit_ptr = 0
    diag_ptr = 0

    def collect(m: int, err: np.ndarray) -> None:
        nonlocal diag_ptr
        idx = m - n0
        if idx == 0:
            err_n0[:] = err
        if err_matrix is not None:
            err_matrix[:, idx] = err
        if max_excess is not None:
            assert spec.decay is not None and spec.eps_grid is not None
            np.maximum(
                max_excess, err[:, None] - spec.decay[idx] * spec.eps_grid[None, :], out=max_excess
            )
        if per_m_counts is not None:
            assert spec.decay is not None
            excess = err - spec.primary_eps * spec.decay[idx]
            per_m_counts[idx] += int(np.count_nonzero(excess > spec.primary_floor))
            err_max_per_m[idx] = max(err_max_per_m[idx], float(err.max()))
        if diag_err is not None and diag_ptr < len(spec.diag_ms) and spec.diag_ms[diag_ptr] == m:
            diag_err[:, diag_ptr] = err
            diag_ptr += 1

    if n0 == 0:
        collect(0, np.linalg.norm(x - spec.x_star, axis=1))

    for n in range(T):
        y = states[:, n]
        y_next = states[:, n + 1]
        phi_y = spec.phi[y]
        a = spec.steps[n]
        if spec.track_noise_sum and n >= n0:
            mgap = ((spec.phi[y_next] - spec.next_phi[y]) * x).sum(axis=1)
            xi = spec.gamma * phi_y * mgap[:, None]
            xi += ((spec.linear_sol[y_next] - spec.expected_linear[y]) @ x[..., None])[..., 0]
            xi += spec.offset_sol[y_next] - spec.expected_offset[y]
            if n == n0:
                S = a * xi
            else:
                S = (1.0 - a) * S + a * xi
            if (
                noise_sums is not None
                and fit_ptr < len(spec.fit_ms)
                and spec.fit_ms[fit_ptr] == n
            ):
                noise_sums[:, fit_ptr] = np.linalg.norm(S, axis=1)
                fit_ptr += 1
        proj_now = (phi_y * x).sum(axis=1)
        proj_next = (spec.phi[y_next] * x).sum(axis=1)
        x = x + a * phi_y * (spec.rewards[y] + spec.gamma * proj_next - proj_now)[:, None]
        if (n % _NONFINITE_CHECK_STRIDE == 0 or n == T - 1) and not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise NonFinite(f"trajectory {lo + bad} became non-finite by step {n + 1}")
        m = n + 1
        if m >= n0:
            collect(m, np.linalg.norm(x - spec.x_star, axis=1))

    return _ChunkOut(
        lo=lo,
        hi=hi,
        err_n0=err_n0,
        max_excess=max_excess,
        per_m_counts=per_m_counts,
        err_max_per_m=err_max_per_m,
        noise_sums=noise_sums,
        diag_err=diag_err,
        err_matrix=err_matrix,
    )


def _worker(args: tuple[_EnsembleSpec, int, int]) -> _ChunkOut:
    return _simulate_chunk(*args)


@dataclass
class _EnsembleOut:
    err_n0: np.ndarray
    max_excess: np.ndarray | None
    per_m_counts: np.ndarray | None
    err_max_per_m: np.ndarray | None
    noise_sums: np.ndarray | None
    diag_err: np.ndarray | None
    err_matrix: np.ndarray | None


def _run_ensemble(spec: _EnsembleSpec, n: int, batch_size: int, jobs: int) -> _EnsembleOut:
    chunks = [(spec, lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
    if jobs <= 1 or len(chunks) == 1:
        outs = [_simulate_chunk(*c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_worker, chunks))

    span = spec.horizon - spec.n0 + 1
    err_n0 = np.empty(n)
    n_eps = 0 if spec.eps_grid is None else len(spec.eps_grid)
    max_excess = np.empty((n, n_eps)) if n_eps else None
    per_m_counts = np.zeros(span, dtype=np.int64) if spec.count_violations else None
    err_max_per_m = np.zeros(span) if spec.count_violations else None
    noise_sums = (
        np.empty((n, len(spec.fit_ms)))
        if spec.track_noise_sum and spec.fit_ms is not None
        else None
    )
    diag_err = np.empty((n, len(spec.diag_ms))) if spec.diag_ms is not None else None
    err_matrix = np.empty((n, span), dtype=np.float32) if spec.want_err_matrix else None
    for out in outs:
        sl = slice(out.lo, out.hi)
        err_n0[sl] = out.err_n0
        if max_excess is not None:
            max_excess[sl] = out.max_excess
        if per_m_counts is not None:
            per_m_counts += out.per_m_counts
            np.maximum(err_max_per_m, out.err_max_per_m, out=err_max_per_m)
        if noise_sums is not None:
            noise_sums[sl] = out.noise_sums
        if diag_err is not None:
            diag_err[sl] = out.diag_err
        if err_matrix is not None:
            err_matrix[sl] = out.err_matrix
    return _EnsembleOut(
        err_n0=err_n0,
        max_excess=max_excess,
        per_m_counts=per_m_counts,
        err_max_per_m=err_max_per_m,
        noise_sums=noise_sums,
        diag_err=diag_err,
        err_matrix=err_matrix,
    )


def _base_spec(config: ExperimentConfig, analytic: AnalyticSolution, horizon: int, **kw) -> _EnsembleSpec:
    problem = config.problem
    return _EnsembleSpec(
        cum_rows=problem.chain.cumulative_rows(),
        cum_pi=np.cumsum(analytic.stationary.pi),
        phi=problem.phi,
        next_phi=problem.next_phi,
        rewards=problem.rewards,
        gamma=problem.gamma,
        steps=config.schedule.steps(0, horizon),
        x_star=analytic.x_star,
        initial_x=config.initial_x,
        init_policy="fixed" if config.initial_state_policy.startswith("fixed:") else config.initial_state_policy,
        init_state=config.fixed_initial_state(),
        master_seed=config.master_seed,
        n0=config.n0,
        horizon=horizon,
        **kw,
    )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PInitEstimate:
    value: float
    interval: tuple[float, float]
    n_trajectories: int


def estimate_p_init(
    config: ExperimentConfig,
    jobs: int = 1,
    analytic: AnalyticSolution | None = None,
) -> PInitEstimate:
    """Fraction of trajectories whose error at the start index exceeds epsilon.

    Simulates from step 0 to n0 with the same streams the full experiment
    uses, so the estimate matches the full run exactly.
    """
    analytic = analytic if analytic is not None else solve_problem(config.problem)
    spec = _base_spec(config, analytic, horizon=config.n0)
    out = _run_ensemble(spec, config.n_trajectories, config.batch_size, jobs)
    exceed = int(np.count_nonzero(out.err_n0 > config.epsilon))
    return PInitEstimate(
        value=exceed / config.n_trajectories,
        interval=wilson_interval(exceed, config.n_trajectories),
        n_trajectories=config.n_trajectories,
    )


@dataclass(frozen=True)
class TailFit:
    """Least-squares fit of the tail-exponent constant.

    ``value`` regresses the log tail frequencies on delta^2 / tail_weight
    through the origin; ``conservative`` is the largest constant that
    bounds every grid point from above.
    """

    value: float
    conservative: float
    n_points: int
    residual_rms: float


def fit_tail_exponent(points) -> TailFit:
    """Fit the exponent from (tail_frequency, delta, tail_weight, dims) tuples.

    Points with frequency 0 or 1 carry no information and are dropped;
    if none remain the fit is impossible.
    """
    xs: list[float] = []
    ys: list[float] = []
    for p_hat, delta, weight, dims in points:
        if not 0.0 < p_hat < 1.0:
            continue
        xs.append(delta * delta / weight)
        ys.append(-math.log(p_hat / (2.0 * dims)))
    if not xs:
        raise InsufficientTailData("every tail frequency is 0 or 1; widen the delta grid")
    x = np.asarray(xs)
    y = np.asarray(ys)
    value = float((x * y).sum() / (x * x).sum())
    if value <= 0.0:
        raise InsufficientTailData("tail frequencies are inconsistent with an exponential decay")
    resid = y - value * x
    return TailFit(
        value=value,
        conservative=float(np.min(y / x)),
        n_points=len(xs),
        residual_rms=float(np.sqrt(np.mean(resid * resid))),
    )


DEFAULT_FIT_QUANTILES = (0.50, 0.65, 0.75, 0.83, 0.88, 0.92, 0.95, 0.97, 0.98)


def _default_fit_ms(n0: int, horizon: int, count: int = 16) -> np.ndarray:
    """Tail indices to fit at; the sum bounded at index m has upper limit m-1,
    so indices run over [n0+1, horizon] and are recorded one step earlier."""
    ms = np.unique(np.geomspace(n0 + 1, horizon, count).astype(np.int64))
    return ms[ms > n0]


def _fit_points(
    noise_sums: np.ndarray,
    fit_ms: np.ndarray,
    delta_grid: np.ndarray,
    schedule: StepSchedule,
    n0: int,
    dims: int,
) -> list[tuple[float, float, float, int]]:
    points = []
    for j, m in enumerate(fit_ms.tolist()):
        w = schedule.tail_weight(n0, int(m))
        col = noise_sums[:, j]
        for delta in delta_grid.tolist():
            p_hat = float(np.count_nonzero(col > delta)) / len(col)
            points.append((p_hat, float(delta), w, dims))
    return points


def fit_tail_exponent_from_sim(
    config: ExperimentConfig,
    delta_grid=None,
    jobs: int = 1,
    analytic: AnalyticSolution | None = None,
) -> TailFit:
    """Simulate the weighted noise sums and fit the tail exponent from their tails.

    When no delta grid is given, one is derived from pooled quantiles of the
    observed sums (deterministic given the configuration).
    """
    analytic = analytic if analytic is not None else solve_problem(config.problem)
    fit_ms = _default_fit_ms(config.n0, config.horizon)
    spec = _base_spec(
        config,
        analytic,
        horizon=config.horizon,
        track_noise_sum=True,
        offset_sol=analytic.poisson.offset,
        linear_sol=analytic.poisson.linear,
        expected_offset=analytic.poisson.expected_offset,
        expected_linear=analytic.poisson.expected_linear,
        fit_ms=fit_ms - 1,  # record one step before each tail index
    )
    out = _run_ensemble(spec, config.n_trajectories, config.batch_size, jobs)
    assert out.noise_sums is not None and np.all(np.isfinite(out.noise_sums))
    if delta_grid is None:
        pooled = out.noise_sums.ravel()
        delta_grid = np.unique(np.quantile(pooled, DEFAULT_FIT_QUANTILES))
        delta_grid = delta_grid[delta_grid > 0.0]
    else:
        delta_grid = np.asarray(list(delta_grid), dtype=float)
        if len(delta_grid) < 3:
            raise ValidationError("tail fit needs at least 3 grid points")
    points = _fit_points(
        out.noise_sums, fit_ms, delta_grid, config.schedule, config.n0, config.problem.n_features
    )
    return fit_tail_exponent(points)


@dataclass
class GridRow:
    epsilon: float
    delta: float
    floor: float
    violations: int
    alltime_prob: float
    interval: tuple[float, float]
    tail_sum: float
    theoretical_lower_bound: float
    vacuous: bool


@dataclass
class ExperimentResult:
    """Outcome of the all-time experiment (serialization omits wall time,
    which is the one field that is not a pure function of the config)."""

    n_trajectories: int
    n0: int
    horizon: int
    master_seed: int
    epsilon: float
    delta: float
    empirical_alltime_prob: float
    alltime_interval: tuple[float, float]
    violations: int
    empirical_p_init: float
    p_init_interval: tuple[float, float]
    p_init_source: str
    theoretical_lower_bound: float
    tail: TailSummary
    floor: float
    D_used: float
    fitted: TailFit | None
    per_m_violation_counts: np.ndarray
    per_m_err_max: np.ndarray
    radius: np.ndarray
    grid: list[GridRow]
    err_quantiles: dict[str, np.ndarray] | None
    wall_time: float = field(default=0.0, compare=False)

    def as_dict(self) -> dict:
        out = {
            "n_trajectories": self.n_trajectories,
            "n0": self.n0,
            "horizon": self.horizon,
            "master_seed": self.master_seed,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "empirical_alltime_prob": self.empirical_alltime_prob,
            "alltime_interval": list(self.alltime_interval),
            "violations": self.violations,
            "empirical_p_init": self.empirical_p_init,
            "p_init_interval": list(self.p_init_interval),
            "p_init_source": self.p_init_source,
            "theoretical_lower_bound": self.theoretical_lower_bound,
            "tail_sum": self.tail.tail_sum,
            "vacuous": self.tail.vacuous,
            "floor": self.floor,
            "D_used": self.D_used,
            "fitted_D": None if self.fitted is None else self.fitted.value,
            "fit": None
            if self.fitted is None
            else {
                "value": self.fitted.value,
                "conservative": self.fitted.conservative,
                "n_points": self.fitted.n_points,
                "residual_rms": self.fitted.residual_rms,
            },
            "per_m_violation_counts": self.per_m_violation_counts.tolist(),
            "grid": [
                {
                    "epsilon": row.epsilon,
                    "delta": row.delta,
                    "floor": row.floor,
                    "violations": row.violations,
                    "alltime_prob": row.alltime_prob,
                    "interval": list(row.interval),
                    "tail_sum": row.tail_sum,
                    "theoretical_lower_bound": row.theoretical_lower_bound,
                    "vacuous": row.vacuous,
                }
                for row in self.grid
            ],
        }
        return out


def run_alltime_experiment(
    config: ExperimentConfig,
    jobs: int = 1,
    analytic: AnalyticSolution | None = None,
) -> ExperimentResult:
    """Run the ensemble once and verify the all-time radius event.

    A trajectory violates the event if at any step m in [n0, horizon] its
    error exceeds the radius; the comparison is made in excess form
    (error minus the decaying part against the floor), which makes the
    grid monotonicity exact.  The theoretical lower bound uses the
    supplied tail-exponent constant, or one fitted from the same ensemble.
    """
    t0 = time.monotonic()
    problem = config.problem
    analytic = analytic if analytic is not None else solve_problem(problem)
    constants = analytic.constants
    sched = config.schedule
    n0, horizon = config.n0, config.horizon
    dims = problem.n_features
    chk = check_n0(constants, sched, n0)
    if not chk.feasible:
        raise InfeasibleStart(
            f"start index {n0} infeasible (margin {chk.margin:.6g}); "
            f"smallest feasible is {chk.smallest_feasible}"
        )

    eps_grid = list(config.epsilon_grid) if config.epsilon_grid else []
    if config.epsilon not in eps_grid:
        eps_grid = [config.epsilon] + eps_grid
    delta_grid = list(config.delta_grid) if config.delta_grid else []
    if config.delta not in delta_grid:
        delta_grid = [config.delta] + delta_grid
    eps_arr = np.asarray(eps_grid)
    i_primary = eps_grid.index(config.epsilon)

    decay = decay_curve(constants, sched, n0, horizon)
    primary_floor = floor_term(constants, sched, n0, config.epsilon, config.delta)
    need_fit = config.D_const is None
    fit_ms = _default_fit_ms(n0, horizon) if need_fit else None
    span = horizon - n0 + 1
    want_matrix = config.n_trajectories * span <= MAX_ERR_MATRIX_CELLS

    spec = _base_spec(
        config,
        analytic,
        horizon=horizon,
        eps_grid=eps_arr,
        decay=decay,
        primary_eps=config.epsilon,
        primary_floor=primary_floor,
        count_violations=True,
        track_noise_sum=need_fit,
        offset_sol=analytic.poisson.offset if need_fit else None,
        linear_sol=analytic.poisson.linear if need_fit else None,
        expected_offset=analytic.poisson.expected_offset if need_fit else None,
        expected_linear=analytic.poisson.expected_linear if need_fit else None,
        fit_ms=None if fit_ms is None else fit_ms - 1,
        want_err_matrix=want_matrix,
    )
    out = _run_ensemble(spec, config.n_trajectories, config.batch_size, jobs)
    assert out.max_excess is not None and out.per_m_counts is not None

    n = config.n_trajectories
    p_init_exceed = int(np.count_nonzero(out.err_n0 > config.epsilon))
    p_init_hat = p_init_exceed / n

    fitted: TailFit | None = None
    if need_fit:
        assert out.noise_sums is not None and fit_ms is not None
        pooled = out.noise_sums.ravel()
        fit_deltas = np.unique(np.quantile(pooled, DEFAULT_FIT_QUANTILES))
        fit_deltas = fit_deltas[fit_deltas > 0.0]
        fitted = fit_tail_exponent(
            _fit_points(out.noise_sums, fit_ms, fit_deltas, sched, n0, dims)
        )
        d_used = fitted.value
    else:
        d_used = float(config.D_const)

    query = build_query(
        constants,
        sched,
        epsilon=config.epsilon,
        delta=config.delta,
        n0=n0,
        horizon=horizon,
        D_const=d_used,
        p_init=p_init_hat,
        p_init_source="fitted-ensemble" if need_fit else "empirical",
    )
    tail = tail_probability(query, dims, sched, constants)

    violations = int(np.count_nonzero(out.max_excess[:, i_primary] > primary_floor))
    alltime_prob = 1.0 - violations / n

    grid_rows: list[GridRow] = []
    for eps in eps_grid:
        i_eps = eps_grid.index(eps)
        p_init_eps = int(np.count_nonzero(out.err_n0 > eps)) / n
        for dlt in delta_grid:
            flr = floor_term(constants, sched, n0, eps, dlt)
            vio = int(np.count_nonzero(out.max_excess[:, i_eps] > flr))
            q = build_query(
                constants,
                sched,
                epsilon=eps,
                delta=dlt,
                n0=n0,
                horizon=horizon,
                D_const=d_used,
                p_init=p_init_eps,
                p_init_source=query.p_init_source,
            )
            t = tail_probability(q, dims, sched, constants)
            grid_rows.append(
                GridRow(
                    epsilon=eps,
                    delta=dlt,
                    floor=flr,
                    violations=vio,
                    alltime_prob=1.0 - vio / n,
                    interval=wilson_interval(n - vio, n),
                    tail_sum=t.tail_sum,
                    theoretical_lower_bound=t.prob_lower_bound,
                    vacuous=t.vacuous,
                )
            )

    quantiles = None
    if out.err_matrix is not None:
        qs = np.percentile(out.err_matrix, [25, 50, 75, 90], axis=0)
        quantiles = {"q25": qs[0], "q50": qs[1], "q75": qs[2], "q90": qs[3]}

    return ExperimentResult(
        n_trajectories=n,
        n0=n0,
        horizon=horizon,
        master_seed=config.master_seed,
        epsilon=config.epsilon,
        delta=config.delta,
        empirical_alltime_prob=alltime_prob,
        alltime_interval=wilson_interval(n - violations, n),
        violations=violations,
        empirical_p_init=p_init_hat,
        p_init_interval=wilson_interval(p_init_exceed, n),
        p_init_source=query.p_init_source,
        theoretical_lower_bound=tail.prob_lower_bound,
        tail=tail,
        floor=primary_floor,
        D_used=d_used,
        fitted=fitted,
        per_m_violation_counts=out.per_m_counts,
        per_m_err_max=out.err_max_per_m,
        radius=decay * config.epsilon + primary_floor,
        grid=grid_rows,
        err_quantiles=quantiles,
        wall_time=time.monotonic() - t0,
    )


@dataclass(frozen=True)
class Diagnostics:
    checkpoints: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    loglog_slope: float | None
    n_trajectories: int

    def as_dict(self) -> dict:
        return {
            "checkpoints": self.checkpoints.tolist(),
            "median": self.median.tolist(),
            "q25": self.q25.tolist(),
            "q75": self.q75.tolist(),
            "loglog_slope": self.loglog_slope,
            "n_trajectories": self.n_trajectories,
        }


def convergence_diagnostics(
    config: ExperimentConfig,
    checkpoints=None,
    jobs: int = 1,
    analytic: AnalyticSolution | None = None,
) -> Diagnostics:
    """Median and quartiles of the error across trajectories at checkpoint steps.

    For harmonic schedules the log-log slope of the median is reported as a
    crude rate estimate.
    """
    analytic = analytic if analytic is not None else solve_problem(config.problem)
    if checkpoints is None:
        lo = max(config.n0, 1)
        checkpoints = np.unique(np.geomspace(lo, config.horizon, 8).astype(np.int64))
    ms = np.asarray(sorted(int(m) for m in checkpoints), dtype=np.int64)
    if len(ms) == 0 or ms[0] < config.n0 or ms[-1] > config.horizon:
        raise ValidationError("checkpoints must lie within [n0, horizon]")
    spec = _base_spec(config, analytic, horizon=config.horizon, diag_ms=ms)
    out = _run_ensemble(spec, config.n_trajectories, config.batch_size, jobs)
    assert out.diag_err is not None
    med = np.median(out.diag_err, axis=0)
    q25 = np.percentile(out.diag_err, 25, axis=0)
    q75 = np.percentile(out.diag_err, 75, axis=0)
    slope = None
    if config.schedule.kind == "harmonic" and len(ms) >= 2 and np.all(med > 0):
        slope = float(np.polyfit(np.log(ms.astype(float)), np.log(med), 1)[0])
    return Diagnostics(
        checkpoints=ms,
        median=med,
        q25=q25,
        q75=q75,
        loglog_slope=slope,
        n_trajectories=config.n_trajectories,
    )
