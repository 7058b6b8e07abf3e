"""Ground truth, simulation, and concentration-bound verification for
linear TD(0) policy evaluation on finite Markov chains."""

from .analytic import (
    AnalyticSolution,
    ConstantsBundle,
    PoissonSolution,
    PolicyEvalProblem,
    compute_constants,
    contraction_factor,
    exact_value_function,
    fixed_point,
    poisson_solve,
    solve_problem,
)
from .bounds import (
    BoundQuery,
    BoundReport,
    build_query,
    check_n0,
    corollary_rate,
    evaluate_bound,
    floor_term,
    martingale_tail,
    radius_curve,
    tail_crossover,
    tail_probability,
)
from .dynamics import TrajectoryRecord, run_deterministic, run_online, td_step
from .errors import (
    AssumptionViolated,
    ComputeError,
    ConfigError,
    InfeasibleStart,
    InsufficientTailData,
    NonFinite,
    NotIrreducible,
    NotStochastic,
    Periodic,
    SeriesDivergence,
    SolverFailure,
    TDLabError,
    ValidationError,
)
from .features import (
    AssumptionReport,
    FeatureMap,
    build_features,
    check_assumption,
    feature_gain,
    project_weighted,
    scaling_threshold,
    weighted_gram,
    weighted_norm,
)
from .harness import (
    Diagnostics,
    ExperimentConfig,
    ExperimentResult,
    TailFit,
    convergence_diagnostics,
    estimate_p_init,
    fit_tail_exponent,
    fit_tail_exponent_from_sim,
    run_alltime_experiment,
    wilson_interval,
)
from .markov import (
    MarkovChain,
    StationaryDistribution,
    build_chain,
    expected_hitting_sums,
    sample_path,
    stationary_distribution,
)
from .rng import stream
from .schedule import StepSchedule, tail_weight

__version__ = "0.1.0"
