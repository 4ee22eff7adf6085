"""Multi-server queues with abandonment and stochastic post-service server charging.

Exact event-driven simulation, fluid and diffusion approximations, and staffing
solvers for delay-probability and abandonment-fraction targets.
"""

from .model import (
    Kappa,
    ModelParams,
    ParamError,
    Regime,
    RegimeTag,
    classify,
    kappa,
    validate,
)
from .probability import (
    NormalParams,
    Phi,
    Phi_bar,
    Phi_bar_inv,
    PositivePartMoments,
    expected_positive_part,
    phi,
    positive_part_moments,
)
from .fluid import (
    FixedPoint,
    FluidState,
    FluidTrajectory,
    IntegrationError,
    default_step,
    drift,
    fixed_point,
    integrate,
)
from .diffusion import (
    CovSignThresholds,
    Matrix2,
    MomentSet,
    StabilityError,
    covariance_sign_thresholds,
    jacobian_sigma,
    lyapunov_residual,
    solve_lyapunov,
    stationary_moments,
)
from .simulator import (
    EventLog,
    EventTag,
    MetricSummary,
    OracleResult,
    ReplicationSummary,
    SimConfig,
    SimCounts,
    SimResult,
    SimState,
    TimeAverages,
    TruncationError,
    UniformStream,
    derive_rng,
    replicate,
    resample,
    rolling_moments,
    run,
    stationary_oracle,
    step,
)
from .staffing import (
    AbandonTarget,
    DegenerateVarianceError,
    DelayTarget,
    ExcessMoments,
    InfeasibleError,
    Method,
    StaffingAnswer,
    VarianceClosureError,
    alpha_of_c,
    delay_probability,
    excess_moments,
    staff_abandon_fluid_bound,
    staff_abandon_implicit,
    staff_delay_bivariate,
    staff_delay_deterministic,
    staff_empirical,
)

__version__ = "0.1.0"
