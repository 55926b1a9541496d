"""Optimal threshold-kernel jump detection and volatility estimation for
jump-diffusion processes observed at high frequency."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    CsvFormatError,
    DimensionError,
    InsufficientDataError,
    NumericalError,
    PreconditionError,
    ThreshvolError,
)
from .simulate import (
    PRM_AIT,
    HestonMertonConfig,
    JumpLaw,
    NormalJumpLaw,
    SamplePath,
    UserJumpLaw,
    five_minute_h,
    merton_density,
    simulate_path,
)
from .thresholds import (
    Classification,
    LocalParams,
    SecondOrderThreshold,
    ThresholdSearch,
    ThresholdVector,
    classify,
    estimate_n_j_iv,
    fixed_point_residual,
    lambda_sigma_hat,
    loss_exact,
    optimal_threshold_exact,
    threshold_first_order,
    threshold_second_order,
)
from .jump_density import (
    HALF_GAUSSIAN,
    DensityEstimate,
    RightSidedKernel,
    conditional_density_gap,
    density_threshold,
    estimate_f0,
    exceedance_probability,
    minimize_exp_plus_linear,
    silverman_bandwidth,
)
from .spot_vol import (
    BandwidthSelection,
    Kernel,
    TsrvvEstimate,
    VolModelSpec,
    builtin_kernels,
    c1_covariance,
    heston_vol_spec,
    kw,
    mse_expansion,
    one_sided_estimates,
    one_sided_series,
    optimal_bandwidth,
    optimal_mse,
    plug_in_bandwidth,
    plug_in_bandwidth_from_estimates,
    tkw,
    tkw_series,
    truncated_quarticity,
    tsrvv,
)
from .iterative import (
    METHODS,
    EstimationReport,
    IterationRecord,
    IterationTrace,
    algo_constant_first_order,
    algo_constant_second_order,
    algo_local,
    oracle_threshold,
    sample_loss,
)
from .mc_harness import (
    Scenario,
    StudyReport,
    StudySpec,
    benchmark_scenarios,
    run_convergence_study,
    run_f0_study,
    run_misclassification_study,
    run_spotvol_sse_study,
    run_trv_bias_variance_check,
)
