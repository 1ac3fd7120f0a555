"""Spatial-correlation robust inference via worst-case principal components."""

from .covariance import (
    Benchmark,
    CovarianceKernel,
    avg_pairwise_correlation,
    calibrate_c0,
    covariance_matrix,
    kernel_value,
)
from .eigen import PCBasis, nystrom_pc_weights, pc_weights, principal_angles
from .errors import (
    CalibrationError,
    DegenerateStatisticError,
    InputError,
    NumericError,
    SamplingError,
    ScpcError,
    SolverError,
)
from .estimator import (
    QSelection,
    RegressionInput,
    RegressionScores,
    ScpcOptions,
    ScpcResult,
    expected_length_iid,
    iv_scores,
    regression_scores,
    scpc_interval,
    scpc_sigma_hat,
    select_q,
    t_statistic,
)
from .ftest import (
    FtestCritical,
    HotellingResult,
    ftest_critical_value,
    hotelling_t2,
    hotelling_test,
    select_q_volume,
    volume_objective,
)
from .geometry import (
    DesignSpec,
    SpatialDesign,
    measurement_error_halfwidth,
    pairwise_distances,
    perturb_locations,
    sample_design,
)
from .montecarlo import (
    SimulationConfig,
    SimulationReport,
    cluster_assign,
    competitor_test,
    heteroskedasticity_sweep,
    run_experiment,
    simulate_field,
)
from .rejection import (
    CriticalValueResult,
    RejectionCurve,
    TestSpectrum,
    bs_probability,
    critical_value,
    omega_spectrum,
    rejection_probability,
    sup_rejection,
)
from .robustness import (
    Ar1MixtureReport,
    NuMargins,
    RobustnessReport,
    ar1_mixture_check,
    ewc_design,
    ewc_solve,
    kinked_ar1_covariance,
    matern_robust_range,
    nu_margins,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
