"""Simulation and analysis toolkit for exact-convergence decentralized
optimization: correction-term diffusion engines, gradient tracking,
their error dynamics, and closed-form step-size stability ranges."""

from .algorithms import (
    COMM_UNITS,
    ENGINES,
    AlgorithmState,
    RunResult,
    StepSizes,
    TraceRecord,
    read_trace_csv,
    run,
    write_status_json,
    write_trace_csv,
)
from .costs import (
    ConvergenceError,
    CostModel,
    GroundTruth,
    LeastSquaresModel,
    LogisticModel,
    MSEQuadraticModel,
    QuadraticModel,
    hessian_bounds,
    least_squares_model,
    logistic_model,
    model_from_config,
    mse_quadratic_model,
    solve_centralized,
)
from .graphs import (
    CombinationMatrix,
    Graph,
    GraphError,
    PerronData,
    SpectralError,
    build_averaging,
    build_metropolis,
    check_balanced,
    load_matrix_csv,
    matrix_from_array,
    perron_vector,
    random_connected_graph,
    save_matrix_csv,
)
from .spectral import VMatrix, certify_nullspace, compute_v, general_eig
from .stability import (
    ErrorDynamics,
    ScanResult,
    SpectralPair,
    StabilityBound,
    TwoAgentCase,
    b_spectrum_residual,
    build_error_dynamics,
    classify_run,
    decompose_b,
    diffusion_step_bound,
    extra_step_bound,
    mismatch_decay_check,
    norm_comparison,
    one_step_matrix,
    predicted_b_spectrum,
    simulate_error_recursion,
    stability_scan,
    two_agent_case,
    two_agent_onset,
)

__version__ = "0.1.0"
