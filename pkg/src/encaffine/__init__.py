"""Encrypted distributed state estimation by affine averaging.

Agents estimate their absolute states from noisy relative measurements using
the affine averaging iteration while all follower states stay encrypted under
an additively homomorphic scheme; a leader agent periodically resets the
integer states through the spanning tree to keep the growing fixed-point
scale inside the message space.
"""

from .analysis import (
    InsufficientSamples,
    MomentReport,
    centered_truth,
    centralized_estimator_cov,
    hard_reset_cov,
    monte_carlo_reset_moments,
)
from .crypto import (
    Ciphertext,
    ContextMismatch,
    HEContext,
    MessageOutOfRange,
    MissingSecretKey,
    PrimeGenerationFailure,
    add_ct,
    dec,
    enc,
    encode_signed,
    keygen,
    mock_context,
    mul_plain,
)
from .estimation import (
    ConvergenceReport,
    Dynamics,
    MeasurementSet,
    StepSizeOutOfRange,
    affine_step,
    agent_coefficients,
    build_dynamics,
    centralized_solution,
    check_convergence_conditions,
    explicit_solution,
    sample_measurements,
    step_size,
)
from .fixedpoint import (
    BoundViolation,
    FixedPointConfig,
    FixedPointState,
    NoIterationsPossible,
    OverflowBudgetViolation,
    delta_bound,
    dynamics_norms,
    integer_step,
    max_iterations,
    mod_reconstruct,
    quantize_dynamics,
    recover_state,
    round_to_nearest,
    verify_delta_dominance,
)
from .graphs import (
    ConnectivityRetriesExhausted,
    MeasuredGraph,
    NearSingularBeyondNullspace,
    ResetTree,
    build_reset_tree,
    incidence_matrix,
    laplacian,
    laplacian_spectrum,
    pseudoinverse,
    random_graph,
)
from .protocol import (
    PlainReference,
    ProtocolConfig,
    Transcript,
    run_encrypted,
    run_plaintext_reference,
)
from .resets import (
    AggregationMessage,
    NegativeWeight,
    ResetPlan,
    TreeInconsistency,
    apply_reset_plaintext,
    apply_reset_quantized,
    collect_distances_encrypted,
    compute_reset_shifts,
    distances,
    distribute_reset_encrypted,
    recover_distance_sum,
    reset_values,
)

__version__ = "0.1.0"
