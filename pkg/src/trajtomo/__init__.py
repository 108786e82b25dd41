"""Initial-state tomography from measurement trajectories.

The workflow, end to end:

1. describe the measurement as a step family (discrete outcomes via
   KrausFamily, diffusive signals via SMEModel);
2. compress each measured record into a single effect and scale with the
   backward adjoint recursion, so the record likelihood becomes
   exp(log_c) * tr(rho E);
3. maximize the joint likelihood over initial states with a certified
   projected-gradient solver;
4. attach error bars from the boundary-aware stiffness form, with a
   Monte Carlo posterior cross-check in low dimension.

Forward filtering, trajectory simulation, ready-made physical models and
deterministic file formats round out the toolkit; the ``trajtomo``
command line wraps the full loop.
"""
from .config import DEFAULT, Tolerances
from .errors import (
    TomographyError,
    DimensionMismatch,
    UnknownOutcome,
    InvalidProjector,
    ZeroProbability,
    DegenerateTrace,
    DegenerateLikelihood,
    Unidentifiable,
    EffectiveSampleSizeTooLow,
    StepSizeTooLarge,
    IncompletePOVM,
)
from .operators import (
    HermitianOperator,
    DensityMatrix,
    EffectMatrix,
    KrausFamily,
    HermitianBasis,
    hermitian_basis,
    apply_cp_map,
    apply_adjoint_cp_map,
    tangent_project,
    project_to_density,
    frobenius,
)
from .filtering import (
    DiscreteRecord,
    FilterTrace,
    AdjointResult,
    forward_step,
    forward_run,
    forward_batch,
    backward_step,
    backward_run,
    backward_sweep,
    backward_batch,
    backward_sweep_batch,
    log_likelihood,
    stack_effects,
    sample_records,
)
from .maxlike import (
    SolveOptions,
    KKTReport,
    TomographyResult,
    gradient,
    kkt_certificate,
    solve_maxlike,
)
from .confidence import (
    tangent_basis,
    RMatrix,
    build_r_matrix,
    ObservableInterval,
    MCEstimate,
    posterior_variance_mc,
)
from .qubit import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    PAULIS,
    pauli_combination,
    to_bloch,
    from_bloch,
    effects_to_bloch,
    gradient_bloch,
    lambda_bloch,
    variance_bloch,
)
from .continuous import (
    Channel,
    SMEModel,
    ContinuousRecord,
    build_m,
    cp_map_continuous,
    adjoint_cp_map_continuous,
    simulate_sme,
    forward_filter,
    forward_filter_batch,
    backward_continuous,
    backward_continuous_batch,
    lindblad_evolve,
)
from .models import (
    build_fluorescence_model,
    quadrature_estimates,
    povm_family,
    pauli_povm,
    number_operator,
    thermal_state,
    mean_photon,
    thermal_relaxation_kraus,
    kraus_to_superop,
    injection_channel,
    thermal_decay_curve,
    build_qnd_family,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT",
    "Tolerances",
    "TomographyError",
    "DimensionMismatch",
    "UnknownOutcome",
    "InvalidProjector",
    "ZeroProbability",
    "DegenerateTrace",
    "DegenerateLikelihood",
    "Unidentifiable",
    "EffectiveSampleSizeTooLow",
    "StepSizeTooLarge",
    "IncompletePOVM",
    "HermitianOperator",
    "DensityMatrix",
    "EffectMatrix",
    "KrausFamily",
    "HermitianBasis",
    "hermitian_basis",
    "apply_cp_map",
    "apply_adjoint_cp_map",
    "tangent_project",
    "project_to_density",
    "frobenius",
    "DiscreteRecord",
    "FilterTrace",
    "AdjointResult",
    "forward_step",
    "forward_run",
    "forward_batch",
    "backward_step",
    "backward_run",
    "backward_sweep",
    "backward_batch",
    "backward_sweep_batch",
    "log_likelihood",
    "stack_effects",
    "sample_records",
    "SolveOptions",
    "KKTReport",
    "TomographyResult",
    "gradient",
    "kkt_certificate",
    "solve_maxlike",
    "tangent_basis",
    "RMatrix",
    "build_r_matrix",
    "ObservableInterval",
    "MCEstimate",
    "posterior_variance_mc",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "PAULIS",
    "pauli_combination",
    "to_bloch",
    "from_bloch",
    "effects_to_bloch",
    "gradient_bloch",
    "lambda_bloch",
    "variance_bloch",
    "Channel",
    "SMEModel",
    "ContinuousRecord",
    "build_m",
    "cp_map_continuous",
    "adjoint_cp_map_continuous",
    "simulate_sme",
    "forward_filter",
    "forward_filter_batch",
    "backward_continuous",
    "backward_continuous_batch",
    "lindblad_evolve",
    "build_fluorescence_model",
    "quadrature_estimates",
    "povm_family",
    "pauli_povm",
    "number_operator",
    "thermal_state",
    "mean_photon",
    "thermal_relaxation_kraus",
    "kraus_to_superop",
    "injection_channel",
    "thermal_decay_curve",
    "build_qnd_family",
    "__version__",
]
