"""Minimal quasi-HMM and HMM realizations from finite-window string
probabilities: the Hankel-SVD realization algorithm, two CP tensor
decomposition backends, parameter recovery, and seeded experiment sweeps.
"""

from .errors import (
    CapacityError,
    ConditionError,
    DegeneracyError,
    PositivityError,
    RankDeficiencyError,
    RealizationError,
    RealizationFailure,
    SplitError,
)
from .models import (
    EquivalenceResult,
    Hmm,
    QuasiHmm,
    backward_transition,
    hmm_equivalent_up_to_permutation,
    hmm_to_quasi,
    identity_transition_hmm,
    low_rank_hmm,
    noisy_parity_hmm,
    quasi_equivalent,
    random_hmm,
    shift_cycle_hmm,
    stationary_distribution,
    validate_hmm,
)
from .realize import (
    RealizationDiagnostics,
    VerifyResult,
    predict,
    realize_quasi,
    realize_quasi_from_table,
    verify_realization,
)
from .recover import (
    DegenerateCheckVerdict,
    RecoveryResult,
    check_condition_degenerate,
    marginalize_prefix,
    normalize_columns,
    realize_hmm,
    recover_Q_fullrank_A,
    recover_Q_fullrank_O,
)
from .sampling import (
    SampleBatch,
    aligned_parameter_error,
    empirical_joint,
    estimate_and_realize,
    mirsky_check,
    product_perturbation_check,
    sample_sequences,
    theorem3_sample_size,
    wedin_check,
    windowed_joint,
)
from .stats import (
    HankelPair,
    JointTable,
    MomentTensor,
    StringIndex,
    all_strings,
    build_hankel,
    build_tensor,
    capacity_limit,
    conditional_factors,
    exact_joint,
    hankel_from_model,
    index_of,
    joint_table,
    khatri_rao,
    kruskal_rank,
    matricize3,
    moment_tensor_from_model,
    numeric_rank,
    observable_factors,
    prediction_table,
    string_of,
    tensor_from_factors,
)
from .tensordecomp import (
    CpFactors,
    foobi_decompose,
    joint_diagonalize_congruence,
    rank_one_kr_factor,
    simdiag_decompose,
)

__version__ = "0.1.0"
