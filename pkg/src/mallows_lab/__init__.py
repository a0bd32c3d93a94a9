"""mallows_lab: exact and sampled Mallows ranking models, mixture learners,
separation bounds, and query-cost experiments."""

__version__ = "0.1.0"

from .errors import (
    MallowsLabError,
    InvalidArgumentError,
    EnumerationLimitError,
    PreconditionError,
    DegenerateInputError,
    DegenerateContrastError,
    RecoveryFailure,
    LearningFailure,
)
from .perms import (
    kendall_tau,
    inversions,
    compose,
    inverse,
    restrict,
    identity,
    enumerate_perms,
    mahonian_counts,
    enumeration_cutoff,
)
from .model import (
    MallowsModel,
    MallowsMixture,
    DistributionVector,
    normalizer,
    log_normalizer,
    vectorize,
    sample_rim,
    sample_mixture,
    mixture_from_config,
    mixture_to_config,
    load_mixture,
    dump_mixture,
    placement_prob,
    moment_vector,
    MomentMap,
    ExactOracle,
    EmpiricalOracle,
    hoeffding_samples,
)
from .structures import (
    BlockStructure,
    OrderStructure,
    OrderedBlockStructure,
    satisfies,
    structure_from_config,
    structure_to_config,
    block_tensor,
    block_prob,
    block_prob_floor,
    pair_test_vector,
    ortho_test_vector,
)
from .distances import (
    TVReport,
    BoundCheck,
    tv_exact,
    tv_between,
    tv_empirical,
    l1_combination,
)
from .identifiability import (
    ZagierReport,
    zagier_check,
    kruskal_l1,
    kruskal_projection,
    robust_kruskal_perturbed,
    identifiability_l1,
    check_non_degenerate,
    match_components,
)
from .lowerbound import (
    CloseMixturePair,
    build_close_mixtures,
    verify_close_mixtures,
    LocalQuerySession,
    QueryLedger,
    local_query,
    HardInstance,
    build_sql_hard_instance,
    verify_sql_instance,
)
from .learn_separated import (
    SeparationParams,
    PrefixCandidate,
    find_prefixes,
    extend_prefix,
    estimate_weights,
    pair_order_prob,
    prefix_prob,
    learn_mixture_separated,
    test_separated_close,
)
from .learn_general import (
    CandidateEntry,
    GuessBundle,
    LearnerBudget,
    small_phi_candidates,
    remove_small_phi,
    learn_single_same_phi,
    learn_single_general,
    peel_components,
    learn_mixture_general,
    test_componentwise_close,
)
from .records import (
    ExperimentRecord,
    derive_rng,
    run_trials,
)
