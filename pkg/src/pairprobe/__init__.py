"""pairprobe: refine entity-resolution results with budgeted oracle questions.

Keep a probability distribution over candidate partitions of a record set,
pick the set of pairwise matching questions with the highest joint answer
entropy per token, ask an error-prone oracle, and Bayes-update the
distribution with its answers.
"""

from .core import (
    NORMALIZATION_TOL,
    Partition,
    PartitionDistribution,
    ProductDistribution,
    Record,
    RecordId,
    RecordPair,
    all_pairs,
    entropy,
    normalize,
    pair_probability,
    prune,
    records_by_id,
    same_cluster,
)
from .errors import (
    AllZeroWeightsError,
    AuthenticationError,
    ComponentTooLargeError,
    ConfigError,
    EmptyDistributionError,
    InputError,
    OracleError,
    OracleParseError,
    OracleTransportError,
    PairprobeError,
    PartitionError,
    PruneEmptyError,
    TemplateError,
    UniverseMismatchError,
    UnknownRecordError,
    UnnormalizedError,
)
from .evaluation import SweepConfig, pairwise_f1, run_sweep, synthetic_corpus
from .oracle import (
    GroundTruth,
    Oracle,
    OracleAnswer,
    OracleProfile,
    RemoteOracle,
    ScriptedOracle,
    SimulatedOracle,
    Verdict,
    estimate_accuracy,
    parse_verdict,
)
from .priors import (
    BlockingComponent,
    MatcherConfig,
    PairScore,
    aggregate_tools,
    blocking_components,
    combine_components,
    enumerate_partitions,
    initial_distribution,
    score_pairs,
    threshold_filter,
)
from .refine import (
    RefinementTrace,
    StopPolicy,
    batch_update,
    map_partition,
    posterior_update,
    run_loop,
    update_distribution,
)
from .selection import (
    Budget,
    CostModel,
    MatchQuestion,
    QuestionSet,
    build_question,
    candidate_questions,
    default_template,
    exact_select,
    greedy_select,
    joint_answer_entropy,
    marginal_gain,
    question_cost,
    render_prompt,
)

__version__ = "0.1.0"
