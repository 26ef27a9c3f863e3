"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 1, InputError -> 2,
OracleTransportError -> 3. Everything else is a programming error and
propagates.
"""


class PairprobeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PairprobeError):
    """Invalid run configuration (bad parameter values, missing oracle setup)."""


class InputError(PairprobeError):
    """Malformed input data: records CSV, score files, scripts, templates."""


class PartitionError(PairprobeError):
    """Cluster sets that overlap, contain empty clusters, or fail to cover the universe."""


class UniverseMismatchError(PairprobeError):
    """A record id referenced outside the universe it belongs to."""


class UnnormalizedError(PairprobeError):
    """Operation requires a distribution whose probabilities sum to 1."""


class EmptyDistributionError(PairprobeError):
    """Operation requires at least one entry."""


class AllZeroWeightsError(PairprobeError):
    """Normalization is undefined when every weight is zero."""


class PruneEmptyError(PairprobeError):
    """Pruning parameters would leave no surviving entry."""


class ComponentTooLargeError(PairprobeError):
    """A blocking component exceeds the enumeration cap; raise the threshold."""


class TemplateError(PairprobeError):
    """Prompt template contains an unknown or malformed placeholder."""


class UnknownRecordError(PairprobeError):
    """A question references a record id absent from the dataset."""


class OracleError(PairprobeError):
    """Base class for oracle failures."""


class OracleTransportError(OracleError):
    """The oracle endpoint could not be reached (retryable)."""


class AuthenticationError(OracleTransportError):
    """The oracle endpoint rejected the credentials."""


class OracleParseError(OracleError):
    """The oracle produced no usable one-word verdict after retries."""
