"""Exception hierarchy.

Everything raised on purpose derives from ``GspLabError`` so the CLI can map
it to an exit status.
"""


class GspLabError(Exception):
    """Base class for library errors."""


class InvalidInputError(GspLabError, ValueError):
    """Negative bid, relevance outside (0, 1], malformed slot curve, ..."""


class DegenerateRankingError(GspLabError):
    """The ranking weight g(w) is zero, so no bid can buy a slot."""


class UnsupportedRankingError(GspLabError):
    """Operation needs a ranking of the form (g(w) b - h(w))^+."""


class UndefinedVirtualValueError(GspLabError, ValueError):
    """Density is zero (or the point is off-support) where phi was requested."""


class NoRootError(GspLabError):
    """The virtual value has no unique sign change on the support."""


class ConditionInapplicableError(GspLabError):
    """The reserve-price dominance condition cannot be evaluated."""


class BoundUnavailableError(GspLabError):
    """The virtual-surplus revenue bound needs an MHR value distribution."""


class PreconditionError(GspLabError):
    """A documented precondition of an operation does not hold."""


class DegeneratePairError(GspLabError):
    """Two bidders have equal virtual values; the pairwise check is skipped."""


class ConfigError(GspLabError):
    """Experiment configuration is invalid."""
