"""GSP sponsored-search auctions under general ranking functions.

Equilibrium bids, Myerson payments, Monte Carlo tradeoff sweeps and
auction-log replay.
"""

from gsp_lab.errors import (
    BoundUnavailableError,
    ConditionInapplicableError,
    ConfigError,
    DegeneratePairError,
    DegenerateRankingError,
    GspLabError,
    InvalidInputError,
    NoRootError,
    PreconditionError,
    UndefinedVirtualValueError,
    UnsupportedRankingError,
)
from gsp_lab.model import (
    Assignment,
    Bidder,
    RankingSpec,
    Realisation,
    SlotCurve,
    allocate,
    gsp_price,
    score,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "Bidder",
    "BoundUnavailableError",
    "ConditionInapplicableError",
    "ConfigError",
    "DegeneratePairError",
    "DegenerateRankingError",
    "GspLabError",
    "InvalidInputError",
    "NoRootError",
    "PreconditionError",
    "RankingSpec",
    "Realisation",
    "SlotCurve",
    "UndefinedVirtualValueError",
    "UnsupportedRankingError",
    "allocate",
    "gsp_price",
    "score",
]
