"""Core auction types, ranking scores, slot allocation and GSP pricing.

A ranking function maps a (bid, relevance) pair to a non-negative score.
Bidders are sorted by descending score; a score of zero excludes the ad.
Every family except "standard with a reserve-price filter" can be written
as ``y(b, w) = (g(w) * b - h(w))^+`` and those are the rankings for which the
equilibrium machinery in :mod:`gsp_lab.equilibrium` applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from gsp_lab.errors import DegenerateRankingError, InvalidInputError

FAMILIES = ("by_bid", "standard", "squashed", "proposed", "general_gh")

DEFAULT_SLOT_DECAY = 0.7


@dataclass(frozen=True)
class Bidder:
    """One advertiser: value per click, relevance (ad click factor), index."""

    value: float
    relevance: float
    id: int = 0

    def __post_init__(self):
        if not self.value >= 0 or not math.isfinite(self.value):
            raise InvalidInputError(f"bidder {self.id}: value must be >= 0, got {self.value}")
        if not 0 < self.relevance <= 1:
            raise InvalidInputError(
                f"bidder {self.id}: relevance must lie in (0, 1], got {self.relevance}"
            )


@dataclass(frozen=True)
class SlotCurve:
    """Strictly decreasing positive slot effects s_1 > s_2 > ... > s_m."""

    effects: tuple

    def __post_init__(self):
        eff = tuple(float(s) for s in self.effects)
        if not eff:
            raise InvalidInputError("slot curve needs at least one slot")
        if any(not (s > 0 and math.isfinite(s)) for s in eff):
            raise InvalidInputError(f"slot effects must be positive, got {eff}")
        if any(a <= b for a, b in zip(eff, eff[1:])):
            raise InvalidInputError(f"slot effects must be strictly decreasing, got {eff}")
        object.__setattr__(self, "effects", eff)

    @classmethod
    def geometric(cls, m: int, decay: float = DEFAULT_SLOT_DECAY) -> "SlotCurve":
        if m < 1:
            raise InvalidInputError(f"need m >= 1 slots, got {m}")
        if not 0 < decay < 1:
            raise InvalidInputError(f"decay must lie in (0, 1), got {decay}")
        return cls(tuple(decay**k for k in range(m)))

    @property
    def m(self) -> int:
        return len(self.effects)

    def __len__(self) -> int:
        return len(self.effects)

    def padded(self, n: int) -> np.ndarray:
        """Slot effects for positions 1..n, zero past the last slot."""
        out = np.zeros(n)
        k = min(n, self.m)
        out[:k] = self.effects[:k]
        return out


@dataclass(frozen=True)
class Realisation:
    """One auction instance: the bidders' types and the slot curve."""

    bidders: tuple
    slots: SlotCurve

    def __post_init__(self):
        object.__setattr__(self, "bidders", tuple(self.bidders))
        if not self.bidders:
            raise InvalidInputError("a realisation needs at least one bidder")

    @classmethod
    def from_arrays(cls, values, relevances, slots) -> "Realisation":
        if len(values) != len(relevances):
            raise InvalidInputError("values and relevances differ in length")
        if not isinstance(slots, SlotCurve):
            slots = SlotCurve(tuple(slots))
        bidders = tuple(
            Bidder(float(v), float(w), i) for i, (v, w) in enumerate(zip(values, relevances))
        )
        return cls(bidders, slots)

    @property
    def n(self) -> int:
        return len(self.bidders)

    @property
    def m(self) -> int:
        return self.slots.m

    @property
    def values(self) -> np.ndarray:
        return np.array([b.value for b in self.bidders])

    @property
    def relevances(self) -> np.ndarray:
        return np.array([b.relevance for b in self.bidders])


@dataclass(frozen=True)
class RankingSpec:
    """A ranking algorithm plus its reserve.

    ``reserve_price`` is a per-click bid filter (b >= r) and is only
    meaningful for the standard and squashed families; ``reserve_score`` is
    subtracted inside the score, ``(score - rho)^+``.  The proposed family
    carries its reserve ``r`` inside the score, ``(b - r) w``.

    Use the constructors (:meth:`standard`, :meth:`proposed`, ...) rather
    than instantiating directly.
    """

    family: str
    alpha: float = 1.0
    r: float = 0.0
    reserve_price: float = 0.0
    reserve_score: float = 0.0
    g_func: Optional[Callable] = field(default=None, compare=False)
    h_func: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown ranking family {self.family!r}")
        for name in ("r", "reserve_price", "reserve_score"):
            val = getattr(self, name)
            if not (val >= 0 and math.isfinite(val)):
                raise InvalidInputError(f"{name} must be a finite value >= 0, got {val}")
        if self.family == "squashed" and not self.alpha > 0:
            raise InvalidInputError(f"squashing exponent must be > 0, got {self.alpha}")
        if self.reserve_price > 0 and self.family not in ("standard", "squashed"):
            raise InvalidInputError("a reserve-price filter only applies to standard/squashed")
        if self.reserve_price > 0 and self.reserve_score > 0:
            raise InvalidInputError("combine at most one of reserve price and reserve score")
        if self.family == "general_gh" and (self.g_func is None or self.h_func is None):
            raise InvalidInputError("general_gh needs both g and h")

    # constructors -------------------------------------------------------

    @classmethod
    def by_bid(cls, reserve_score: float = 0.0) -> "RankingSpec":
        return cls("by_bid", alpha=0.0, reserve_score=reserve_score)

    @classmethod
    def standard(cls, reserve_price: float = 0.0, reserve_score: float = 0.0) -> "RankingSpec":
        return cls("standard", alpha=1.0, reserve_price=reserve_price, reserve_score=reserve_score)

    @classmethod
    def squashed(
        cls, alpha: float, reserve_price: float = 0.0, reserve_score: float = 0.0
    ) -> "RankingSpec":
        return cls("squashed", alpha=alpha, reserve_price=reserve_price, reserve_score=reserve_score)

    @classmethod
    def proposed(cls, r: float, reserve_score: float = 0.0) -> "RankingSpec":
        return cls("proposed", alpha=1.0, r=r, reserve_score=reserve_score)

    @classmethod
    def general_gh(cls, g: Callable, h: Callable, reserve_score: float = 0.0) -> "RankingSpec":
        """Ranking ``(g(w) b - h(w) - rho)^+``; g and h must accept numpy arrays."""
        return cls("general_gh", alpha=math.nan, g_func=g, h_func=h, reserve_score=reserve_score)

    # ranking weight and offset -----------------------------------------

    @property
    def in_class_e4(self) -> bool:
        """True when the score can be written ``(g(w) b - h(w))^+``."""
        return self.reserve_price == 0

    @property
    def has_filter(self) -> bool:
        return self.reserve_price > 0

    def g(self, w):
        if self.family == "general_gh":
            return self.g_func(w)
        if self.alpha == 1.0:
            return w * 1.0
        return w**self.alpha

    def h(self, w):
        if self.family == "general_gh":
            return self.h_func(w) + self.reserve_score
        if self.family == "proposed":
            return self.r * w + self.reserve_score
        return self.reserve_score + 0.0 * w

    def scores(self, bids, w):
        """Vectorised score; no input validation."""
        bids = np.asarray(bids, dtype=float)
        g = self.g(w)
        if self.has_filter:
            return np.where(bids >= self.reserve_price, bids * g, 0.0)
        return np.maximum(g * bids - self.h(w), 0.0)

    def prices(self, next_scores, w):
        """Vectorised GSP price; no degeneracy check."""
        g = self.g(w)
        if self.has_filter:
            return np.maximum(self.reserve_price, next_scores / g)
        return (next_scores + self.h(w)) / g

    @property
    def label(self) -> str:
        """Short family label used in CSV output."""
        if self.family == "standard" and self.has_filter:
            return "standard_r"
        if self.family in ("standard", "squashed", "by_bid") and self.reserve_score > 0:
            return f"{self.family}_rho"
        return self.family

    @property
    def params(self) -> tuple:
        """(r, alpha, rho) as reported in output tables."""
        r = self.r if self.family == "proposed" else self.reserve_price
        return (r, self.alpha, self.reserve_score)


def _check_bid(bid: float) -> None:
    if not (bid >= 0 and math.isfinite(bid)):
        raise InvalidInputError(f"bid must be a finite value >= 0, got {bid}")


def _check_relevance(w: float) -> None:
    if not 0 < w <= 1:
        raise InvalidInputError(f"relevance must lie in (0, 1], got {w}")


def score(spec: RankingSpec, bid: float, relevance: float) -> float:
    """Rank score of one ad; zero means the ad is excluded."""
    _check_bid(bid)
    _check_relevance(relevance)
    return _score(spec, bid, relevance)


def _score(spec: RankingSpec, bid: float, w: float) -> float:
    if spec.has_filter:
        return bid * spec.g(w) if bid >= spec.reserve_price else 0.0
    return max(spec.g(w) * bid - spec.h(w), 0.0)


def gsp_price(spec: RankingSpec, next_score: float, own_relevance: float) -> float:
    """Per-click price: the smallest bid whose score beats ``next_score``.

    ``next_score`` is the score of the ad ranked immediately below (zero for
    the last ranked ad).
    """
    if next_score < 0:
        raise InvalidInputError(f"next_score must be >= 0, got {next_score}")
    _check_relevance(own_relevance)
    g = spec.g(own_relevance)
    if not g > 0:
        raise DegenerateRankingError(f"g(w) = {g} at w = {own_relevance}")
    if spec.has_filter:
        return max(spec.reserve_price, next_score / g)
    return (next_score + spec.h(own_relevance)) / g


@dataclass
class Assignment:
    """Outcome of one auction.

    ``order`` lists the qualifying bidders (score > 0) by rank, including
    those ranked below the last slot.  ``allocations`` and ``prices`` are
    indexed by bidder; both are zero for bidders without a slot.
    """

    order: tuple
    allocations: np.ndarray
    prices: np.ndarray
    scores: np.ndarray

    @property
    def slotted(self) -> np.ndarray:
        return self.allocations > 0

    @property
    def n(self) -> int:
        return len(self.allocations)


def rank_order(scores: Sequence[float]) -> list:
    """Indices with positive score, descending, ties to the lower index."""
    return sorted((i for i, s in enumerate(scores) if s > 0), key=lambda i: (-scores[i], i))


def allocate(spec: RankingSpec, bids: Sequence[float], realisation: Realisation) -> Assignment:
    """Rank the bids, hand out slots top-down and fill in GSP prices."""
    n = realisation.n
    if len(bids) != n:
        raise InvalidInputError(f"expected {n} bids, got {len(bids)}")
    bids = [float(b) for b in bids]
    for b in bids:
        _check_bid(b)
    scores = [_score(spec, b, bd.relevance) for b, bd in zip(bids, realisation.bidders)]
    order = rank_order(scores)
    effects = realisation.slots.effects
    allocations = np.zeros(n)
    prices = np.zeros(n)
    for pos, i in enumerate(order[: len(effects)]):
        allocations[i] = effects[pos]
        nxt = scores[order[pos + 1]] if pos + 1 < len(order) else 0.0
        prices[i] = gsp_price(spec, nxt, realisation.bidders[i].relevance)
    return Assignment(tuple(order), allocations, prices, np.array(scores))
