"""Lowest symmetric Nash equilibrium, Myerson payments and SNE checks.

For rankings ``y(b, w) = (g(w) b - h(w))^+`` the revenue-minimal SNE ranks
bidders exactly as truthful bids would, and its bids solve a backwards
recursion over the slot effects::

    y(b_i, w_i) x_{i-1} = sum_{j >= i} y(theta_j, w_j) (x_{j-1} - x_j)

The resulting per-click prices coincide with the payments of the truthful
direct mechanism for the same allocation rule, which
:func:`myerson_payments` evaluates independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from gsp_lab.errors import PreconditionError, UnsupportedRankingError
from gsp_lab.model import (
    Assignment,
    RankingSpec,
    Realisation,
    allocate,
    gsp_price,
    rank_order,
)

SNE_SLACK = 1e-9


@dataclass
class SneProfile:
    bids: np.ndarray
    assignment: Assignment
    is_lowest: bool = True


def _truthful_scores(spec: RankingSpec, realisation: Realisation) -> list:
    return [float(s) for s in spec.scores(realisation.values, realisation.relevances)]


def _require_class_e4(spec: RankingSpec) -> None:
    if not spec.in_class_e4:
        raise UnsupportedRankingError(
            f"{spec.label} is not of the form (g(w) b - h(w))^+; no lowest SNE"
        )


def lowest_sne_bids(spec: RankingSpec, realisation: Realisation) -> SneProfile:
    """Bid profile of the lowest SNE.

    The top bidder bids its value (its bid only has to keep it on top), as
    do all bidders without a slot.
    """
    _require_class_e4(spec)
    values = realisation.values
    rel = realisation.relevances
    y = _truthful_scores(spec, realisation)
    order = rank_order(y)
    k = len(order)
    x = [realisation.slots.effects[p] if p < realisation.m else 0.0 for p in range(k)]

    bids = values.astype(float).copy()
    # tail[p] = sum_{j >= p} y_(j) (x_{j-1} - x_j), accumulated bottom-up
    tail = 0.0
    for p in range(k - 1, 0, -1):
        x_prev = x[p - 1]
        tail += y[order[p]] * (x_prev - x[p])
        if x_prev == 0:
            continue
        i = order[p]
        bid_score = tail / x_prev
        bids[i] = (bid_score + spec.h(rel[i])) / spec.g(rel[i])
    return SneProfile(bids, allocate(spec, bids, realisation), True)


def myerson_payments(spec: RankingSpec, realisation: Realisation) -> np.ndarray:
    """Per-click payments of the truthful mechanism for the ranking's allocation rule.

    Bidder i's allocation as a function of its own report t is a step
    function that climbs by ``s_k - s_{k+1}`` each time its score passes
    ``c_k``, the k-th highest competing score.  The threshold report for that
    step is the GSP price against ``c_k``, so

        integral_0^theta x_i(t) dt = sum_k (s_k - s_{k+1}) (theta - tau_k)^+

    and ``p_i = theta_i - integral / x_i``.  Works for any ranking that is
    monotone in the bid, including the reserve-price filter.
    """
    values = realisation.values
    rel = realisation.relevances
    y = _truthful_scores(spec, realisation)
    order = rank_order(y)
    effects = realisation.slots.effects
    m = realisation.m
    n = realisation.n
    steps = [effects[k] - (effects[k + 1] if k + 1 < m else 0.0) for k in range(m)]
    pay = np.zeros(n)
    for pos, i in enumerate(order[:m]):
        others = [y[j] for j in order if j != i]
        integral = 0.0
        for k in range(m):
            c_k = others[k] if k < len(others) else 0.0
            tau = gsp_price(spec, c_k, rel[i])
            integral += steps[k] * max(values[i] - tau, 0.0)
        pay[i] = values[i] - integral / effects[pos]
    return pay


def allocation_step_integral(spec: RankingSpec, realisation: Realisation, i: int,
                             width: float = 1e-12) -> float:
    """Quadrature oracle for ``integral_0^theta_i x_i(t) dt``.

    Treats :func:`allocate` as a black box.  The allocation is monotone in
    the own bid, so an interval whose endpoints give the same allocation is
    flat; otherwise it is bisected until narrower than ``width``.
    """
    bids = list(realisation.values)

    def alloc_at(t: float) -> float:
        bids[i] = t
        return float(allocate(spec, bids, realisation).allocations[i])

    total = 0.0
    stack = [(0.0, float(realisation.values[i]), alloc_at(0.0), alloc_at(realisation.values[i]))]
    while stack:
        lo, hi, a_lo, a_hi = stack.pop()
        if a_lo == a_hi:
            total += (hi - lo) * a_lo
        elif hi - lo < width:
            total += (hi - lo) * 0.5 * (a_lo + a_hi)
        else:
            mid = 0.5 * (lo + hi)
            a_mid = alloc_at(mid)
            stack.append((lo, mid, a_lo, a_mid))
            stack.append((mid, hi, a_mid, a_hi))
    return total


def quadrature_payments(spec: RankingSpec, realisation: Realisation,
                        width: float = 1e-12) -> np.ndarray:
    """Myerson payments with the integral evaluated by :func:`allocation_step_integral`."""
    truthful = allocate(spec, realisation.values, realisation)
    pay = np.zeros(realisation.n)
    for i in np.nonzero(truthful.allocations > 0)[0]:
        integral = allocation_step_integral(spec, realisation, int(i), width)
        pay[i] = realisation.values[i] - integral / truthful.allocations[i]
    return pay


def trapezoid_payments(spec: RankingSpec, realisation: Realisation,
                       points: int = 100_001) -> np.ndarray:
    """Myerson payments by a fixed-grid trapezoid rule (coarse oracle)."""
    truthful = allocate(spec, realisation.values, realisation)
    pay = np.zeros(realisation.n)
    for i in np.nonzero(truthful.allocations > 0)[0]:
        theta = realisation.values[i]
        grid = np.linspace(0.0, theta, points)
        bids = list(realisation.values)
        alloc = np.empty(points)
        for k, t in enumerate(grid):
            bids[i] = t
            alloc[k] = allocate(spec, bids, realisation).allocations[i]
        integral = float(np.trapezoid(alloc, grid))
        pay[i] = theta - integral / truthful.allocations[i]
    return pay


@dataclass
class SneVerdict:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_sne(spec: RankingSpec, bids, realisation: Realisation,
               slack: float = SNE_SLACK) -> SneVerdict:
    """Check the no-envy inequalities of a symmetric Nash equilibrium.

    For every bidder i and every occupied slot j, i must weakly prefer its
    own outcome to taking slot j at the price slot j's occupant pays, i.e.
    the price needed to beat the ad ranked just below slot j.  Bidders also
    need non-negative utility (the outside option).  Violations are reported
    as ``(bidder, slot, slack)`` with 1-based slots; slot 0 is the outside
    option.
    """
    a = allocate(spec, bids, realisation)
    order = a.order
    m = min(realisation.m, len(order))
    values = realisation.values
    rel = realisation.relevances
    effects = realisation.slots.effects

    def next_score(pos: int) -> float:
        return float(a.scores[order[pos + 1]]) if pos + 1 < len(order) else 0.0

    violations = []
    for i in range(realisation.n):
        own = (values[i] - a.prices[i]) * a.allocations[i]
        if own < -slack:
            violations.append((i, 0, own))
        for pos in range(m):
            if order[pos] == i:
                continue
            price = gsp_price(spec, next_score(pos), rel[i])
            gap = own - (values[i] - price) * effects[pos]
            if gap < -slack:
                violations.append((i, pos + 1, gap))
    return SneVerdict(violations)


@dataclass(frozen=True)
class ProbeResult:
    feasible: bool
    lower: float
    upper: float


def order_preserving_sne_feasible(realisation: Realisation, r: float) -> ProbeResult:
    """Bid interval for bidder 2 in an order-preserving SNE of the filtered standard ranking.

    Two qualifying bidders, bidder 1 (index 0) ranked first by value times
    relevance.  The no-envy conditions pin bidder 2's bid to
    ``[(th2 w2 (x1-x2) + r w2 x2) / (w2 x1), (th1 w1 (x1-x2) + r w1 x2) / (w2 x1)]``;
    the profile is infeasible when the interval is empty.
    """
    if realisation.n != 2:
        raise PreconditionError("the probe needs exactly two bidders")
    # exact decimal arithmetic so the interval ends print as entered
    th1, th2 = (Fraction(repr(float(v))) for v in realisation.values)
    w1, w2 = (Fraction(repr(float(v))) for v in realisation.relevances)
    r = Fraction(repr(float(r)))
    if min(th1, th2) < r:
        raise PreconditionError("both bidders must qualify (value >= r)")
    if th1 * w1 < th2 * w2:
        raise PreconditionError("bidder 1 must rank first by value * relevance")
    effects = [Fraction(repr(s)) for s in realisation.slots.effects]
    x1 = effects[0]
    x2 = effects[1] if len(effects) > 1 else Fraction(0)
    lower = (th2 * w2 * (x1 - x2) + r * w2 * x2) / (w2 * x1)
    upper = (th1 * w1 * (x1 - x2) + r * w1 * x2) / (w2 * x1)
    return ProbeResult(bool(lower <= upper), float(lower), float(upper))
