"""Auction metrics, the virtual-surplus revenue bound and swap analysis.

Expected revenue of any truthful mechanism equals expected allocated virtual
surplus ``sum phi(theta_i) w_i x_i``.  The swap tools below decompose the
move from the filtered standard ranking to the proposed ranking into
adjacent transpositions and track how each one changes virtual surplus.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from gsp_lab.equilibrium import SNE_SLACK
from gsp_lab.errors import (
    BoundUnavailableError,
    DegeneratePairError,
    PreconditionError,
)
from gsp_lab.model import Assignment, RankingSpec, Realisation, allocate, rank_order
from gsp_lab.valuedist import ValueDistribution


@dataclass(frozen=True)
class MetricBundle:
    revenue: float
    welfare: float
    click_yield: float
    virtual_surplus: float


def _virtual_surplus(dist: ValueDistribution, values, relevances, allocations) -> float:
    slotted = allocations > 0
    if not slotted.any():
        return 0.0
    phi = np.asarray(dist.phi(values[slotted]), dtype=float)
    return float(np.sum(phi * relevances[slotted] * allocations[slotted]))


def metrics(realisation: Realisation, assignment: Assignment,
            dist: ValueDistribution | None = None) -> MetricBundle:
    """Revenue, welfare, click yield and virtual surplus of one auction.

    Without ``dist`` the virtual surplus is NaN.
    """
    v = realisation.values
    w = realisation.relevances
    x = assignment.allocations
    clicks = w * x
    vs = _virtual_surplus(dist, v, w, x) if dist is not None else float("nan")
    return MetricBundle(
        revenue=float(np.sum(assignment.prices * clicks)),
        welfare=float(np.sum(v * clicks)),
        click_yield=float(np.sum(clicks)),
        virtual_surplus=vs,
    )


def truthful_assignment(spec: RankingSpec, realisation: Realisation) -> Assignment:
    return allocate(spec, realisation.values, realisation)


def bne_revenue_bound(realisation: Realisation, truthful: Assignment,
                      dist: ValueDistribution) -> float:
    """Virtual surplus of the truthful-order allocation for this realisation.

    Its mean over realisations is the revenue of the best Bayes-Nash
    equilibrium that uses the same allocation rule.
    """
    if not dist.mhr:
        raise BoundUnavailableError(
            f"{dist.kind} values have no monotone hazard rate; use simulated revenue"
        )
    return _virtual_surplus(dist, realisation.values, realisation.relevances,
                            truthful.allocations)


def swap_improves(dist: ValueDistribution, first: tuple, second: tuple) -> bool:
    """Whether exchanging two bidders' allocations raises virtual surplus.

    ``first`` and ``second`` are ``(value, relevance, allocation)`` triples.
    True when the first has the larger ``phi * w`` but the smaller allocation.
    """
    (ti, wi, xi), (tj, wj, xj) = first, second
    pi = float(dist.phi(ti)) * wi
    pj = float(dist.phi(tj)) * wj
    return pi > pj and xi < xj


@dataclass(frozen=True)
class SwapStep:
    position: int
    promoted: int
    demoted: int
    delta: float


@dataclass
class SwapTrace:
    inversion_set: frozenset
    steps: list = field(default_factory=list)
    start_order: tuple = ()
    final_order: tuple = ()
    target_order: tuple = ()

    @property
    def nonzero_steps(self) -> list:
        return [s for s in self.steps if s.delta != 0]

    @property
    def total_delta(self) -> float:
        return float(sum(s.delta for s in self.steps))


def _check_swap_specs(spec_y: RankingSpec, spec_z: RankingSpec) -> float:
    if spec_y.family != "proposed" or spec_y.reserve_score:
        raise PreconditionError("spec_y must be the proposed ranking without reserve score")
    if spec_z.family != "standard" or not spec_z.has_filter:
        raise PreconditionError("spec_z must be the standard ranking with a reserve-price filter")
    if spec_y.r != spec_z.reserve_price:
        raise PreconditionError("both rankings must use the same reserve price")
    return spec_y.r


def transform_by_swaps(dist: ValueDistribution, realisation: Realisation,
                       spec_y: RankingSpec, spec_z: RankingSpec) -> SwapTrace:
    """Bubble the truthful z-order into the truthful y-order.

    Each adjacent transposition resolves exactly one inversion; its delta is
    the change in virtual surplus when the two bidders trade slots.
    """
    _check_swap_specs(spec_y, spec_z)
    v, w = realisation.values, realisation.relevances
    y = list(spec_y.scores(v, w))
    z = list(spec_z.scores(v, w))
    if {i for i, s in enumerate(y) if s > 0} != {i for i, s in enumerate(z) if s > 0}:
        raise PreconditionError("rankings exclude different bidders")
    z_order = rank_order(z)
    y_order = rank_order(y)
    target = {b: k for k, b in enumerate(y_order)}
    inversions = frozenset(
        (a, b) for a, b in itertools.combinations(z_order, 2) if target[a] > target[b]
    )
    effects = realisation.slots.padded(len(z_order) + 1)
    phi_w = {i: float(dist.phi(v[i])) * w[i] for i in z_order}

    current = list(z_order)
    steps = []
    swapped = True
    while swapped:
        swapped = False
        for p in range(len(current) - 1):
            a, b = current[p], current[p + 1]
            if target[a] > target[b]:
                delta = (phi_w[b] - phi_w[a]) * (effects[p] - effects[p + 1])
                steps.append(SwapStep(p + 1, b, a, delta))
                current[p], current[p + 1] = b, a
                swapped = True
    return SwapTrace(inversions, steps, tuple(z_order), tuple(current), tuple(y_order))


def pairwise_dominance_check(dist: ValueDistribution, r: float, theta_i: float,
                              theta_j: float, w_i: float, w_j: float) -> bool:
    """Pairwise form of the dominance condition.

    Whenever ``(theta - r) w`` and ``theta w`` disagree on which of the two
    bidders ranks higher, the one favoured by ``(theta - r) w`` must have the
    larger ``phi * w``.  Requires ``theta_i > theta_j >= r``.
    """
    if not theta_i > theta_j >= r:
        raise PreconditionError("need theta_i > theta_j >= r")
    phi_i = float(dist.phi(theta_i))
    phi_j = float(dist.phi(theta_j))
    if phi_i == phi_j:
        raise DegeneratePairError("equal virtual values")
    y_i, y_j = (theta_i - r) * w_i, (theta_j - r) * w_j
    z_i, z_j = theta_i * w_i, theta_j * w_j
    if y_i > y_j and z_i < z_j:
        return phi_i * w_i > phi_j * w_j
    if y_j > y_i and z_j < z_i:
        return phi_j * w_j > phi_i * w_i
    return True


@dataclass(frozen=True)
class FilterSneSearchReport:
    profiles: int
    admissible: int
    sne_profiles: int
    counterexamples: list
    truthful_surplus: float


def filter_sne_search(dist: ValueDistribution, realisation: Realisation, r: float,
                  grid_points: int = 20, slack: float = SNE_SLACK) -> FilterSneSearchReport:
    """Search gridded bid profiles of the filtered standard ranking for SNE
    whose virtual surplus beats the truthful-order allocation.

    Bidders with ``theta >= r`` bid on ``grid_points`` points of
    ``[r, theta]``; the others bid their value.  A profile is admissible when
    every bidder without a slot bids its value.  Admissible SNE with virtual
    surplus above the truthful one (by more than 1e-12) are counterexamples.
    """
    v, w = realisation.values, realisation.relevances
    n = realisation.n
    spec_z = RankingSpec.standard(reserve_price=r)
    truthful = truthful_assignment(spec_z, realisation)
    best = _virtual_surplus(dist, v, w, truthful.allocations)

    axes = [np.linspace(r, t, grid_points) if t >= r else np.array([t]) for t in v]
    bids = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, n)
    P = len(bids)

    scores = np.where(bids >= r, bids * w, 0.0)
    order = np.argsort(-scores, axis=1, kind="stable")
    ranked = np.take_along_axis(scores, order, axis=1)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(n)[None, :].repeat(P, 0), axis=1)
    qualifying = scores > 0
    slot_eff = realisation.slots.padded(n)
    x = np.where(qualifying, slot_eff[rank], 0.0)

    admissible = np.all((x > 0) | (bids == v), axis=1)

    nxt = np.concatenate([ranked[:, 1:], np.zeros((P, 1))], axis=1)
    own_next = np.take_along_axis(nxt, rank, axis=1)
    price = np.maximum(r, own_next / w)
    own_util = np.where(x > 0, (v - price) * x, 0.0)
    ok = np.all(own_util >= -slack, axis=1)
    n_occupied = np.minimum(qualifying.sum(axis=1), realisation.m)
    for pos in range(realisation.m):
        occupied = pos < n_occupied
        target_price = np.maximum(r, nxt[:, pos : pos + 1] / w)
        alt = (v - target_price) * slot_eff[pos]
        envy = (alt > own_util + slack) & (rank != pos) & occupied[:, None]
        ok &= ~envy.any(axis=1)

    candidates = admissible & ok
    phi = np.asarray(dist.phi(v), dtype=float)
    with np.errstate(invalid="ignore"):
        surplus = np.where(x > 0, phi * w * x, 0.0).sum(axis=1)
    bad = np.nonzero(candidates & (surplus > best + 1e-12))[0]
    return FilterSneSearchReport(
        profiles=P,
        admissible=int(admissible.sum()),
        sne_profiles=int(candidates.sum()),
        counterexamples=[(tuple(bids[k]), float(surplus[k])) for k in bad],
        truthful_surplus=best,
    )
