"""Monte Carlo experiment engine.

All grid points of a sweep are evaluated on the same sampled realisations
(common random numbers).  Realisations are drawn in fixed-size blocks, block
``b`` from a generator seeded with ``(seed, b)``, so trial ``t`` does not
depend on the total trial count or on evaluation order.

Per grid point the engine uses one of three revenue modes:

``lowest_sne``
    realised lowest-SNE payments; rankings of the form (g(w) b - h(w))^+ only.
``bne_bound``
    virtual surplus of the truthful-order allocation (needs an MHR value
    distribution independent of relevance).
``myerson``
    payments of the truthful mechanism for the ranking's allocation rule;
    identical to ``lowest_sne`` where both apply, and also defined for the
    reserve-price filter.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from gsp_lab.errors import BoundUnavailableError, ConfigError, InvalidInputError
from gsp_lab.model import RankingSpec, Realisation, SlotCurve
from gsp_lab.valuedist import (
    PopulationModel,
    Uniform,
    ValueDistribution,
    condition_holds,
    reserve_root,
    sample_types,
)

BLOCK = 4096
MODES = ("lowest_sne", "bne_bound", "myerson")
GRID_FAMILIES = (
    "proposed",
    "standard",
    "standard_r",
    "standard_rho",
    "squashed",
    "squashed_rho",
    "by_bid",
    "by_bid_rho",
)


def build_spec(family: str, r: float = 0.0, alpha: float = 1.0, rho: float = 0.0) -> RankingSpec:
    """Ranking for a named family; squashing exponent 0 means rank by bid."""
    if family == "proposed":
        return RankingSpec.proposed(r)
    if family == "standard":
        return RankingSpec.standard()
    if family == "standard_r":
        return RankingSpec.standard(reserve_price=r)
    if family == "standard_rho":
        return RankingSpec.standard(reserve_score=rho)
    if family in ("squashed", "squashed_rho"):
        rho = rho if family == "squashed_rho" else 0.0
        if alpha == 0:
            return RankingSpec.by_bid(reserve_score=rho)
        return RankingSpec.squashed(alpha, reserve_score=rho)
    if family in ("by_bid", "by_bid_rho"):
        return RankingSpec.by_bid(reserve_score=rho if family == "by_bid_rho" else 0.0)
    raise ConfigError(f"unknown ranking family {family!r}")


@dataclass
class FamilyGrid:
    """A ranking family and the values swept for each of its parameters.

    Parameters not listed are held at their neutral value.  Each grid is a
    list or a ``{"start", "stop", "num"}`` range.  Values may be the strings
    ``"theta_bar"`` (reserve root of the value distribution) or
    ``"score_q90"`` (0.9-quantile of the family's unreserved scores over the
    sampled bidders), resolved against the experiment.
    """

    family: str
    r: list = field(default_factory=lambda: [0.0])
    alpha: list = field(default_factory=lambda: [1.0])
    rho: list = field(default_factory=lambda: [0.0])
    mode: str | None = None

    def __post_init__(self):
        if self.family not in GRID_FAMILIES:
            raise ConfigError(f"unknown ranking family {self.family!r}")
        if self.mode is not None and self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("r", "alpha", "rho"):
            grid = getattr(self, name)
            if not isinstance(grid, (list, tuple, dict)) or not grid:
                raise ConfigError(f"{self.family}: empty or malformed {name} grid")


@dataclass
class ExperimentConfig:
    population: PopulationModel
    n: int
    slots: SlotCurve
    spec_grid: list
    trials: int
    seed: int
    mode: str = "lowest_sne"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 1:
            raise ConfigError("need at least one bidder")
        if not self.spec_grid:
            raise ConfigError("spec grid is empty")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class OperatingPoint:
    family: str
    r: float
    alpha: float
    rho: float
    revenue: float
    revenue_se: float
    welfare: float
    welfare_se: float
    clicks: float
    clicks_se: float
    trials: int

    def metric(self, name: str) -> float:
        return getattr(self, _METRIC_ATTR[name])

    def metric_se(self, name: str) -> float:
        return getattr(self, _METRIC_ATTR[name] + "_se")


_METRIC_ATTR = {"revenue": "revenue", "welfare": "welfare", "click_yield": "clicks",
                "clicks": "clicks"}


@dataclass
class TrialMetrics:
    """Per-trial metric arrays for one ranking on a batch of realisations."""

    revenue: np.ndarray
    welfare: np.ndarray
    clicks: np.ndarray
    virtual_surplus: np.ndarray


# -- sampling ----------------------------------------------------------------


def draw_realisations(population: PopulationModel, n: int, trials: int, seed: int):
    """Values and relevances, each of shape (trials, n)."""
    blocks = math.ceil(trials / BLOCK)
    thetas, rels = [], []
    for b in range(blocks):
        rng = np.random.default_rng([seed, b])
        th, w = sample_types(population, (BLOCK, n), rng)
        thetas.append(th)
        rels.append(w)
    theta = np.concatenate(thetas)[:trials]
    w = np.concatenate(rels)[:trials]
    if np.any(w <= 0) or np.any(w > 1):
        raise InvalidInputError("relevance distribution must stay within (0, 1]")
    return theta, w


def realisation_for_trial(config: ExperimentConfig, t: int) -> Realisation:
    """The realisation the engine uses for trial ``t``."""
    rng = np.random.default_rng([config.seed, t // BLOCK])
    th, w = sample_types(config.population, (BLOCK, config.n), rng)
    return Realisation.from_arrays(th[t % BLOCK], w[t % BLOCK], config.slots)


# -- evaluation ----------------------------------------------------------------


def resolve_mode(spec: RankingSpec, requested: str, population: PopulationModel) -> str:
    """Mode actually used for ``spec``; the filter ranking falls back to the bound.

    Raises :class:`BoundUnavailableError` when the bound is needed but the
    value distribution is not MHR, and :class:`ConfigError` for correlated
    populations.
    """
    dist = population.value_dist
    if requested == "lowest_sne" and not spec.in_class_e4:
        requested = "bne_bound"
    if requested == "bne_bound":
        if not dist.mhr:
            raise BoundUnavailableError(
                f"{spec.label}: virtual-surplus bound unavailable for {dist.kind} values; "
                "use mode 'myerson'"
            )
        if population.correlation != 0:
            raise ConfigError("virtual-surplus bound assumes independent value and relevance")
    return requested


def evaluate_batch(spec: RankingSpec, theta: np.ndarray, w: np.ndarray, slots: SlotCurve,
                   dist: ValueDistribution | None, mode: str = "lowest_sne") -> TrialMetrics:
    """Metrics of the truthful-order allocation on every realisation.

    Revenue follows ``mode``; welfare, clicks and virtual surplus are the
    same in every mode.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "lowest_sne" and not spec.in_class_e4:
        raise ConfigError(f"{spec.label} has no lowest SNE; use 'bne_bound' or 'myerson'")
    if mode == "bne_bound" and (dist is None or not dist.mhr):
        raise BoundUnavailableError("virtual-surplus bound needs an MHR value distribution")
    T, n = theta.shape
    scores = spec.scores(theta, w)
    order = np.argsort(-scores, axis=1, kind="stable")
    ranked = np.take_along_axis(scores, order, axis=1)
    ranked = np.concatenate([ranked, np.zeros((T, 1))], axis=1)
    th_r = np.take_along_axis(theta, order, axis=1)
    w_r = np.take_along_axis(w, order, axis=1)

    m = min(slots.m, n)
    eff = np.array(slots.effects + (0.0,))
    revenue = np.zeros(T)
    welfare = np.zeros(T)
    clicks = np.zeros(T)
    vs = np.zeros(T)
    for k in range(m):
        slotted = ranked[:, k] > 0
        x = np.where(slotted, eff[k], 0.0)
        wk = w_r[:, k]
        clicks += wk * x
        welfare += th_r[:, k] * wk * x
        if dist is not None:
            with np.errstate(all="ignore"):
                vs += np.where(slotted, dist.phi(th_r[:, k]) * wk * x, 0.0)
        if mode != "bne_bound":
            # threshold payments: average of GSP prices against each lower score
            price = np.zeros(T)
            for j in range(k, m):
                price += (eff[j] - eff[j + 1]) * spec.prices(ranked[:, j + 1], wk)
            price /= eff[k]
            revenue += np.where(slotted, price * wk * x, 0.0)
    if mode == "bne_bound":
        revenue = vs.copy()
    if dist is None:
        vs[:] = np.nan
    return TrialMetrics(revenue, welfare, clicks, vs)


def _mean_se(a: np.ndarray) -> tuple:
    mean = float(np.mean(a))
    se = float(np.std(a, ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
    return mean, se


def summarise(family: str, spec: RankingSpec, tm: TrialMetrics) -> OperatingPoint:
    r, alpha, rho = spec.params
    rev, rev_se = _mean_se(tm.revenue)
    wel, wel_se = _mean_se(tm.welfare)
    clk, clk_se = _mean_se(tm.clicks)
    return OperatingPoint(family, float(r), float(alpha), float(rho), rev, rev_se,
                          wel, wel_se, clk, clk_se, len(tm.revenue))


def _resolve_value(val, family: str, population: PopulationModel, theta, w, alpha) -> float:
    if isinstance(val, str):
        if val == "theta_bar":
            return reserve_root(population.value_dist)
        if val == "score_q90":
            return float(np.quantile(theta * w**alpha, 0.9))
        raise ConfigError(f"{family}: unknown grid token {val!r}")
    try:
        return float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{family}: bad grid value {val!r}") from None


def _resolve_grid(grid, family: str, population: PopulationModel, theta, w, alpha) -> list:
    """A grid is a list of values or ``{"start", "stop", "num"}`` (inclusive ends)."""
    if isinstance(grid, dict):
        try:
            start, stop, num = grid["start"], grid["stop"], int(grid["num"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{family}: range grid needs start, stop and num") from None
        if num < 1:
            raise ConfigError(f"{family}: range grid needs num >= 1")
        lo = _resolve_value(start, family, population, theta, w, alpha)
        hi = _resolve_value(stop, family, population, theta, w, alpha)
        return [float(v) for v in np.linspace(lo, hi, num)]
    return [_resolve_value(v, family, population, theta, w, alpha) for v in grid]


def expand_grid(fg: FamilyGrid, population: PopulationModel, theta, w) -> list:
    """Concrete ranking specs for a family grid, in grid order."""
    specs = []
    for a in _resolve_grid(fg.alpha, fg.family, population, theta, w, 1.0):
        for rv in _resolve_grid(fg.r, fg.family, population, theta, w, a):
            for pv in _resolve_grid(fg.rho, fg.family, population, theta, w, a):
                specs.append(build_spec(fg.family, r=rv, alpha=a, rho=pv))
    return specs


def _max_workers() -> int:
    raw = os.environ.get("GSP_LAB_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"GSP_LAB_THREADS must be an integer, got {raw!r}") from None
    return cap if cap > 0 else (os.cpu_count() or 1)


def sweep_trials(config: ExperimentConfig):
    """Yield ``(family, spec, mode, TrialMetrics)`` for every grid point."""
    theta, w = draw_realisations(config.population, config.n, config.trials, config.seed)
    dist = config.population.value_dist
    jobs = []
    for fg in config.spec_grid:
        for spec in expand_grid(fg, config.population, theta, w):
            mode = resolve_mode(spec, fg.mode or config.mode, config.population)
            jobs.append((fg.family, spec, mode))

    def run(job):
        family, spec, mode = job
        return family, spec, mode, evaluate_batch(spec, theta, w, config.slots, dist, mode)

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        yield from pool.map(run, jobs)


def run_sweep_detailed(config: ExperimentConfig) -> list:
    """``(OperatingPoint, TrialMetrics)`` pairs, in grid order."""
    return [(summarise(family, spec, tm), tm) for family, spec, _, tm in sweep_trials(config)]


def run_sweep(config: ExperimentConfig) -> list:
    """One :class:`OperatingPoint` per grid point, in grid order."""
    return [point for point, _ in run_sweep_detailed(config)]


# -- frontiers -----------------------------------------------------------------


def frontier(points, x_metric: str = "welfare", y_metric: str = "revenue") -> list:
    """Pareto-maximal points (maximising both metrics), sorted by ``x_metric``."""
    pts = list(points)
    keep = []
    for p in pts:
        px, py = p.metric(x_metric), p.metric(y_metric)
        dominated = any(
            q.metric(x_metric) >= px and q.metric(y_metric) >= py
            and (q.metric(x_metric) > px or q.metric(y_metric) > py)
            for q in pts
        )
        if not dominated:
            keep.append(p)
    return sorted(keep, key=lambda p: (p.metric(x_metric), p.metric(y_metric)))


@dataclass(frozen=True)
class FrontierComparison:
    levels: np.ndarray
    diff: np.ndarray
    se: np.ndarray
    z: float

    @property
    def fraction_better(self) -> float:
        """Share of levels where the first frontier is ahead by more than z SE."""
        if len(self.levels) == 0:
            return 0.0
        return float(np.mean(self.diff > self.z * self.se))

    @property
    def fraction_not_worse(self) -> float:
        if len(self.levels) == 0:
            return 0.0
        return float(np.mean(self.diff >= -self.z * self.se))


def _interp_weights(xs: np.ndarray, level: float) -> tuple:
    """Indices ``(j, k)`` and weight ``lam`` with ``interp = (1 - lam) y_j + lam y_k``."""
    k = int(np.searchsorted(xs, level, side="left"))
    if k <= 0:
        return 0, 0, 0.0
    if k >= len(xs):
        return len(xs) - 1, len(xs) - 1, 0.0
    j = k - 1
    span = xs[k] - xs[j]
    return j, k, (float((level - xs[j]) / span) if span > 0 else 0.0)


def compare_frontiers(front_a, front_b, x_metric: str = "welfare", y_metric: str = "revenue",
                      levels: int = 25, z: float = 2.0, samples=None) -> FrontierComparison:
    """Compare two frontiers at evenly spaced ``x_metric`` levels.

    Both frontiers are linearly interpolated over the overlap of their
    ``x_metric`` ranges.  With ``samples`` (a mapping from each point to its
    per-trial ``y_metric`` values, all drawn on the same realisations) the
    standard error is that of the per-trial interpolated difference;
    otherwise the two interpolants are treated as independent.
    """
    def arrays(front):
        xs = np.array([p.metric(x_metric) for p in front])
        ys = np.array([p.metric(y_metric) for p in front])
        ses = np.array([p.metric_se(y_metric) for p in front])
        return xs, ys, ses

    empty = FrontierComparison(np.array([]), np.array([]), np.array([]), z)
    if not front_a or not front_b:
        return empty
    xa, ya, sa = arrays(front_a)
    xb, yb, sb = arrays(front_b)
    lo, hi = max(xa.min(), xb.min()), min(xa.max(), xb.max())
    if hi < lo:
        return empty
    grid = np.linspace(lo, hi, levels)
    diff = np.interp(grid, xa, ya) - np.interp(grid, xb, yb)
    if samples is None:
        se = np.hypot(np.interp(grid, xa, sa), np.interp(grid, xb, sb))
        return FrontierComparison(grid, diff, se, z)
    se = np.empty(levels)
    for n, level in enumerate(grid):
        ja, ka, la = _interp_weights(xa, level)
        jb, kb, lb = _interp_weights(xb, level)
        d = ((1 - la) * samples[front_a[ja]] + la * samples[front_a[ka]]
             - (1 - lb) * samples[front_b[jb]] - lb * samples[front_b[kb]])
        se[n] = _mean_se(d)[1]
    return FrontierComparison(grid, diff, se, z)


# -- revenue dominance ------------------------------------------------------------


@dataclass(frozen=True)
class DominanceResult:
    r: float
    r1: float
    r1_se: float
    r2: float
    r2_se: float
    diff: float
    diff_se: float
    condition_holds: bool

    @property
    def significant(self) -> bool:
        """R1 exceeds R2 by more than two standard errors of the paired difference."""
        return self.diff > 2 * self.diff_se


def dominance_experiment(dist: ValueDistribution, r: float, n: int, m: int, trials: int,
                         seed: int, relevance: ValueDistribution | None = None,
                         slots: SlotCurve | None = None) -> DominanceResult:
    """Proposed(r) lowest-SNE revenue against the filtered standard ranking's bound.

    Both are evaluated on the same realisations; ``diff_se`` is the standard
    error of the per-trial difference.
    """
    population = PopulationModel(dist, relevance or Uniform(0.0, 1.0), 0.0)
    slots = slots or SlotCurve.geometric(m)
    holds = condition_holds(dist, r)
    theta, w = draw_realisations(population, n, trials, seed)
    proposed = evaluate_batch(RankingSpec.proposed(r), theta, w, slots, dist, "lowest_sne")
    filtered = evaluate_batch(RankingSpec.standard(reserve_price=r), theta, w, slots, dist,
                              "bne_bound")
    r1, r1_se = _mean_se(proposed.revenue)
    r2, r2_se = _mean_se(filtered.revenue)
    d, d_se = _mean_se(proposed.revenue - filtered.revenue)
    return DominanceResult(r, r1, r1_se, r2, r2_se, d, d_se, holds)
