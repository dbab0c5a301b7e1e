"""Counterfactual replay of auction logs with bids held fixed.

Each logged auction is re-run under every ranking on the grid: scores,
slot assignment and GSP prices are recomputed from the logged bids, and
revenue is accumulated in expected clicks (``price * relevance * slot
effect``), so the aggregates are deterministic.

Log CSV header: ``auction_id,bidder_id,bid,relevance,slot_count``.
Result CSV header: ``spec,param_r,param_alpha,param_rho,revenue,click_yield,auctions``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from gsp_lab.errors import ConfigError, InvalidInputError
from gsp_lab.model import DEFAULT_SLOT_DECAY, SlotCurve
from gsp_lab.montecarlo import build_spec

LOG_HEADER = ("auction_id", "bidder_id", "bid", "relevance", "slot_count")
RESULT_HEADER = ("spec", "param_r", "param_alpha", "param_rho", "revenue", "click_yield",
                 "auctions")


@dataclass(frozen=True)
class LogRecord:
    auction_id: str
    bidder_id: str
    bid: float
    relevance: float
    slot_count: int

    def __post_init__(self):
        if not (self.bid >= 0 and math.isfinite(self.bid)):
            raise InvalidInputError(f"bid must be a finite value >= 0, got {self.bid}")
        if not 0 < self.relevance <= 1:
            raise InvalidInputError(f"relevance must lie in (0, 1], got {self.relevance}")
        if self.slot_count < 1:
            raise InvalidInputError(f"slot_count must be >= 1, got {self.slot_count}")


@dataclass(frozen=True)
class LogSpec:
    """Parameters of a synthetic log.

    Bids follow ``bid_law``: ``"uniform"`` on [``bid_low``, ``bid_high``] or
    ``"lognormal"`` with log-mean ``bid_mu`` and log-sd ``bid_sigma``.
    Relevances are Uniform(``rel_low``, ``rel_high``).  ``correlation``
    couples bid and relevance through a Gaussian copula.  Each atom
    ``(value, mass)`` then replaces a ``mass`` share of bids by ``value``.

    A thin market has fewer than 10 bidders per auction and at least one
    atom.  The thick default pairs heavy-tailed bids with strong positive
    bid/relevance dependence.
    """

    market: str = "thin"
    auctions: int = 1000
    bidders: int | None = None
    atoms: tuple = ((0.4, 0.3),)
    bid_law: str = "uniform"
    bid_low: float = 0.05
    bid_high: float = 1.0
    bid_mu: float = -1.0
    bid_sigma: float = 1.0
    rel_low: float = 0.05
    rel_high: float = 1.0
    correlation: float = 0.0
    slot_count: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.market not in ("thick", "thin"):
            raise ConfigError(f"market must be 'thick' or 'thin', got {self.market!r}")
        if self.bidders is None:
            object.__setattr__(self, "bidders", 500 if self.market == "thick" else 6)
        object.__setattr__(self, "atoms", tuple(tuple(map(float, a)) for a in self.atoms))
        if self.auctions < 1 or self.bidders < 1 or self.slot_count < 1:
            raise ConfigError("auctions, bidders and slot_count must be >= 1")
        if self.market == "thin":
            if self.bidders >= 10:
                raise ConfigError("a thin market has fewer than 10 bidders")
            if not self.atoms:
                raise ConfigError("a thin market needs at least one common-bid atom")
        if sum(m for _, m in self.atoms) > 1 or any(m < 0 or v < 0 for v, m in self.atoms):
            raise ConfigError("atom masses must be non-negative and sum to at most 1")
        if self.bid_law not in ("uniform", "lognormal"):
            raise ConfigError(f"bid_law must be 'uniform' or 'lognormal', got {self.bid_law!r}")
        if not 0 <= self.bid_low < self.bid_high:
            raise ConfigError("need 0 <= bid_low < bid_high")
        if not self.bid_sigma > 0:
            raise ConfigError("bid_sigma must be > 0")
        if not 0 < self.rel_low < self.rel_high <= 1:
            raise ConfigError("need 0 < rel_low < rel_high <= 1")
        if not -1 < self.correlation < 1:
            raise ConfigError("correlation must lie in (-1, 1)")

    @classmethod
    def thick(cls, auctions: int = 200, seed: int = 0, **kw) -> "LogSpec":
        kw.setdefault("atoms", ())
        kw.setdefault("bid_law", "lognormal")
        kw.setdefault("correlation", 0.7)
        return cls(market="thick", auctions=auctions, seed=seed, **kw)

    @classmethod
    def thin(cls, auctions: int = 1000, seed: int = 0, **kw) -> "LogSpec":
        return cls(market="thin", auctions=auctions, seed=seed, **kw)

    @classmethod
    def from_config(cls, cfg: dict) -> "LogSpec":
        cfg = dict(cfg)
        market = cfg.pop("market", "thin")
        if "atoms" in cfg:
            cfg["atoms"] = tuple(tuple(a) for a in cfg["atoms"])
        try:
            return cls.thick(**cfg) if market == "thick" else cls.thin(**cfg)
        except TypeError as exc:
            raise ConfigError(f"bad log generator settings: {exc}") from None


def _draw(spec: LogSpec, rng: np.random.Generator, size: int) -> tuple:
    z = rng.standard_normal((2, size))
    zr = spec.correlation * z[0] + math.sqrt(1 - spec.correlation**2) * z[1]
    if spec.bid_law == "lognormal":
        bids = np.exp(spec.bid_mu + spec.bid_sigma * z[0])
    else:
        bids = spec.bid_low + (spec.bid_high - spec.bid_low) * ndtr(z[0])
    rel = spec.rel_low + (spec.rel_high - spec.rel_low) * ndtr(zr)
    u = rng.random(size)
    edge = 0.0
    for value, mass in spec.atoms:
        bids[(u >= edge) & (u < edge + mass)] = value
        edge += mass
    return bids, rel


def generate_log(spec: LogSpec) -> list:
    rng = np.random.default_rng(spec.seed)
    total = spec.auctions * spec.bidders
    bids, rel = _draw(spec, rng, total)
    records = []
    for k in range(total):
        a, b = divmod(k, spec.bidders)
        records.append(LogRecord(f"a{a}", f"b{b}", float(bids[k]), float(rel[k]),
                                 spec.slot_count))
    return records


# -- CSV ---------------------------------------------------------------------


def write_log_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(LOG_HEADER)
        for rec in records:
            out.writerow([rec.auction_id, rec.bidder_id, repr(rec.bid), repr(rec.relevance),
                          rec.slot_count])


def read_log_csv(path) -> tuple:
    """Parse a log file; returns ``(records, rejected_count)``.

    Rows with the wrong arity, unparsable or out-of-range fields, or a
    slot_count that disagrees with the first record of their auction are
    rejected individually.
    """
    path = Path(path)
    records, rejected = [], 0
    slot_counts = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
            raise InvalidInputError(f"{path}: expected header {','.join(LOG_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                if len(row) != len(LOG_HEADER):
                    raise ValueError
                rec = LogRecord(row[0], row[1], float(row[2]), float(row[3]), int(row[4]))
            except (ValueError, InvalidInputError):
                rejected += 1
                continue
            if slot_counts.setdefault(rec.auction_id, rec.slot_count) != rec.slot_count:
                rejected += 1
                continue
            records.append(rec)
    return records, rejected


# -- replay ------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayPoint:
    spec: str
    r: float
    alpha: float
    rho: float
    revenue: float
    click_yield: float
    auctions: int


def _normalise_grid_entry(entry) -> dict:
    if isinstance(entry, str):
        return {"family": entry, "alpha": 1.0, "rho": 0.0}
    if isinstance(entry, dict) and "family" in entry:
        return {"family": entry["family"], "alpha": float(entry.get("alpha", 1.0)),
                "rho": float(entry.get("rho", 0.0))}
    raise ConfigError(f"bad replay spec entry {entry!r}")


def _replay_one(spec, bids, rel, effects) -> tuple:
    scores = spec.scores(bids, rel)
    m = len(effects)
    order = np.argsort(-scores, kind="stable")
    ranked = scores[order]
    k = min(m, int(np.count_nonzero(ranked > 0)))
    if k == 0:
        return 0.0, 0.0
    top = order[:k]
    nxt = np.append(ranked[1:], 0.0)[:k]
    prices = spec.prices(nxt, rel[top])
    clicks = rel[top] * effects[:k]
    return float(np.sum(prices * clicks)), float(np.sum(clicks))


def replay_sweep(records, spec_grid, r_grid, decay: float = DEFAULT_SLOT_DECAY,
                 min_bid: float | None = None) -> list:
    """Aggregate revenue and click yield of each (ranking, r) over the log.

    ``spec_grid`` entries are family names understood by
    :func:`gsp_lab.montecarlo.build_spec` or dicts with ``family`` and
    optional ``alpha``/``rho``.  ``min_bid`` drops bids below it from every
    auction before ranking, whatever the ranking.
    """
    records = list(records)
    if not records:
        raise InvalidInputError("empty log")
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec.auction_id, []).append(rec)
    auctions = []
    for recs in groups.values():
        m = recs[0].slot_count
        if any(r.slot_count != m for r in recs):
            raise InvalidInputError(f"auction {recs[0].auction_id}: inconsistent slot_count")
        bids = np.array([r.bid for r in recs])
        rel = np.array([r.relevance for r in recs])
        if min_bid is not None:
            keep = bids >= min_bid
            bids, rel = bids[keep], rel[keep]
        auctions.append((bids, rel, np.array(SlotCurve.geometric(m, decay).effects)))

    points = []
    for entry in spec_grid:
        e = _normalise_grid_entry(entry)
        for r in r_grid:
            spec = build_spec(e["family"], r=float(r), alpha=e["alpha"], rho=e["rho"])
            revenue = clicks = 0.0
            for bids, rel, effects in auctions:
                rev, clk = _replay_one(spec, bids, rel, effects)
                revenue += rev
                clicks += clk
            _, alpha, rho = spec.params
            points.append(ReplayPoint(e["family"], float(r), float(alpha), float(rho),
                                      revenue, clicks, len(auctions)))
    return points


def _curve_label(spec: str, alpha: float, rho: float) -> str:
    if spec in ("squashed", "squashed_rho"):
        return f"{spec}(alpha={alpha:g},rho={rho:g})"
    if spec.endswith("_rho"):
        return f"{spec}(rho={rho:g})"
    return spec


def smoothness_report(points) -> dict:
    """Jaggedness per ranking: total variation of revenue over r minus net change.

    Zero for monotone curves.  Points are grouped by ranking (family plus
    any fixed squashing exponent or reserve score) and sorted by r.
    """
    curves: dict = {}
    for p in points:
        curves.setdefault(_curve_label(p.spec, p.alpha, p.rho), []).append((p.r, p.revenue))
    out = {}
    for label, curve in curves.items():
        curve.sort()
        rev = np.array([v for _, v in curve])
        tv = float(np.sum(np.abs(np.diff(rev))))
        out[label] = tv - abs(float(rev[-1] - rev[0]))
    return out


def write_replay_csv(points, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(RESULT_HEADER)
        for p in points:
            out.writerow([p.spec, repr(p.r), repr(p.alpha), repr(p.rho), repr(p.revenue),
                          repr(p.click_yield), p.auctions])


def read_replay_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [ReplayPoint(row["spec"], float(row["param_r"]), float(row["param_alpha"]),
                            float(row["param_rho"]), float(row["revenue"]),
                            float(row["click_yield"]), int(row["auctions"]))
                for row in reader]
