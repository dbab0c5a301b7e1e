"""Value and relevance distributions, virtual values and reserve analysis.

The virtual value of a value ``t`` is ``t - (1 - F(t)) / f(t)``.  Its zero
``theta_bar`` is the revenue-optimal reserve when the hazard rate is
monotone.  :func:`maincond_threshold` evaluates ``inf_{t >= r} t - phi/phi'``
which decides whether folding the reserve into the ranking beats using it as
a pure filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from gsp_lab.errors import (
    ConditionInapplicableError,
    InvalidInputError,
    NoRootError,
    PreconditionError,
    UndefinedVirtualValueError,
)
from gsp_lab.model import Bidder

GRID_POINTS = 10_000
TAIL_QUANTILE = 1 - 1e-6


class ValueDistribution:
    """Base class: a continuous law on [lower, upper] (upper may be inf)."""

    kind = "abstract"
    #: known to have a non-decreasing hazard rate
    mhr = False

    lower = 0.0
    upper = math.inf

    def cdf(self, t):
        raise NotImplementedError

    def pdf(self, t):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def phi(self, t):
        """Vectorised virtual value, no domain checks."""
        raise NotImplementedError

    def phi_prime(self, t):
        """Closed-form derivative of phi, or None when there is none."""
        return None

    def phi_defined(self, t) -> bool:
        return self.lower <= t <= self.upper and self.pdf(t) > 0

    def truncated_upper(self) -> float:
        if math.isfinite(self.upper):
            return self.upper
        return float(self.ppf(TAIL_QUANTILE))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.ppf(rng.random(size))

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(ValueDistribution):
    lo: float = 0.0
    hi: float = 1.0

    kind = "uniform"
    mhr = True

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise InvalidInputError(f"uniform needs lo < hi, got ({self.lo}, {self.hi})")

    @property
    def lower(self):
        return self.lo

    @property
    def upper(self):
        return self.hi

    def cdf(self, t):
        return np.clip((np.asarray(t, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lo) & (t <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def ppf(self, u):
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)

    def phi(self, t):
        return 2.0 * np.asarray(t, dtype=float) - self.hi

    def phi_prime(self, t):
        return 2.0 + 0.0 * np.asarray(t, dtype=float)

    def to_config(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Exponential(ValueDistribution):
    rate: float = 1.0

    kind = "exponential"
    mhr = True
    lower = 0.0
    upper = math.inf

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidInputError(f"exponential rate must be > 0, got {self.rate}")

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, -np.expm1(-self.rate * np.maximum(t, 0)), 0.0)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * np.maximum(t, 0)), 0.0)

    def ppf(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate

    def phi(self, t):
        return np.asarray(t, dtype=float) - 1.0 / self.rate

    def phi_prime(self, t):
        return 1.0 + 0.0 * np.asarray(t, dtype=float)

    def to_config(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class LogNormal(ValueDistribution):
    """Log-normal values; the hazard rate is not monotone."""

    mu: float = 0.0
    sigma: float = 1.0

    kind = "lognormal"
    mhr = False
    lower = 0.0
    upper = math.inf

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError(f"lognormal sigma must be > 0, got {self.sigma}")

    @property
    def _law(self):
        return stats.lognorm(s=self.sigma, scale=math.exp(self.mu))

    def cdf(self, t):
        return self._law.cdf(t)

    def pdf(self, t):
        return self._law.pdf(t)

    def ppf(self, u):
        return np.exp(self.mu + self.sigma * special.ndtri(np.asarray(u, dtype=float)))

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        # inverse hazard in log space; pdf underflows long before sf does
        law = self._law
        with np.errstate(divide="ignore", invalid="ignore"):
            return t - np.exp(law.logsf(t) - law.logpdf(t))

    def to_config(self):
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Beta22(ValueDistribution):
    """Beta(2, 2) on [0, 1]: f = 6t(1-t), phi = 4t/3 - 1/6 - 1/(6t)."""

    kind = "beta22"
    mhr = True
    lower = 0.0
    upper = 1.0

    def cdf(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return t * t * (3.0 - 2.0 * t)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0) & (t <= 1), 6.0 * t * (1.0 - t), 0.0)

    def ppf(self, u):
        return stats.beta.ppf(u, 2, 2)

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return 4.0 * t / 3.0 - 1.0 / 6.0 - 1.0 / (6.0 * t)

    def phi_prime(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return 4.0 / 3.0 + 1.0 / (6.0 * t * t)

    def phi_defined(self, t) -> bool:
        # the closed form extends continuously to t = 1 where f vanishes
        return 0 < t <= 1

    def to_config(self):
        return {"kind": self.kind}


def from_config(cfg: dict) -> ValueDistribution:
    """Build a distribution from ``{"kind": ..., <params>}``."""
    cfg = dict(cfg)
    kind = str(cfg.pop("kind", "")).lower()
    cfg.pop("_comment", None)
    builders = {
        "uniform": Uniform,
        "exponential": Exponential,
        "lognormal": LogNormal,
        "beta22": Beta22,
    }
    if kind not in builders:
        raise InvalidInputError(f"unknown distribution kind {kind!r}")
    try:
        return builders[kind](**{k: float(v) for k, v in cfg.items()})
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for {kind}: {exc}") from None


# -- virtual values ---------------------------------------------------------


def virtual_value(dist: ValueDistribution, t: float) -> float:
    """phi(t) = t - (1 - F(t)) / f(t)."""
    if not dist.phi_defined(t):
        raise UndefinedVirtualValueError(f"virtual value undefined at t={t} for {dist.kind}")
    val = float(dist.phi(t))
    if not math.isfinite(val):
        raise UndefinedVirtualValueError(f"virtual value not finite at t={t} for {dist.kind}")
    return val


def numeric_phi_prime(dist: ValueDistribution, t: float) -> float:
    """Central difference of phi with step 1e-6 * max(1, |t|)."""
    step = 1e-6 * max(1.0, abs(t))
    lo, hi = t - step, t + step
    if dist.lower > lo:
        lo = t
    if math.isfinite(dist.upper) and hi > dist.upper:
        hi = t
    return float((dist.phi(hi) - dist.phi(lo)) / (hi - lo))


def virtual_value_prime(dist: ValueDistribution, t: float) -> float:
    """phi'(t); closed form when the family has one, else a central difference."""
    virtual_value(dist, t)
    closed = dist.phi_prime(t)
    if closed is not None:
        return float(closed)
    return numeric_phi_prime(dist, t)


def hazard_is_monotone(dist: ValueDistribution, points: int = 2000) -> bool:
    """Grid check that f / (1 - F) is non-decreasing on the support."""
    lo = dist.lower
    hi = dist.truncated_upper()
    t = np.linspace(lo, hi, points + 2)[1:-1]
    sf = 1.0 - np.asarray(dist.cdf(t), dtype=float)
    keep = sf > 1e-9
    hazard = np.asarray(dist.pdf(t), dtype=float)[keep] / sf[keep]
    return bool(np.all(np.diff(hazard) >= -1e-9 * np.maximum(1.0, hazard[1:])))


def _support_grid(dist: ValueDistribution, lo: float, points: int) -> np.ndarray:
    hi = dist.truncated_upper()
    return np.linspace(lo, hi, points)


def reserve_root(dist: ValueDistribution) -> float:
    """theta_bar with phi(theta_bar) = 0: sign scan, then Brent's method."""
    lo = dist.lower
    hi = dist.truncated_upper()
    grid = np.linspace(lo, hi, GRID_POINTS + 1)
    # the endpoints may sit where phi is singular (e.g. 1/t at 0)
    grid[0] = lo + (hi - lo) * 1e-9
    with np.errstate(all="ignore"):
        vals = np.asarray(dist.phi(grid), dtype=float)
    finite = np.isfinite(vals)
    grid, vals = grid[finite], vals[finite]
    changes = np.nonzero(np.diff(np.signbit(vals)))[0]
    if len(changes) == 0:
        raise NoRootError(f"phi has no sign change on the support of {dist.kind}")
    if len(changes) > 1:
        raise NoRootError(f"phi changes sign {len(changes)} times for {dist.kind}")
    k = changes[0]
    a, b = float(grid[k]), float(grid[k + 1])
    if vals[k] == 0:
        return a
    if vals[k + 1] == 0:
        return b
    return float(optimize.brentq(lambda t: float(dist.phi(t)), a, b, xtol=1e-15,
                                 rtol=4 * np.finfo(float).eps))


def _golden_min(fn, a: float, b: float, tol: float = 1e-12, max_iter: int = 200):
    inv_phi = (math.sqrt(5) - 1) / 2
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def _condition_integrand(dist: ValueDistribution, t):
    closed = dist.phi_prime(t)
    if closed is None:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        closed = np.array([numeric_phi_prime(dist, float(x)) for x in t])
    return t - np.asarray(dist.phi(t), dtype=float) / closed, closed


def maincond_threshold(dist: ValueDistribution, r: float) -> float:
    """inf over t in [r, T] of t - phi(t)/phi'(t).

    The reserve ``r`` satisfies the dominance condition when it does not
    exceed the returned value.  Infinite supports are truncated at the
    1 - 1e-6 quantile.
    """
    if not dist.mhr or not hazard_is_monotone(dist):
        raise ConditionInapplicableError(f"{dist.kind} does not have a monotone hazard rate")
    theta_bar = reserve_root(dist)
    if not 0 < r <= theta_bar + 1e-12:
        raise PreconditionError(f"r must lie in (0, theta_bar={theta_bar:.6g}], got {r}")
    grid = _support_grid(dist, r, GRID_POINTS)
    vals, dphi = _condition_integrand(dist, grid)
    if np.any(~(dphi > 0)):
        raise ConditionInapplicableError("phi' <= 0 somewhere on [r, T]")
    k = int(np.argmin(vals))
    best = float(vals[k])
    a = float(grid[max(k - 1, 0)])
    b = float(grid[min(k + 1, len(grid) - 1)])
    if b > a:
        _, refined = _golden_min(lambda x: float(_condition_integrand(dist, x)[0]), a, b)
        best = min(best, float(refined))
    return best


def condition_holds(dist: ValueDistribution, r: float, slack: float = 1e-9) -> bool:
    return r <= maincond_threshold(dist, r) + slack


# -- populations -----------------------------------------------------------


@dataclass(frozen=True)
class PopulationModel:
    """Joint law of (value, relevance) with Gaussian-copula dependence."""

    value_dist: ValueDistribution
    relevance_dist: ValueDistribution
    correlation: float = 0.0

    def __post_init__(self):
        if not -1 <= self.correlation <= 1:
            raise InvalidInputError(f"correlation must lie in [-1, 1], got {self.correlation}")

    @classmethod
    def from_config(cls, cfg: dict) -> "PopulationModel":
        return cls(
            from_config(cfg.get("value", {"kind": "uniform"})),
            from_config(cfg.get("relevance", {"kind": "uniform"})),
            float(cfg.get("correlation", 0.0)),
        )

    def to_config(self) -> dict:
        return {
            "value": self.value_dist.to_config(),
            "relevance": self.relevance_dist.to_config(),
            "correlation": self.correlation,
        }


def sample_types(model: PopulationModel, shape, rng: np.random.Generator):
    """Draw (values, relevances) arrays of the given shape.

    Both margins are pushed through a bivariate normal with the model's
    correlation; zero correlation gives independent draws.
    """
    z = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    rho = model.correlation
    z_rel = rho * z[0] + math.sqrt(1.0 - rho * rho) * z[1]
    values = model.value_dist.ppf(special.ndtr(z[0]))
    relevances = model.relevance_dist.ppf(special.ndtr(z_rel))
    return np.asarray(values, dtype=float), np.asarray(relevances, dtype=float)


def sample_population(model: PopulationModel, n: int, seed: int) -> list:
    """``n`` i.i.d. bidders, deterministic in ``seed``."""
    if n < 1:
        raise InvalidInputError(f"need n >= 1 bidders, got {n}")
    rng = np.random.default_rng(seed)
    values, rel = sample_types(model, n, rng)
    return [Bidder(float(v), float(w), i) for i, (v, w) in enumerate(zip(values, rel))]
