import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from gsp_lab.errors import (
    ConditionInapplicableError,
    InvalidInputError,
    NoRootError,
    PreconditionError,
    UndefinedVirtualValueError,
)
from gsp_lab.valuedist import (
    Beta22,
    Exponential,
    LogNormal,
    PopulationModel,
    Uniform,
    ValueDistribution,
    condition_holds,
    from_config,
    hazard_is_monotone,
    maincond_threshold,
    numeric_phi_prime,
    reserve_root,
    sample_population,
    sample_types,
    virtual_value,
    virtual_value_prime,
)

DISTS = [Uniform(0, 1), Uniform(0.5, 2), Exponential(1), Exponential(2.5), LogNormal(0, 1),
         Beta22()]
MHR = [d for d in DISTS if d.mhr]


@pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
def test_pdf_integrates_to_one(dist):
    total, _ = integrate.quad(dist.pdf, dist.lower, dist.upper, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
def test_cdf_monotone_with_limits(dist):
    grid = np.linspace(dist.lower, dist.truncated_upper(), 500)
    cdf = dist.cdf(grid)
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[0] == pytest.approx(0.0, abs=1e-9)
    assert dist.cdf(dist.truncated_upper()) == pytest.approx(1.0, abs=1e-5)


class TestVirtualValue:
    def test_uniform(self):
        assert virtual_value(Uniform(0, 1), 0.75) == pytest.approx(0.5)

    def test_beta22_near_root(self):
        assert virtual_value(Beta22(), 0.4215) == pytest.approx(0.0, abs=1e-3)

    def test_exponential(self):
        assert virtual_value(Exponential(1), 2.5) == pytest.approx(1.5)

    @pytest.mark.parametrize("dist, t", [(Uniform(0, 1), 1.5), (Beta22(), 0.0),
                                         (Exponential(1), -1.0)])
    def test_undefined_off_support(self, dist, t):
        with pytest.raises(UndefinedVirtualValueError):
            virtual_value(dist, t)

    def test_lognormal_matches_definition(self):
        d = LogNormal(0.2, 0.8)
        law = stats.lognorm(s=0.8, scale=math.exp(0.2))
        for t in (0.3, 1.0, 4.0):
            assert virtual_value(d, t) == pytest.approx(t - law.sf(t) / law.pdf(t), rel=1e-9)


class TestVirtualValuePrime:
    @given(t=st.floats(0.01, 0.99))
    def test_uniform_is_two(self, t):
        assert virtual_value_prime(Uniform(0, 1), t) == pytest.approx(2.0)

    def test_beta22_at_one(self):
        assert virtual_value_prime(Beta22(), 1.0) == pytest.approx(1.5)

    @given(t=st.floats(0.0, 10.0))
    def test_exponential_is_one(self, t):
        assert virtual_value_prime(Exponential(1), t) == pytest.approx(1.0)

    @pytest.mark.parametrize("dist", [Uniform(0, 1), Exponential(1.7), Beta22()],
                             ids=lambda d: d.kind)
    @given(u=st.floats(0.05, 0.95))
    def test_closed_form_matches_finite_difference(self, dist, u):
        t = float(dist.ppf(u))
        assert numeric_phi_prime(dist, t) == pytest.approx(virtual_value_prime(dist, t),
                                                           abs=1e-4)


class TestReserveRoot:
    @pytest.mark.parametrize("dist, root", [(Uniform(0, 1), 0.5), (Exponential(1), 1.0),
                                            (Uniform(0.5, 2), 1.0), (Exponential(4), 0.25)])
    def test_known_roots(self, dist, root):
        assert reserve_root(dist) == pytest.approx(root, abs=1e-10)

    def test_beta22(self):
        assert reserve_root(Beta22()) == pytest.approx(0.4215, abs=1e-3)
        assert reserve_root(Beta22()) == pytest.approx((1 + math.sqrt(33)) / 16, abs=1e-10)

    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    def test_brackets_sign_change(self, dist):
        root = reserve_root(dist)
        assert abs(virtual_value(dist, root)) <= 1e-10
        assert virtual_value(dist, root - 1e-4) < 0 < virtual_value(dist, root + 1e-4)

    def test_no_sign_change(self):
        class AlwaysPositive(ValueDistribution):
            kind = "shifted"
            lower, upper = 0.0, 1.0

            def truncated_upper(self):
                return 1.0

            def phi(self, t):
                return np.asarray(t) + 1.0

        with pytest.raises(NoRootError):
            reserve_root(AlwaysPositive())


class TestThreshold:
    @given(r=st.floats(0.01, 0.5))
    def test_uniform_constant(self, r):
        assert maincond_threshold(Uniform(0, 1), r) == pytest.approx(0.5, abs=1e-6)
        assert condition_holds(Uniform(0, 1), r)

    @given(r=st.floats(0.01, 1.0))
    def test_exponential_constant(self, r):
        assert maincond_threshold(Exponential(1), r) == pytest.approx(1.0, abs=1e-6)

    def test_beta22_fails_above_one_third(self):
        assert maincond_threshold(Beta22(), 0.35) == pytest.approx(1 / 3, abs=1e-3)
        assert not condition_holds(Beta22(), 0.35)
        assert not condition_holds(Beta22(), 0.40)
        assert condition_holds(Beta22(), 0.30)

    def test_beta22_small_reserve_is_attained_at_r(self):
        # t - phi/phi' = (t^2 + 2t) / (8t^2 + 1) for this density
        r = 0.1
        assert maincond_threshold(Beta22(), r) == pytest.approx((r * r + 2 * r) / (8 * r * r + 1),
                                                                abs=1e-6)

    def test_lognormal_inapplicable(self):
        with pytest.raises(ConditionInapplicableError):
            maincond_threshold(LogNormal(0, 1), 0.5)

    @pytest.mark.parametrize("r", [0.0, 0.6])
    def test_reserve_outside_range(self, r):
        with pytest.raises(PreconditionError):
            maincond_threshold(Uniform(0, 1), r)


class TestShapeProperties:
    @pytest.mark.parametrize("dist", MHR, ids=lambda d: d.kind)
    def test_hazard_monotone(self, dist):
        assert hazard_is_monotone(dist)

    def test_lognormal_hazard_not_monotone(self):
        assert not hazard_is_monotone(LogNormal(0, 1))

    @pytest.mark.parametrize("dist", [Uniform(0, 1), Exponential(1)], ids=lambda d: d.kind)
    def test_phi_weakly_convex(self, dist):
        grid = np.linspace(dist.lower + 1e-3, dist.truncated_upper() * 0.99, 400)
        second = np.diff(dist.phi(grid), 2)
        assert np.all(second >= -1e-9)

    @pytest.mark.parametrize("dist", MHR, ids=lambda d: d.kind)
    def test_virtual_value_integral_identity(self, dist):
        # E[phi(theta) 1{theta >= a}] = a (1 - F(a))
        rng = np.random.default_rng(7)
        theta = dist.sample(rng, 200_000)
        for u in (0.2, 0.5, 0.8):
            a = float(dist.ppf(u))
            x = np.where(theta >= a, dist.phi(theta), 0.0)
            se = x.std(ddof=1) / math.sqrt(len(x))
            assert abs(x.mean() - a * (1 - dist.cdf(a))) <= 3 * se


class TestSampling:
    POP = PopulationModel(Uniform(0, 1), Uniform(0.05, 1), 0.0)

    def test_same_seed_same_sample(self):
        assert sample_population(self.POP, 20, 3) == sample_population(self.POP, 20, 3)
        assert sample_population(self.POP, 20, 3) != sample_population(self.POP, 20, 4)

    def test_independent_when_uncorrelated(self):
        theta, w = sample_types(self.POP, 100_000, np.random.default_rng(1))
        assert abs(np.corrcoef(theta, w)[0, 1]) < 0.01

    def test_copula_rank_correlation(self):
        pop = PopulationModel(LogNormal(0, 1), LogNormal(0, 1), 0.5)
        theta, w = sample_types(pop, 100_000, np.random.default_rng(2))
        expected = 6 / math.pi * math.asin(0.25)
        assert stats.spearmanr(theta, w)[0] == pytest.approx(expected, abs=0.03)
        assert expected == pytest.approx(0.48, abs=0.01)

    def test_margins_preserved(self):
        theta, _ = sample_types(PopulationModel(Exponential(2), Uniform(0, 1), 0.7), 50_000,
                                np.random.default_rng(3))
        assert stats.kstest(theta, "expon", args=(0, 0.5)).pvalue > 1e-3

    def test_rejects_bad_inputs(self):
        with pytest.raises(InvalidInputError):
            sample_population(self.POP, 0, 1)
        with pytest.raises(InvalidInputError):
            PopulationModel(Uniform(0, 1), Uniform(0, 1), 1.5)


class TestConfig:
    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    def test_round_trip(self, dist):
        assert from_config(dist.to_config()) == dist

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            from_config({"kind": "pareto"})

    def test_population_round_trip(self):
        pop = PopulationModel(LogNormal(0, 1), Uniform(0, 1), 0.3)
        assert PopulationModel.from_config(pop.to_config()) == pop
