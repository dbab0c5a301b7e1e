import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gsp_lab.model import RankingSpec, Realisation, SlotCurve

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", deadline=None, max_examples=600, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion lines collected by test_acceptance, printed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def class_e4_specs():
    """One ranking per in-class family, with non-trivial parameters."""
    return [
        RankingSpec.by_bid(),
        RankingSpec.standard(),
        RankingSpec.squashed(0.5, reserve_score=0.05),
        RankingSpec.proposed(0.2),
        RankingSpec.general_gh(lambda w: w**2, lambda w: 0.1 * w),
        RankingSpec.standard(reserve_score=0.1),
    ]


def random_realisation(rng, n_range=(2, 7), m_range=(1, 5), w_low=0.05) -> Realisation:
    n = int(rng.integers(*n_range))
    m = int(rng.integers(*m_range))
    return Realisation.from_arrays(
        rng.uniform(0, 1, n), rng.uniform(w_low, 1, n), SlotCurve.geometric(m)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
