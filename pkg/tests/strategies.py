"""Hypothesis strategies shared by the property tests."""

import numpy as np
from hypothesis import strategies as st

from gsp_lab.model import Realisation, SlotCurve

values = st.floats(0.0, 1.0, allow_nan=False, allow_subnormal=False)
relevances = st.floats(0.05, 1.0, allow_nan=False, allow_subnormal=False)


@st.composite
def realisations(draw, min_n=1, max_n=6, max_m=4):
    n = draw(st.integers(min_n, max_n))
    m = draw(st.integers(1, max_m))
    decay = draw(st.floats(0.3, 0.9))
    vals = draw(st.lists(values, min_size=n, max_size=n))
    rels = draw(st.lists(relevances, min_size=n, max_size=n))
    return Realisation.from_arrays(vals, rels, SlotCurve.geometric(m, decay))


def distinct_scores(spec, real) -> bool:
    """No two qualifying ads within 1e-9 of each other (ties are measure zero)."""
    s = np.sort(spec.scores(real.values, real.relevances))
    s = s[s > 0]
    return bool(np.all(np.diff(s) > 1e-9))
