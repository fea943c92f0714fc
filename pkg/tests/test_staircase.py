import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmdp.staircase import TOL, ThresholdValueFunction, sweep_envelope

points = st.lists(
    st.tuples(st.integers(-20, 20).map(lambda i: i / 4), st.integers(-50, 50).map(float)),
    min_size=0, max_size=15,
)


def test_lookup_between_and_on_breakpoints():
    v = ThresholdValueFunction.from_pairs([(0.05, -30), (1.0, -50)])
    assert v(0.0) == math.inf
    assert v(0.05) == -30 and v(0.5) == -30 and v(0.999) == -30
    assert v(1.0) == -50 and v(10.0) == -50
    assert v.floor == 0.05


def test_lookup_tolerates_tiny_shortfall():
    v = ThresholdValueFunction.from_pairs([(0.2, -10)])
    assert v(0.2 - TOL / 2) == -10
    assert v(0.2 - 10 * TOL) == math.inf


def test_vectorized_lookup_matches_scalar():
    v = ThresholdValueFunction.from_pairs([(0.0, 3.0), (0.5, 1.0), (2.0, -4.0)])
    r = np.array([-1.0, 0.0, 0.25, 0.5, 1.9, 2.0, 9.0])
    assert list(v.evaluate(r)) == [v(x) for x in r]
    assert np.all(ThresholdValueFunction.infeasible().evaluate(r) == math.inf)


@pytest.mark.parametrize("pairs", [[(0, 1), (0, 0)], [(1, 1), (0, 0)], [(0, 0), (1, 0)], [(0, 0), (1, 1)],
                                   [(0, math.nan)]])
def test_rejects_malformed(pairs):
    with pytest.raises(ValueError):
        ThresholdValueFunction.from_pairs(pairs)


def test_zero_and_infeasible():
    assert ThresholdValueFunction.zero()(0.0) == 0.0
    assert ThresholdValueFunction.zero()(-1.0) == math.inf
    empty = ThresholdValueFunction.infeasible()
    assert empty.is_infeasible and empty.floor == math.inf and empty(1e9) == math.inf


@settings(max_examples=300, deadline=None)
@given(points)
def test_envelope_is_pointwise_minimum(pts):
    env = ThresholdValueFunction.envelope(pts)
    for r in np.arange(-6, 6, 0.125):
        want = min((v for b, v in pts if b <= r), default=math.inf)
        assert env(r) == want


@settings(max_examples=200, deadline=None)
@given(points)
def test_envelope_shape(pts):
    env = ThresholdValueFunction.envelope(pts)
    assert all(a < b for a, b in zip(env.breakpoints, env.breakpoints[1:]))
    assert all(a > b for a, b in zip(env.values, env.values[1:]))
    assert set(env.pairs()) <= {(float(b), float(v)) for b, v in pts}


def test_sweep_envelope_tie_prefers_first_candidate():
    kept = sweep_envelope([0.0, 0.0, 1.0], [5.0, 5.0, 5.0])
    assert kept == [(0.0, 5.0, 0)]


def test_sweep_envelope_merges_near_equal_thresholds():
    kept = sweep_envelope([0.0, TOL / 2, 1.0], [5.0, 4.0, 3.0])
    assert [(v, i) for _, v, i in kept] == [(4.0, 1), (3.0, 2)]


def test_allclose():
    a = ThresholdValueFunction.from_pairs([(0.1, 1.0)])
    assert a.allclose(ThresholdValueFunction.from_pairs([(0.1 + 1e-12, 1.0)]))
    assert not a.allclose(ThresholdValueFunction.from_pairs([(0.1, 1.0), (0.2, 0.0)]))
