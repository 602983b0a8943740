import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsagent.signal import autocorrelation, local_extrema, moments, ols_line, ordinal_patterns, permutation_entropy


def pe_oracle(x, m=3, tau=1):
    """Histogram of ordinal patterns, counted one vector at a time."""
    counts = Counter()
    for i in range(len(x) - (m - 1) * tau):
        vec = [x[i + k * tau] for k in range(m)]
        counts[tuple(sorted(range(m), key=lambda k: (vec[k], k)))] += 1
    total = sum(counts.values())
    h = -math.fsum(c / total * math.log(c / total) for c in counts.values())
    return h / math.log(math.factorial(m))


def extrema_oracle(x, e):
    mx, mn = [], []
    for i in range(e, len(x) - e):
        others = [x[j] for j in range(i - e, i + e + 1) if j != i]
        if all(x[i] > o for o in others):
            mx.append(i)
        if all(x[i] < o for o in others):
            mn.append(i)
    return mx, mn


def test_pe_monotone_and_constant_are_zero():
    assert permutation_entropy(np.arange(100.0)) == 0.0
    assert permutation_entropy(-np.arange(100.0)) == 0.0
    assert permutation_entropy(np.full(50, 3.3)) == 0.0


def test_pe_uniform_noise_high_and_matches_histogram():
    x = np.random.default_rng(42).uniform(size=10_000)
    h = permutation_entropy(x)
    assert 0.95 <= h <= 1.0
    assert abs(h - pe_oracle(x.tolist())) <= 1e-12


@pytest.mark.parametrize("m,tau", [(2, 1), (3, 2), (4, 1), (5, 3)])
def test_pe_other_orders_match_histogram(m, tau):
    x = np.random.default_rng(m * 10 + tau).integers(0, 4, 300).astype(float)  # ties on purpose
    assert abs(permutation_entropy(x, m, tau) - pe_oracle(x.tolist(), m, tau)) <= 1e-12


def test_pe_monotone_transform_invariance():
    rng = np.random.default_rng(3)
    maps = [np.exp, lambda v: v ** 3 + 2 * v, lambda v: 7.5 * v - 2, np.sinh]
    for trial in range(100):
        x = rng.normal(size=int(rng.integers(10, 200)))
        f = maps[trial % len(maps)]
        assert np.array_equal(ordinal_patterns(x), ordinal_patterns(f(x)))
        assert permutation_entropy(x) == permutation_entropy(f(x))


@settings(max_examples=100)
@given(arrays(np.float64, st.integers(3, 60), elements=st.floats(-1e3, 1e3, allow_nan=False)),
       st.integers(2, 4), st.integers(1, 3))
def test_pe_bounded(x, m, tau):
    if len(x) < (m - 1) * tau + 1:
        with pytest.raises(ValueError):
            permutation_entropy(x, m, tau)
        return
    assert 0.0 <= permutation_entropy(x, m, tau) <= 1.0


def test_pe_rejects_bad_arguments():
    with pytest.raises(ValueError):
        permutation_entropy([1.0, 2.0], 3, 1)
    with pytest.raises(ValueError):
        permutation_entropy(np.arange(10.0), 1, 1)


def test_pe_skips_missing():
    x = np.arange(20.0)
    x[5] = np.nan
    assert permutation_entropy(x) == 0.0


def test_ordinal_tie_break_prefers_earlier_index():
    # pattern of (2, 2, 1): ranks by (value, index) -> [2, 0, 1]
    code = ordinal_patterns(np.array([2.0, 2.0, 1.0]))[0]
    assert code == 2 * 9 + 0 * 3 + 1


@settings(max_examples=100)
@given(arrays(np.float64, st.integers(0, 40), elements=st.integers(-3, 3).map(float)), st.integers(1, 3))
def test_local_extrema_exhaustive(x, e):
    assert local_extrema(x, e) == extrema_oracle(list(x), e)


def test_triangle_wave_extrema():
    x = np.array([abs((t % 8) - 4) for t in range(48)], dtype=float)
    mx, mn = local_extrema(x, 2)
    assert mx == [t for t in range(2, 46) if t % 8 == 0]
    assert mn == [t for t in range(2, 46) if t % 8 == 4]


def test_ols_line_and_moments():
    assert ols_line([1.0, 3.0, 5.0]) == (2.0, 1.0)
    m = moments([1.0, 2.0, 3.0, 4.0, 5.0])
    assert m["mean"] == 3.0 and m["skewness"] == 0.0
    assert m["kurtosis"] == pytest.approx(-1.3, abs=1e-12)
    assert moments([2.0, 2.0])["skewness"] is None


def test_autocorrelation_hand_oracle():
    x = [1, 2, 1, 2, 1, 2]
    d = [v - 1.5 for v in x]
    c0 = sum(v * v for v in d)
    expected = [sum(d[i] * d[i + k] for i in range(6 - k)) / c0 for k in (1, 2)]
    got = autocorrelation(x, 2)
    assert expected == pytest.approx([-5 / 6, 4 / 6])
    assert all(abs(g - e) < 1e-9 for g, e in zip(got, expected))
    assert autocorrelation([4, 4, 4], 2) == [None, None]
