import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentspike import SpikeTrain, covariate_dim, covariate_slots, covariate_vector


def test_first_bin_has_no_history():
    train = SpikeTrain([[1, 1], [0, 1]], tau=0.05)
    y = covariate_vector(train, c=0, k=0, history_lags=3, coupling_lags=2)
    np.testing.assert_array_equal(y, [1, 0, 0, 0, 0, 0])


def test_two_neuron_one_lag_readoff():
    # own neuron spiked at the previous bin, the other did not
    train = SpikeTrain([[1, 0], [0, 0]], tau=0.05)
    y = covariate_vector(train, c=0, k=1, history_lags=1, coupling_lags=1)
    np.testing.assert_array_equal(y, [1, 1, 0])


def test_slot_map_against_independent_enumeration():
    # C=3, Q=2, R=2 -> D = 7; enumerate (kind, source, lag) tuples by hand
    rng = np.random.default_rng(3)
    counts = (rng.random((6, 3)) < 0.6).astype(int)
    train = SpikeTrain(counts, tau=0.05)
    C, Q, R = 3, 2, 2
    assert covariate_dim(C, Q, R) == 7
    for c in range(C):
        # independent layout: constant, own lags 1..Q, then (source, lag)
        # for sources in ascending order skipping c
        expected_slots = [("const",)]
        expected_slots += [("history", q) for q in (1, 2)]
        for s in sorted(set(range(C)) - {c}):
            expected_slots += [("coupling", s, r) for r in (1, 2)]
        assert covariate_slots(C, c, Q, R) == expected_slots
        for k in range(train.num_bins):
            y = covariate_vector(train, c, k, Q, R)
            for j, slot in enumerate(expected_slots):
                if slot[0] == "const":
                    want = 1
                elif slot[0] == "history":
                    q = slot[1]
                    want = counts[k - q, c] if k - q >= 0 else 0
                else:
                    _, s, r = slot
                    want = counts[k - r, s] if k - r >= 0 else 0
                assert y[j] == want, (c, k, slot)


@given(C=st.integers(1, 5), Q=st.integers(0, 6), R=st.integers(0, 4),
       K=st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_dimension_law(C, Q, R, K):
    train = SpikeTrain(np.ones((K, C), dtype=int), tau=0.01)
    y = covariate_vector(train, 0, K - 1, Q, R)
    assert y.shape == (1 + Q + (C - 1) * R,)


def test_index_errors():
    train = SpikeTrain([[0, 0]], tau=0.05)
    with pytest.raises(ValueError, match="neuron"):
        covariate_vector(train, 2, 0, 1, 1)
    with pytest.raises(ValueError, match="bin"):
        covariate_vector(train, 0, 1, 1, 1)


def test_counts_beyond_binary_pass_through():
    train = SpikeTrain([[3, 0], [0, 0]], tau=0.05)
    y = covariate_vector(train, 0, 1, history_lags=1, coupling_lags=0)
    np.testing.assert_array_equal(y, [1, 3])
