import numpy as np
import pytest

from latentspike import (
    ExpParams,
    FitConfig,
    FitReport,
    GlmParams,
    LatentInputs,
    SpikeTrain,
)

from conftest import random_params


class TestSpikeTrain:
    def test_basic_properties(self):
        t = SpikeTrain([[0, 1], [2, 0], [1, 1]], tau=0.1)
        assert (t.num_bins, t.num_neurons, t.total_spikes) == (3, 2, 5)
        assert t.counts.dtype == np.int64

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError, match="negative"):
            SpikeTrain([[0, -1]], tau=0.1)

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError, match="tau"):
            SpikeTrain([[1]], tau=0.0)

    def test_rejects_fractional_counts(self):
        with pytest.raises(ValueError, match="integer"):
            SpikeTrain(np.array([[0.5]]), tau=0.1)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match="K x C"):
            SpikeTrain(np.zeros(4, dtype=int), tau=0.1)

    def test_equality(self):
        a = SpikeTrain([[1, 0]], tau=0.1)
        b = SpikeTrain([[1, 0]], tau=0.1)
        c = SpikeTrain([[1, 0]], tau=0.2)
        assert a == b and a != c


class TestGlmParams:
    def test_nonzero_coupling_diagonal_rejected(self):
        coupling = np.zeros((2, 2, 1))
        coupling[0, 0, 0] = 0.5
        with pytest.raises(ValueError, match="unused"):
            GlmParams(np.zeros(2), np.zeros((2, 1)), coupling)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            GlmParams(np.array([np.inf]), np.zeros((1, 1)), np.zeros((1, 1, 0)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="history"):
            GlmParams(np.zeros(2), np.zeros((3, 1)), np.zeros((2, 2, 1)))

    @pytest.mark.parametrize("C,Q,R", [(1, 0, 0), (2, 1, 1), (3, 4, 2), (4, 0, 3)])
    def test_exp_round_trip_is_identity(self, C, Q, R):
        params = random_params(C, Q, R, seed=C * 10 + Q)
        back = params.to_exp().to_glm_params()
        np.testing.assert_array_equal(back.baseline, params.baseline)
        np.testing.assert_array_equal(back.history, params.history)
        np.testing.assert_array_equal(back.coupling, params.coupling)

    def test_exp_values_positive(self):
        values = random_params(3, 2, 1, seed=9).to_exp().values
        assert np.all(values > 0)

    def test_exp_params_validates_dim(self):
        with pytest.raises(ValueError, match="slots"):
            ExpParams(np.ones((2, 3)), history_lags=2, coupling_lags=2)


class TestLatentInputs:
    def test_requires_fewer_sources_than_neurons(self):
        with pytest.raises(ValueError, match="smaller"):
            LatentInputs(np.ones((2, 2, 1)), np.zeros((2, 4)))

    def test_rejects_negative_kernels(self):
        with pytest.raises(ValueError, match="non-negative"):
            LatentInputs(-np.ones((2, 1, 1)), np.zeros((1, 4)))

    def test_rejects_bad_prior(self):
        with pytest.raises(ValueError, match="prior"):
            LatentInputs(np.ones((2, 1, 1)), np.zeros((1, 4)), prior_shape=0.0)

    def test_gain_positive_and_finite(self):
        lat = LatentInputs(np.ones((2, 1, 1)), np.array([[-3.0, 0.0, 2.0]]))
        assert np.all(lat.gain > 0) and np.all(np.isfinite(lat.gain))


class TestFitConfig:
    def test_relaxation_open_interval(self):
        for bad in (0.0, 2.0, -1.0):
            with pytest.raises(ValueError, match="relaxation"):
                FitConfig(relaxation=bad)
        FitConfig(relaxation=1.999)  # boundary-adjacent values are fine

    def test_lag_bounds(self):
        with pytest.raises(ValueError):
            FitConfig(history_lags=-1)
        with pytest.raises(ValueError):
            FitConfig(latent_lags=0)
        FitConfig(history_lags=0, coupling_lags=0)  # Poisson-only design allowed

    def test_tolerances_positive(self):
        with pytest.raises(ValueError, match="tolerances"):
            FitConfig(em_tol=0.0)


class TestFitReport:
    def test_trace_length_invariant(self):
        with pytest.raises(ValueError, match="em_iters"):
            FitReport(ll_trace=[1.0, 2.0], penalized_trace=[0.0, 0.0],
                      converged=True, em_iters=3, latent_free=None,
                      glm_free=np.ones((1, 1), dtype=bool), wall_time=0.0)

    def test_final_ll(self):
        rep = FitReport(ll_trace=[1.0, 4.0], penalized_trace=[0.0, 0.0],
                        converged=True, em_iters=1, latent_free=None,
                        glm_free=np.ones((1, 1), dtype=bool), wall_time=0.0)
        assert rep.final_ll == 4.0
