import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentspike import (
    GlmParams,
    LatentInputs,
    NumericRangeError,
    SpikeTrain,
    covariate_vector,
    history_intensity,
    history_log_intensity,
    intensity,
    latent_intensity,
    latent_log_intensity,
    log_likelihood,
    penalized_objective,
)

from conftest import bernoulli_train, random_latents, random_params


class TestHistoryIntensity:
    def test_all_zero_params_give_one(self, tiny_train):
        params = GlmParams.zeros(2, 3, 2)
        for c in range(2):
            for k in range(tiny_train.num_bins):
                assert history_intensity(params, tiny_train, c, k) == 1.0

    def test_baseline_only(self):
        train = SpikeTrain([[0]], tau=0.05)
        params = GlmParams([math.log(2.0)], np.zeros((1, 0)), np.zeros((1, 1, 0)))
        assert history_intensity(params, train, 0, 0) == pytest.approx(2.0, rel=1e-15)

    def test_table_matches_scalar(self, tiny_train):
        params = random_params(2, 2, 1, seed=1)
        table = history_log_intensity(params, tiny_train)
        for c in range(2):
            for k in range(tiny_train.num_bins):
                assert math.exp(table[c, k]) == pytest.approx(
                    history_intensity(params, tiny_train, c, k), rel=1e-14)

    @given(seed=st.integers(0, 200))
    @settings(max_examples=40, deadline=None)
    def test_product_form_matches_sum_exp_form(self, seed):
        # exponentiated-parameter product vs exp-of-sum, on bounded instances
        rng = np.random.default_rng(seed)
        C, Q, R, K = 2, 2, 1, 5
        counts = rng.integers(0, 4, size=(K, C))
        train = SpikeTrain(counts, tau=0.05)
        params = random_params(C, Q, R, seed=seed + 1000, scale=1.5)
        exp_view = params.to_exp()
        for c in range(C):
            for k in range(K):
                y = covariate_vector(train, c, k, Q, R)
                product = float(np.prod(exp_view.values[c] ** y))
                direct = history_intensity(params, train, c, k)
                assert product == pytest.approx(direct, rel=1e-12)

    def test_overflow_raises_with_location(self):
        train = SpikeTrain([[0, 0]], tau=0.05)
        params = GlmParams([800.0, 0.0], np.zeros((2, 0)), np.zeros((2, 2, 0)))
        with pytest.raises(NumericRangeError) as err:
            history_intensity(params, train, 0, 0)
        assert err.value.neuron == 0 and err.value.bin == 0


class TestLatentIntensity:
    def test_zero_activity_gives_one(self):
        lat = LatentInputs(np.ones((2, 1, 3)), np.zeros((1, 6)))
        for c in range(2):
            for k in range(6):
                assert latent_intensity(lat, c, k) == 1.0

    def test_first_bin_is_empty_product(self):
        lat = LatentInputs(np.ones((2, 1, 3)), np.log(np.full((1, 6), 7.0)))
        assert latent_intensity(lat, 0, 0) == 1.0

    def test_closed_form_powers(self):
        # lag-1 activity ln 4 with kernel 0.5, lag-2 ln 16 with kernel 0.25:
        # 4^0.5 * 16^0.25 = 4
        kernels = np.array([[[0.5, 0.25]], [[0.0, 0.0]]])
        activity = np.array([[math.log(16.0), math.log(4.0), 0.0]])
        lat = LatentInputs(kernels, activity)
        assert latent_intensity(lat, 0, 2) == pytest.approx(4.0, rel=1e-12)

    def test_table_matches_scalar(self):
        lat = random_latents(3, 2, 2, 9, seed=4)
        table = latent_log_intensity(lat.kernels, lat.activity)
        for c in range(3):
            for k in range(9):
                assert math.exp(table[c, k]) == pytest.approx(
                    latent_intensity(lat, c, k), rel=1e-14)


class TestFullIntensity:
    def test_neutral_model_gives_one(self, tiny_train):
        params = GlmParams.zeros(2, 1, 1)
        lat = LatentInputs(np.zeros((2, 1, 1)), np.zeros((1, tiny_train.num_bins)))
        assert intensity(params, lat, tiny_train, 0, 3) == 1.0

    def test_factorization_is_definitional(self, tiny_train):
        params = random_params(2, 2, 1, seed=2)
        lat = random_latents(2, 1, 2, tiny_train.num_bins, seed=3)
        for c in range(2):
            for k in range(tiny_train.num_bins):
                expect = latent_intensity(lat, c, k) * history_intensity(params, tiny_train, c, k)
                assert intensity(params, lat, tiny_train, c, k) == expect


class TestLogLikelihood:
    def test_unit_intensity_closed_form(self):
        counts = np.zeros((10, 1), dtype=int)
        counts[[1, 4, 7], 0] = 1
        train = SpikeTrain(counts, tau=0.05)
        params = GlmParams.zeros(1, 0, 0)
        assert log_likelihood(params, None, train) == pytest.approx(-0.5, abs=1e-14)

    def test_empty_train_unit_intensity(self):
        train = SpikeTrain(np.zeros((7, 3), dtype=int), tau=0.1)
        params = GlmParams.zeros(3, 1, 1)
        assert log_likelihood(params, None, train) == pytest.approx(-7 * 3 * 0.1, abs=1e-14)

    def test_against_compensated_scalar_summation(self):
        train = bernoulli_train(40, 2, seed=11)
        params = random_params(2, 2, 1, seed=12)
        lat = random_latents(2, 1, 2, 40, seed=13)
        terms = []
        for c in range(2):
            for k in range(40):
                lam = intensity(params, lat, train, c, k)
                terms.append(train.counts[k, c] * math.log(lam) - train.tau * lam)
        oracle = math.fsum(terms)
        assert log_likelihood(params, lat, train) == pytest.approx(oracle, rel=1e-10)

    def test_zero_activity_reduces_to_glm_only(self):
        train = bernoulli_train(30, 2, seed=21)
        params = random_params(2, 1, 1, seed=22)
        lat = LatentInputs(np.full((2, 1, 2), 0.7), np.zeros((1, 30)))
        assert log_likelihood(params, lat, train) == pytest.approx(
            log_likelihood(params, None, train), rel=1e-14)

    def test_neuron_relabeling_invariance(self):
        train = bernoulli_train(25, 3, seed=31)
        params = random_params(3, 2, 2, seed=32)
        lat = random_latents(3, 2, 2, 25, seed=33)
        base = log_likelihood(params, lat, train)
        perm = [2, 0, 1]
        train_p = SpikeTrain(train.counts[:, perm], train.tau)
        params_p = GlmParams(params.baseline[perm], params.history[perm],
                             params.coupling[np.ix_(perm, perm)])
        lat_p = LatentInputs(lat.kernels[perm], lat.activity,
                             lat.prior_shape, lat.prior_scale)
        assert log_likelihood(params_p, lat_p, train_p) == pytest.approx(base, rel=1e-12)


class TestPenalizedObjective:
    def test_zero_activity_closed_form(self):
        train = bernoulli_train(20, 2, seed=41)
        params = random_params(2, 1, 1, seed=42)
        I, K = 1, 20
        lat = LatentInputs(np.full((2, I, 2), 0.3), np.zeros((I, K)),
                           prior_shape=50.0, prior_scale=1.0)
        omega = np.exp(history_log_intensity(params, train))
        expected = -train.tau * omega.sum() - I * K
        assert penalized_objective(params, lat, train) == pytest.approx(expected, rel=1e-12)

    def test_partial_derivative_matches_finite_differences(self):
        train = bernoulli_train(15, 2, seed=51)
        params = random_params(2, 1, 1, seed=52)
        lat = random_latents(2, 1, 3, 15, seed=53, prior_shape=5.0, prior_scale=2.0)
        omega = np.exp(history_log_intensity(params, train))
        i0, q0 = 0, 6
        # closed-form partial in the activity: shape - e^u/scale
        # + sum_{c,m} kernel*(dN - tau*omega*latent) at the bins q0 feeds
        lam = np.exp(latent_log_intensity(lat.kernels, lat.activity))
        grad = lat.prior_shape - math.exp(lat.activity[i0, q0]) / lat.prior_scale
        for c in range(2):
            for m in range(1, lat.latent_lags + 1):
                k = q0 + m
                if k >= 15:
                    break
                grad += lat.kernels[c, i0, m - 1] * (
                    train.counts[k, c] - train.tau * omega[c, k] * lam[c, k])
        h = 1e-6
        up = lat.activity.copy()
        dn = lat.activity.copy()
        up[i0, q0] += h
        dn[i0, q0] -= h
        fd = (penalized_objective(params, LatentInputs(lat.kernels, up, 5.0, 2.0), train)
              - penalized_objective(params, LatentInputs(lat.kernels, dn, 5.0, 2.0), train)
              ) / (2 * h)
        assert fd == pytest.approx(grad, abs=1e-6)
