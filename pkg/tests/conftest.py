import numpy as np
import pytest

from latentspike import FitConfig, GlmParams, LatentInputs, SpikeTrain


def bernoulli_train(K, C, rate=0.4, tau=0.05, seed=0):
    rng = np.random.default_rng(seed)
    return SpikeTrain((rng.random((K, C)) < rate).astype(int), tau)


def random_params(C, Q, R, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    coupling = scale * rng.standard_normal((C, C, R))
    if R:
        coupling[np.arange(C), np.arange(C), :] = 0.0
    return GlmParams(scale * rng.standard_normal(C),
                     scale * rng.standard_normal((C, Q)),
                     coupling)


def random_latents(C, I, M, K, seed=0, kscale=0.5, ascale=0.4,
                   prior_shape=50.0, prior_scale=1.0):
    rng = np.random.default_rng(seed)
    kernels = kscale * rng.random((C, I, M))
    activity = ascale * rng.standard_normal((I, K))
    return LatentInputs(kernels, activity, prior_shape, prior_scale)


@pytest.fixture
def tiny_train():
    return bernoulli_train(12, 2, seed=5)


def config_for(latents_or_kernels, Q=0, R=0, **kw):
    arr = getattr(latents_or_kernels, "kernels", latents_or_kernels)
    C, I, M = np.asarray(arr).shape
    return FitConfig(history_lags=Q, coupling_lags=R, latent_lags=M,
                     n_latents=I, **kw)
