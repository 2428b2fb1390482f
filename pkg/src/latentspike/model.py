"""Domain types, conditional intensities, and likelihood evaluators.

The model: neuron ``c`` spikes in bin ``k`` (width ``tau`` seconds) with
conditional intensity

    lambda_c(k) = exp{ baseline_c
                       + sum_q history_c[q] * dN_c[k-q]
                       + sum_{s != c} sum_r coupling_c[s, r] * dN_s[k-r]
                       + sum_i sum_m kernels_c[i, m] * activity_i[k-m] },

where dN are the binned spike counts and ``activity`` is the log-activity of
latent (unobserved) background sources injected through fixed non-negative
kernels. All lag sums truncate at the start of the record: missing history
contributes zero.

Indices are 0-based throughout (neuron ``c``, bin ``k``, lag arrays store lag
``q`` at position ``q-1``).

Everything here is a pure function of immutable values; instances are safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericRangeError

# exp() overflows just above this; intensities past it are treated as divergent
_LOG_MAX = 709.0


def covariate_dim(n_neurons: int, history_lags: int, coupling_lags: int) -> int:
    """Length D of the per-neuron covariate vector: 1 + Q + (C-1)*R."""
    return 1 + history_lags + (n_neurons - 1) * coupling_lags


def coupling_sources(n_neurons: int, c: int) -> list[int]:
    """Source neurons feeding target ``c``, in canonical (ascending) order."""
    return [s for s in range(n_neurons) if s != c]


def covariate_slots(n_neurons, c, history_lags, coupling_lags):
    """Canonical slot layout of the covariate vector for neuron ``c``.

    Returns a list of tuples, one per slot:
    ``("const",)``, ``("history", lag)``, ``("coupling", source, lag)``
    with lag counted in bins (1-based lag, matching kernel position lag-1).
    """
    slots = [("const",)]
    slots += [("history", q) for q in range(1, history_lags + 1)]
    for s in coupling_sources(n_neurons, c):
        slots += [("coupling", s, r) for r in range(1, coupling_lags + 1)]
    return slots


def _as_float(name, a, shape=None):
    out = np.asarray(a, dtype=np.float64)
    if shape is not None and out.shape != shape:
        raise ValueError(f"{name} has shape {out.shape}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Binned incremental spike counts.

    counts[k, c] is the number of spikes of neuron c in bin k. Raw binning at
    native resolution yields counts in {0, 1}; rebinned trains may exceed 1.
    ``start_time`` is bookkeeping only and does not enter any computation.
    """

    counts: np.ndarray
    tau: float
    start_time: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 1:
            raise ValueError(f"counts must be a K x C table, got shape {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.asarray(counts, dtype=np.int64)
            if counts.dtype.kind == "f" and not np.array_equal(rounded, counts):
                raise ValueError("counts must be integers")
            counts = rounded
        else:
            counts = counts.astype(np.int64, copy=False)
        if np.any(counts < 0):
            k, c = np.argwhere(counts < 0)[0]
            raise ValueError(f"negative count at bin {k}, neuron {c}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "start_time", float(self.start_time))

    @property
    def num_bins(self) -> int:
        return self.counts.shape[0]

    @property
    def num_neurons(self) -> int:
        return self.counts.shape[1]

    @property
    def total_spikes(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, SpikeTrain):
            return NotImplemented
        return (np.array_equal(self.counts, other.counts)
                and self.tau == other.tau
                and self.start_time == other.start_time)


@dataclass(frozen=True, eq=False)
class GlmParams:
    """GLM parameters of the observed part of the intensity.

    baseline: (C,) spontaneous log-rates.
    history:  (C, Q) own-history kernels, lag q at column q-1.
    coupling: (C, C, R) cross-neuron kernels, coupling[target, source, r-1];
              the diagonal (source == target) is unused and must be zero.
    """

    baseline: np.ndarray
    history: np.ndarray
    coupling: np.ndarray

    def __post_init__(self):
        baseline = _as_float("baseline", self.baseline)
        if baseline.ndim != 1:
            raise ValueError("baseline must be a length-C vector")
        C = baseline.shape[0]
        history = _as_float("history", self.history)
        if history.ndim != 2 or history.shape[0] != C:
            raise ValueError(f"history must be C x Q with C={C}, got {history.shape}")
        coupling = _as_float("coupling", self.coupling)
        if coupling.ndim != 3 or coupling.shape[0] != C or coupling.shape[1] != C:
            raise ValueError(f"coupling must be C x C x R with C={C}, got {coupling.shape}")
        if coupling.shape[2] > 0:
            diag = coupling[np.arange(C), np.arange(C), :]
            if np.any(diag != 0.0):
                raise ValueError("coupling[c, c, :] entries are unused and must be 0")
        object.__setattr__(self, "baseline", baseline)
        object.__setattr__(self, "history", history)
        object.__setattr__(self, "coupling", coupling)

    @property
    def num_neurons(self) -> int:
        return self.baseline.shape[0]

    @property
    def history_lags(self) -> int:
        return self.history.shape[1]

    @property
    def coupling_lags(self) -> int:
        return self.coupling.shape[2]

    @classmethod
    def zeros(cls, n_neurons, history_lags, coupling_lags):
        return cls(np.zeros(n_neurons),
                   np.zeros((n_neurons, history_lags)),
                   np.zeros((n_neurons, n_neurons, coupling_lags)))

    def to_exp(self) -> "ExpParams":
        """Exponentiated per-neuron parameter vectors in canonical slot order."""
        C, Q, R = self.num_neurons, self.history_lags, self.coupling_lags
        values = np.empty((C, covariate_dim(C, Q, R)))
        for c in range(C):
            values[c, 0] = self.baseline[c]
            values[c, 1:1 + Q] = self.history[c]
            pos = 1 + Q
            for s in coupling_sources(C, c):
                values[c, pos:pos + R] = self.coupling[c, s]
                pos += R
        if np.any(values > _LOG_MAX):
            c, j = np.argwhere(values > _LOG_MAX)[0]
            raise NumericRangeError("parameter too large to exponentiate",
                                    neuron=int(c), slot=int(j))
        return ExpParams(np.exp(values), Q, R, log_values=values)


@dataclass(frozen=True, eq=False)
class ExpParams:
    """Entrywise exponential of GlmParams, one length-D vector per neuron.

    Slot order matches covariate_vector: constant, history lags ascending,
    then coupling kernels grouped by source neuron ascending, lags ascending.
    The defining log-parameters travel along (``log_values``) so that
    GlmParams -> ExpParams -> GlmParams is the exact identity, not merely
    identity up to exp/log round-off.
    """

    values: np.ndarray
    history_lags: int
    coupling_lags: int
    log_values: np.ndarray | None = None

    def __post_init__(self):
        values = _as_float("values", self.values)
        if values.ndim != 2:
            raise ValueError("values must be C x D")
        C = values.shape[0]
        D = covariate_dim(C, self.history_lags, self.coupling_lags)
        if values.shape[1] != D:
            raise ValueError(f"values has {values.shape[1]} slots, expected D={D}")
        if np.any(values <= 0):
            raise ValueError("exponentiated parameters must be strictly positive")
        object.__setattr__(self, "values", values)
        if self.log_values is not None:
            logs = _as_float("log_values", self.log_values, values.shape)
            object.__setattr__(self, "log_values", logs)

    @property
    def num_neurons(self) -> int:
        return self.values.shape[0]

    def to_glm_params(self) -> GlmParams:
        C, Q, R = self.num_neurons, self.history_lags, self.coupling_lags
        logs = np.log(self.values) if self.log_values is None else self.log_values
        baseline = logs[:, 0].copy()
        history = logs[:, 1:1 + Q].copy()
        coupling = np.zeros((C, C, R))
        for c in range(C):
            pos = 1 + Q
            for s in coupling_sources(C, c):
                coupling[c, s] = logs[c, pos:pos + R]
                pos += R
        return GlmParams(baseline, history, coupling)


@dataclass(frozen=True, eq=False)
class LatentInputs:
    """Latent background sources: fixed coupling kernels and log-activities.

    kernels:  (C, I, M) non-negative influence of source i on neuron c at lag m
              (position m-1). Non-negativity keeps the fixed-point denominators
              positive.
    activity: (I, K) log-activity of each source per bin; exp(activity) is the
              multiplicative gain each lagged bin contributes.
    prior_shape / prior_scale: log-Gamma prior on each activity entry
              (density proportional to exp(shape*u - exp(u)/scale)).
    """

    kernels: np.ndarray
    activity: np.ndarray
    prior_shape: float = 50.0
    prior_scale: float = 1.0

    def __post_init__(self):
        kernels = _as_float("kernels", self.kernels)
        if kernels.ndim != 3:
            raise ValueError("kernels must be C x I x M")
        if np.any(kernels < 0):
            raise ValueError("latent kernels must be non-negative")
        activity = _as_float("activity", self.activity)
        if activity.ndim != 2 or activity.shape[0] != kernels.shape[1]:
            raise ValueError(
                f"activity must be I x K with I={kernels.shape[1]}, got {activity.shape}")
        if kernels.shape[1] >= kernels.shape[0]:
            raise ValueError(
                f"number of latent sources ({kernels.shape[1]}) must be smaller "
                f"than the number of neurons ({kernels.shape[0]})")
        if not (self.prior_shape > 0 and self.prior_scale > 0):
            raise ValueError("prior shape and scale must be positive")
        if np.any(activity > _LOG_MAX):
            raise ValueError("activity entries too large: gain would overflow")
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "activity", activity)
        object.__setattr__(self, "prior_shape", float(self.prior_shape))
        object.__setattr__(self, "prior_scale", float(self.prior_scale))

    @property
    def num_sources(self) -> int:
        return self.kernels.shape[1]

    @property
    def latent_lags(self) -> int:
        return self.kernels.shape[2]

    @property
    def gain(self) -> np.ndarray:
        """exp(activity), strictly positive."""
        return np.exp(self.activity)


@dataclass(frozen=True)
class FitConfig:
    """Estimation settings.

    history_lags / coupling_lags / latent_lags are the Q / R / M memory
    lengths; n_latents is the latent-source count I. ``relaxation`` is the
    fixed-point exponent scale, open interval (0, 2). ``threads`` = 0 picks the
    CPU count.
    """

    history_lags: int = 0
    coupling_lags: int = 0
    latent_lags: int = 1
    n_latents: int = 1
    relaxation: float = 1.0
    em_max_iters: int = 100
    inner_max_iters: int = 200
    em_tol: float = 1e-6
    inner_tol: float = 1e-8
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.history_lags < 0 or self.coupling_lags < 0:
            raise ValueError("history_lags and coupling_lags must be >= 0")
        if self.latent_lags < 1:
            raise ValueError("latent_lags must be >= 1")
        if self.n_latents < 1:
            raise ValueError("n_latents must be >= 1")
        if not (0.0 < self.relaxation < 2.0):
            raise ValueError("relaxation must lie in the open interval (0, 2)")
        if self.em_max_iters < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.em_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.threads < 0:
            raise ValueError("threads must be >= 0 (0 = auto)")


@dataclass(eq=False)
class FitReport:
    """Trace and diagnostics of one fit.

    ll_trace[j] is the data log-likelihood after EM iteration j (entry 0 is the
    initialization point), penalized_trace the penalized latent objective at
    the same points. latent_free / glm_free mark which latent entries (I x K)
    and GLM slots (C x D) were identifiable; pinned entries are held at their
    neutral value (activity 0 / parameter 0) for the whole fit.
    """

    ll_trace: np.ndarray
    penalized_trace: np.ndarray
    converged: bool
    em_iters: int
    latent_free: np.ndarray | None
    glm_free: np.ndarray
    wall_time: float
    seed: int | None = None
    e_sweeps: list = field(default_factory=list)
    m_sweeps: list = field(default_factory=list)
    latent_residual: float = float("nan")
    glm_residual: float = float("nan")

    def __post_init__(self):
        self.ll_trace = np.asarray(self.ll_trace, dtype=np.float64)
        self.penalized_trace = np.asarray(self.penalized_trace, dtype=np.float64)
        if self.ll_trace.shape[0] != self.em_iters + 1:
            raise ValueError("ll_trace must have em_iters + 1 entries")

    @property
    def final_ll(self) -> float:
        return float(self.ll_trace[-1])


def _check_index(name, value, limit):
    if not (0 <= value < limit):
        raise ValueError(f"{name}={value} out of range [0, {limit})")


def covariate_vector(train: SpikeTrain, c: int, k: int,
                     history_lags: int, coupling_lags: int) -> np.ndarray:
    """Covariate vector Y for neuron ``c`` at bin ``k`` in canonical slot order.

    Slot 0 is the constant 1; history slots hold the neuron's own lagged
    counts, coupling slots the other neurons' lagged counts (zero where the
    lag reaches before bin 0).
    """
    counts = train.counts
    K, C = counts.shape
    _check_index("neuron", c, C)
    _check_index("bin", k, K)
    y = np.zeros(covariate_dim(C, history_lags, coupling_lags))
    y[0] = 1.0
    for q in range(1, min(k, history_lags) + 1):
        y[q] = counts[k - q, c]
    pos = 1 + history_lags
    for s in coupling_sources(C, c):
        for r in range(1, min(k, coupling_lags) + 1):
            y[pos + r - 1] = counts[k - r, s]
        pos += coupling_lags
    return y


def history_log_intensity(params: GlmParams, train: SpikeTrain) -> np.ndarray:
    """(C, K) table of log of the observed-history intensity factor."""
    counts = train.counts
    K, C = counts.shape
    if params.num_neurons != C:
        raise ValueError(f"params are for {params.num_neurons} neurons, train has {C}")
    out = np.empty((C, K))
    cnt = counts.astype(np.float64)
    for c in range(C):
        acc = np.full(K, params.baseline[c])
        for q in range(1, params.history_lags + 1):
            acc[q:] += params.history[c, q - 1] * cnt[:K - q, c]
        for s in coupling_sources(C, c):
            for r in range(1, params.coupling_lags + 1):
                acc[r:] += params.coupling[c, s, r - 1] * cnt[:K - r, s]
        out[c] = acc
    return out


def history_intensity(params: GlmParams, train: SpikeTrain, c: int, k: int) -> float:
    """Observed-history intensity factor for one (neuron, bin).

    Equals the product over slots of (exponentiated parameter)^(covariate)
    up to floating-point round-off.
    """
    counts = train.counts
    K, C = counts.shape
    _check_index("neuron", c, C)
    _check_index("bin", k, K)
    acc = float(params.baseline[c])
    for q in range(1, min(k, params.history_lags) + 1):
        acc += params.history[c, q - 1] * counts[k - q, c]
    for s in coupling_sources(C, c):
        for r in range(1, min(k, params.coupling_lags) + 1):
            acc += params.coupling[c, s, r - 1] * counts[k - r, s]
    if not np.isfinite(acc) or acc > _LOG_MAX:
        raise NumericRangeError("history intensity overflow", neuron=c, bin=k)
    return float(np.exp(acc))


def latent_log_intensity(kernels: np.ndarray, activity: np.ndarray) -> np.ndarray:
    """(C, K) table of log of the latent intensity factor.

    ``kernels`` is (C, I, M) and ``activity`` (I, K); plain arrays so callers
    can evaluate candidate activities without building a LatentInputs.
    """
    C, I, M = kernels.shape
    K = activity.shape[1]
    out = np.zeros((C, K))
    for c in range(C):
        acc = out[c]
        for i in range(I):
            for m in range(1, M + 1):
                if m >= K + 1:
                    break
                acc[m:] += kernels[c, i, m - 1] * activity[i, :K - m]
    return out


def latent_intensity(latents: LatentInputs, c: int, k: int) -> float:
    """Latent intensity factor for one (neuron, bin): prod_i prod_m gain^kernel."""
    C, I, M = latents.kernels.shape
    K = latents.activity.shape[1]
    _check_index("neuron", c, C)
    _check_index("bin", k, K)
    acc = 0.0
    for i in range(I):
        for m in range(1, min(k, M) + 1):
            acc += latents.kernels[c, i, m - 1] * latents.activity[i, k - m]
    if not np.isfinite(acc) or acc > _LOG_MAX:
        raise NumericRangeError("latent intensity overflow", neuron=c, bin=k)
    return float(np.exp(acc))


def intensity(params: GlmParams, latents: LatentInputs | None,
              train: SpikeTrain, c: int, k: int) -> float:
    """Full conditional intensity: latent factor times history factor."""
    base = history_intensity(params, train, c, k)
    if latents is None:
        return base
    return latent_intensity(latents, c, k) * base


def _log_intensity_table(params, latents, train):
    log_lam = history_log_intensity(params, train)
    if latents is not None:
        if latents.activity.shape[1] != train.num_bins:
            raise ValueError("latent activity length does not match the train")
        log_lam = log_lam + latent_log_intensity(latents.kernels, latents.activity)
    return log_lam


def log_likelihood(params: GlmParams, latents: LatentInputs | None,
                   train: SpikeTrain) -> float:
    """Point-process log-likelihood sum_{c,k} [dN log(lambda) - tau lambda].

    Count-factorial constants are omitted. ``latents=None`` evaluates the
    GLM-only model (latent factor identically 1).
    """
    log_lam = _log_intensity_table(params, latents, train)
    peak = float(log_lam.max())
    if not np.isfinite(peak) or peak > _LOG_MAX:
        c, k = np.unravel_index(np.argmax(log_lam), log_lam.shape)
        raise NumericRangeError("intensity overflow", neuron=int(c), bin=int(k))
    lam = np.exp(log_lam)
    value = float(np.sum(train.counts.T * log_lam) - train.tau * np.sum(lam))
    if not np.isfinite(value):
        raise NumericRangeError("log-likelihood is not finite")
    return value


def penalized_objective(params: GlmParams, latents: LatentInputs,
                        train: SpikeTrain) -> float:
    """Latent-step objective: data term in the latent factor plus the log-Gamma prior.

    sum_{c,k} [dN log(latent factor) - tau * history factor * latent factor]
    + sum_{i,k} [shape * activity - exp(activity) / scale].
    """
    if latents.activity.shape[1] != train.num_bins:
        raise ValueError("latent activity length does not match the train")
    log_hist = history_log_intensity(params, train)
    log_lat = latent_log_intensity(latents.kernels, latents.activity)
    total = log_hist + log_lat
    peak = float(total.max())
    if not np.isfinite(peak) or peak > _LOG_MAX:
        c, k = np.unravel_index(np.argmax(total), total.shape)
        raise NumericRangeError("intensity overflow", neuron=int(c), bin=int(k))
    data = float(np.sum(train.counts.T * log_lat) - train.tau * np.sum(np.exp(total)))
    prior = float(latents.prior_shape * np.sum(latents.activity)
                  - np.sum(np.exp(latents.activity)) / latents.prior_scale)
    value = data + prior
    if not np.isfinite(value):
        raise NumericRangeError("penalized objective is not finite")
    return value
