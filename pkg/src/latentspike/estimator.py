"""Alternating fixed-point estimation of GLM parameters and latent activities.

Two closed-form multiplicative fixed points are alternated inside an EM-style
loop:

* latent step -- given the observed-history intensity factor, update every
  latent log-activity entry with a synchronous (Jacobi) multiplicative sweep;
  all entries read the previous iterate and can be updated in parallel.
* GLM step -- given the latent intensity factor, update the exponentiated GLM
  parameters of every neuron with the analogous multiplicative sweep.

Both sweeps move each coordinate along the sign of its gradient, raised to a
precomputed data-counting exponent. The raw exponent can badly overestimate
the safe step on sparse or prior-dominated data, so the solver loops scale
every sweep by a single backtracking factor chosen on the exact objective
(the penalized latent objective, resp. the per-neuron log-likelihood). The
scaling never moves the fixed point: converged solutions satisfy the same
stationarity conditions, independent of the relaxation setting.

Degenerate data is pinned, not raised: a latent entry whose counting
denominator is zero has no data support and is held at activity 0; a GLM slot
whose covariate never co-occurs with a spike is held at parameter 0.

Parallel determinism: sweeps write disjoint slices computed from a frozen
previous iterate on a fixed chunk grid, and every reduction runs on the main
thread over full arrays, so traces are bit-identical for any worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericRangeError
from .model import (
    FitConfig,
    FitReport,
    GlmParams,
    ExpParams,
    LatentInputs,
    SpikeTrain,
    covariate_dim,
    coupling_sources,
    history_log_intensity,
    latent_log_intensity,
    log_likelihood,
    penalized_objective,
)
from .parallel import WorkerPool

_LOG_MAX = 709.0
_ARMIJO = 1e-4
_MAX_BACKTRACKS = 60


# ---------------------------------------------------------------------------
# latent step (activity estimation)
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LatentWorkspace:
    """Quantities of the latent fixed point that stay constant across sweeps.

    numer[i, q] = sum_c sum_m dN[q+m, c] * kernels[c, i, m-1] + prior_shape.
    t_exp[i, q] = relaxation * numer / counting-denominator (NaN where pinned).
    free[i, q] marks identifiable entries (counting denominator > 0).
    count_denom keeps the raw counting denominator: the solver rebuilds the
    exponent with the prior's curvature term added, which the counting
    denominator drops.
    """

    numer: np.ndarray
    t_exp: np.ndarray
    free: np.ndarray
    prior_shape: float
    prior_scale: float
    relaxation: float
    count_denom: np.ndarray | None = None

    @property
    def pinned_count(self) -> int:
        return int((~self.free).sum())


def latent_step_precompute(train: SpikeTrain, kernels: np.ndarray,
                           prior_shape: float, config: FitConfig,
                           prior_scale: float = 1.0) -> LatentWorkspace:
    """Numerators, exponents, and the identifiability mask of the latent step.

    The exponent denominator counts, for each (source, bin), the spikes that
    fall inside overlapping kernel windows; entries with a zero denominator
    are unidentifiable and pinned at activity 0.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 3:
        raise ValueError("kernels must be C x I x M")
    if np.any(kernels < 0):
        raise ValueError("latent kernels must be non-negative")
    if prior_shape <= 0:
        raise ValueError("prior_shape must be positive")
    C, I, M = kernels.shape
    K = train.num_bins
    if train.num_neurons != C:
        raise ValueError(f"kernels are for {C} neurons, train has {train.num_neurons}")
    cnt = train.counts.astype(np.float64)
    numer = np.full((I, K), float(prior_shape))
    denom = np.zeros((I, K))
    lags = np.minimum(np.arange(K), M)
    for i in range(I):
        for c in range(C):
            g = kernels[c, i]
            # total kernel mass reaching bin k from any admissible lag
            mass = np.concatenate(([0.0], np.cumsum(g)))[lags]
            wgt = cnt[:, c] * mass
            for m in range(1, M + 1):
                if m >= K + 1:
                    break
                numer[i, :K - m] += g[m - 1] * cnt[m:, c]
                denom[i, :K - m] += g[m - 1] * wgt[m:]
    free = denom > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_exp = np.where(free, config.relaxation * numer / denom, np.nan)
    return LatentWorkspace(numer, t_exp, free, float(prior_shape),
                           float(prior_scale), float(config.relaxation), denom)


def _fill_latent_log(kernels, activity, out, pool):
    """out[c, k] = sum_i sum_m kernels[c,i,m-1] * activity[i, k-m]."""
    C, I, M = kernels.shape
    K = activity.shape[1]

    def fill(lo, hi):
        out[:, lo:hi] = 0.0
        for c in range(C):
            row = out[c]
            for i in range(I):
                arow = activity[i]
                kern = kernels[c, i]
                for m in range(1, M + 1):
                    a = max(lo, m)
                    if a >= hi:
                        continue
                    row[a:hi] += kern[m - 1] * arow[a - m:hi - m]

    pool.run_spans(fill, K)


def _fill_weight(log_omega, lat_log, log_tau, out, pool):
    """out = exp(log_omega + lat_log + log_tau); overflow becomes inf."""
    K = out.shape[1]

    def fill(lo, hi):
        blk = out[:, lo:hi]
        np.add(log_omega[:, lo:hi], lat_log[:, lo:hi], out=blk)
        blk += log_tau
        with np.errstate(over="ignore"):
            np.exp(blk, out=blk)

    pool.run_spans(fill, K)


def _fill_latent_denominator(kernels, w, out, pool):
    """out[i, q] = sum_c sum_m kernels[c,i,m-1] * w[c, q+m] for q+m < K."""
    C, I, M = kernels.shape
    K = w.shape[1]

    def fill(lo, hi):
        out[:, lo:hi] = 0.0
        for i in range(I):
            row = out[i]
            for c in range(C):
                wrow = w[c]
                kern = kernels[c, i]
                for m in range(1, M + 1):
                    b = min(hi, K - m)
                    if lo >= b:
                        continue
                    row[lo:b] += kern[m - 1] * wrow[lo + m:b + m]

    pool.run_spans(fill, K)


def _penalized_value(counts_T, lat_log, w, activity, shape, scale):
    """Penalized latent objective from precomputed tables (w = tau*omega*latent)."""
    with np.errstate(over="ignore", invalid="ignore"):
        data = np.sum(counts_T * lat_log) - np.sum(w)
        prior = shape * np.sum(activity) - np.sum(np.exp(activity)) / scale
        value = data + prior
    return float(value) if np.isfinite(value) else float("-inf")


def latent_step_update(gain: np.ndarray, ws: LatentWorkspace, omega: np.ndarray,
                       train: SpikeTrain, kernels: np.ndarray) -> np.ndarray:
    """One raw synchronous multiplicative sweep of the latent activities.

    Every free entry is multiplied by (numerator / denominator)^t with both
    sides read from the previous iterate ``gain``; pinned entries come out as
    exactly 1 (activity 0). Positivity is preserved; a non-finite update
    raises NumericRangeError with the offending (source, bin).
    """
    gain = np.asarray(gain, dtype=np.float64)
    I, K = ws.numer.shape
    if gain.shape != (I, K):
        raise ValueError(f"gain must be I x K = {(I, K)}, got {gain.shape}")
    if np.any(gain <= 0):
        raise ValueError("gain must be strictly positive")
    pool = WorkerPool(1)
    activity = np.log(gain)
    C = train.num_neurons
    lat_log = np.empty((C, K))
    w = np.empty((C, K))
    den = np.empty((I, K))
    _fill_latent_log(kernels, activity, lat_log, pool)
    _fill_weight(np.log(omega), lat_log, np.log(train.tau), w, pool)
    _fill_latent_denominator(kernels, w, den, pool)
    denom = den + gain / ws.prior_scale
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = ws.numer / denom
        new = np.where(ws.free, gain * np.power(ratio, ws.t_exp), 1.0)
    bad = ~np.isfinite(new) | (new <= 0)
    if np.any(bad):
        i, q = np.argwhere(bad)[0]
        raise NumericRangeError("latent update left the representable range",
                                source=int(i), bin=int(q))
    return new


@dataclass
class LatentStepResult:
    """Converged (or capped) latent activities plus solver diagnostics.

    ``residual`` is the stationarity residual: the largest magnitude of the
    activity-gradient of the penalized objective over free entries.
    ``rel_change`` is the size of the last undamped proposal.
    """

    activity: np.ndarray
    iters: int
    residual: float
    rel_change: float
    converged: bool

    @property
    def gain(self) -> np.ndarray:
        return np.exp(self.activity)


def solve_latent_activity(ws: LatentWorkspace, omega: np.ndarray,
                          train: SpikeTrain, kernels: np.ndarray,
                          config: FitConfig,
                          activity_init: np.ndarray | None = None,
                          pool: WorkerPool | None = None) -> LatentStepResult:
    """Iterate latent sweeps until the proposal size drops below inner_tol.

    Each sweep is the raw Jacobi update scaled by one global backtracking
    factor that enforces ascent of the penalized objective; the sweep
    direction is a positive diagonal scaling of the gradient and the objective
    is strictly concave in the free activities, so the iteration converges to
    the unique stationary point regardless of the relaxation setting.
    Non-convergence within the iteration cap is reported, not raised.
    """
    I, K = ws.numer.shape
    C = train.num_neurons
    own_pool = pool is None
    pool = pool or WorkerPool(config.threads)
    counts_T = train.counts.T.astype(np.float64)
    log_om = np.log(omega)
    log_tau = float(np.log(train.tau))

    act = np.zeros((I, K)) if activity_init is None else np.array(activity_init, dtype=np.float64)
    act[~ws.free] = 0.0
    gain = np.exp(act)

    lat_log = np.empty((C, K))
    w = np.empty((C, K))
    lat_log_c = np.empty((C, K))
    w_c = np.empty((C, K))
    den = np.empty((I, K))

    _fill_latent_log(kernels, act, lat_log, pool)
    _fill_weight(log_om, lat_log, log_tau, w, pool)
    value = _penalized_value(counts_T, lat_log, w, act, ws.prior_shape, ws.prior_scale)

    sweeps = 0
    converged = False
    raw = 0.0
    grad_res = 0.0
    try:
        for it in range(config.inner_max_iters + 1):
            _fill_latent_denominator(kernels, w, den, pool)
            denom = den + gain / ws.prior_scale
            grad = np.where(ws.free, ws.numer - denom, 0.0)
            grad_res = float(np.max(np.abs(grad))) if grad.size else 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(ws.free, np.log(ws.numer) - np.log(denom), 0.0)
                # counting exponent, with the prior's exact curvature restored;
                # never larger than the stored t_exp, same fixed point
                t_eff = ws.relaxation * ws.numer / (ws.count_denom + gain / ws.prior_scale)
                step = np.where(ws.free, t_eff * g, 0.0)
            raw = float(np.max(np.abs(step)))
            if raw < config.inner_tol:
                converged = True
                break
            if it == config.inner_max_iters:
                break
            dirderiv = float(np.sum(grad * step))
            scale = 1.0
            accepted = False
            cand = act
            cand_value = value
            for _ in range(_MAX_BACKTRACKS):
                cand = act + scale * step
                _fill_latent_log(kernels, cand, lat_log_c, pool)
                _fill_weight(log_om, lat_log_c, log_tau, w_c, pool)
                cand_value = _penalized_value(counts_T, lat_log_c, w_c, cand,
                                              ws.prior_shape, ws.prior_scale)
                if cand_value >= value + _ARMIJO * scale * dirderiv:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                if cand_value >= value - 1e-12 * (1.0 + abs(value)):
                    accepted = True  # objective flat to round-off: take the tiny step
                else:
                    break
            act = cand
            gain = np.exp(act)
            lat_log, lat_log_c = lat_log_c, lat_log
            w, w_c = w_c, w
            value = cand_value
            sweeps += 1
    finally:
        if own_pool:
            pool.close()
    return LatentStepResult(act, sweeps, grad_res, raw, converged)


def latent_stationarity(activity: np.ndarray, ws: LatentWorkspace,
                        omega: np.ndarray, train: SpikeTrain,
                        kernels: np.ndarray) -> np.ndarray:
    """(I, K) gradient of the penalized objective in the log-activities.

    Zero at the latent fixed point on free entries; pinned entries are
    reported as 0.
    """
    I, K = ws.numer.shape
    C = train.num_neurons
    pool = WorkerPool(1)
    lat_log = np.empty((C, K))
    w = np.empty((C, K))
    den = np.empty((I, K))
    _fill_latent_log(kernels, activity, lat_log, pool)
    _fill_weight(np.log(omega), lat_log, np.log(train.tau), w, pool)
    _fill_latent_denominator(kernels, w, den, pool)
    denom = den + np.exp(activity) / ws.prior_scale
    return np.where(ws.free, ws.numer - denom, 0.0)


# ---------------------------------------------------------------------------
# GLM step (parameter estimation)
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GlmWorkspace:
    """Per-neuron design matrices and the constant parts of the GLM fixed point.

    numer[c, j] = sum_k dN[k, c] * Y_j(k); b_exp is the counting exponent
    (NaN where pinned); free marks slots whose covariate co-occurs with at
    least one spike.
    """

    covariates: list
    numer: np.ndarray
    b_exp: np.ndarray
    free: np.ndarray
    history_lags: int
    coupling_lags: int

    @property
    def num_slots(self) -> int:
        return self.numer.shape[1]

    @property
    def pinned_count(self) -> int:
        return int((~self.free).sum())


def _design_matrix(counts, c, history_lags, coupling_lags):
    K, C = counts.shape
    D = covariate_dim(C, history_lags, coupling_lags)
    Y = np.zeros((K, D))
    Y[:, 0] = 1.0
    cnt = counts.astype(np.float64)
    for q in range(1, history_lags + 1):
        if q < K + 1:
            Y[q:, q] = cnt[:K - q, c]
    pos = 1 + history_lags
    for s in coupling_sources(C, c):
        for r in range(1, coupling_lags + 1):
            if r < K + 1:
                Y[r:, pos + r - 1] = cnt[:K - r, s]
        pos += coupling_lags
    return Y


def glm_step_precompute(train: SpikeTrain, config: FitConfig) -> GlmWorkspace:
    """Design matrices, numerators, counting exponents, identifiability mask.

    A slot whose counting denominator is zero (its covariate never co-occurs
    with a spike of the target neuron) is pinned at parameter 0; with sparse
    data, rebinning to a larger bin width makes more slots identifiable.
    """
    counts = train.counts
    K, C = counts.shape
    Q, R = config.history_lags, config.coupling_lags
    D = covariate_dim(C, Q, R)
    covariates = []
    numer = np.empty((C, D))
    count_den = np.empty((C, D))
    for c in range(C):
        Y = _design_matrix(counts, c, Q, R)
        covariates.append(Y)
        dn = counts[:, c].astype(np.float64)
        numer[c] = Y.T @ dn
        count_den[c] = Y.T @ (dn * Y.sum(axis=1))
    free = count_den > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        b_exp = np.where(free, numer / count_den, np.nan)
    return GlmWorkspace(covariates, numer, b_exp, free, Q, R)


def glm_step_update(mu: np.ndarray, ws: GlmWorkspace, latent_gain: np.ndarray | None,
                    train: SpikeTrain) -> np.ndarray:
    """One raw synchronous multiplicative sweep of the exponentiated parameters.

    ``latent_gain`` is the (C, K) latent intensity factor at the current
    activities (None = ones); it multiplies the per-bin intensity inside the
    denominator. Pinned slots come out as exactly 1 (parameter 0).
    """
    mu = np.asarray(mu, dtype=np.float64)
    C, D = ws.numer.shape
    if mu.shape != (C, D):
        raise ValueError(f"mu must be C x D = {(C, D)}, got {mu.shape}")
    if np.any(mu <= 0):
        raise ValueError("mu must be strictly positive")
    tau = train.tau
    new = np.ones_like(mu)
    for c in range(C):
        Y = ws.covariates[c]
        theta = np.where(ws.free[c], np.log(mu[c]), 0.0)
        eta = Y @ theta
        with np.errstate(over="ignore"):
            w = np.exp(eta)
        if latent_gain is not None:
            w = w * latent_gain[c]
        den = tau * (Y.T @ w)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ratio = np.where(ws.free[c], ws.numer[c] / den, 1.0)
            upd = mu[c] * np.power(ratio, np.where(ws.free[c], ws.b_exp[c], 0.0))
        upd = np.where(ws.free[c], upd, 1.0)
        bad = ~np.isfinite(upd) | (upd <= 0)
        if np.any(bad):
            j = int(np.argwhere(bad)[0][0])
            raise NumericRangeError("GLM update left the representable range",
                                    neuron=c, slot=j)
        new[c] = upd
    return new


@dataclass
class GlmStepResult:
    """Converged (or capped) exponentiated parameters plus solver diagnostics.

    ``residual`` is max relative change plus the log-likelihood gradient norm
    on free slots, per the reporting contract; the two parts are also exposed
    separately.
    """

    mu: np.ndarray
    iters: int
    rel_change: float
    grad_residual: float
    converged: bool
    ll_trace: list = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.rel_change + self.grad_residual

    def params(self, history_lags, coupling_lags) -> GlmParams:
        return ExpParams(self.mu, history_lags, coupling_lags).to_glm_params()


def _glm_sweep_neuron(c, theta, ws, lam_u_c, dn, tau, tol, eval_only=False):
    """One safeguarded sweep for neuron c; returns diagnostics and new state.

    The returned value/exp_total pair always describes the returned theta.
    """
    Y = ws.covariates[c]
    free = ws.free[c]
    numer = ws.numer[c]
    eta = Y @ theta
    with np.errstate(over="ignore"):
        w = np.exp(eta) if lam_u_c is None else lam_u_c * np.exp(eta)
    value = float(dn @ eta - tau * np.sum(w))
    exp_total = float(np.sum(w))
    den = tau * (Y.T @ w)
    grad = np.where(free, numer - den, 0.0)
    grad_res = float(np.max(np.abs(grad))) if grad.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(free, np.log(numer) - np.log(den), 0.0)
        step = np.where(free, ws.b_exp[c] * g, 0.0)
    raw = float(np.max(np.abs(step)))
    if eval_only or raw < tol or not np.isfinite(value):
        return theta, raw, grad_res, value, exp_total, False
    d_eta = Y @ step
    dirderiv = float(np.sum(grad * step))
    scale = 1.0
    cand = float("-inf")
    cand_exp = float("inf")
    for _ in range(_MAX_BACKTRACKS):
        eta_c = eta + scale * d_eta
        with np.errstate(over="ignore"):
            w_c = np.exp(eta_c) if lam_u_c is None else lam_u_c * np.exp(eta_c)
        cand = float(dn @ eta_c - tau * np.sum(w_c))
        cand_exp = float(np.sum(w_c))
        if np.isfinite(cand) and cand >= value + _ARMIJO * scale * dirderiv:
            return theta + scale * step, raw, grad_res, cand, cand_exp, True
        if np.isfinite(cand) and cand >= value - 1e-12 * (1.0 + abs(value)) and scale < 2.0 ** -55:
            # objective flat to round-off: take the tiny step
            return theta + scale * step, raw, grad_res, cand, cand_exp, True
        scale *= 0.5
    return theta, raw, grad_res, value, exp_total, False


def solve_glm_params(ws: GlmWorkspace, latent_log: np.ndarray | None,
                     train: SpikeTrain, config: FitConfig,
                     mu_init: np.ndarray | None = None,
                     max_sweeps: int | None = None,
                     sweep_schedule: list | None = None,
                     track_ll: bool = False,
                     pool: WorkerPool | None = None) -> GlmStepResult:
    """Iterate GLM sweeps until the proposal size drops below inner_tol.

    ``sweep_schedule`` runs the sweeps in fixed-size groups and records the
    log-likelihood after each group (used to grant a baseline fit the same
    sweep budget, group by group, as a latent-augmented fit). ``track_ll``
    records it after every sweep. Trace entries are
    (log_likelihood, integrated_intensity) pairs.
    """
    C, D = ws.numer.shape
    K = train.num_bins
    tau = train.tau
    counts = train.counts
    own_pool = pool is None
    pool = pool or WorkerPool(config.threads)
    if mu_init is None:
        theta = np.zeros((C, D))
    else:
        mu_init = np.asarray(mu_init, dtype=np.float64)
        if np.any(mu_init <= 0):
            raise ValueError("mu_init must be strictly positive")
        theta = np.where(ws.free, np.log(mu_init), 0.0)
    lam_u = None if latent_log is None else np.exp(latent_log)
    # dN . log(latent factor): constant during the GLM step, needed for the trace
    const = 0.0 if latent_log is None else float(np.sum(counts.T * latent_log))
    dns = [counts[:, c].astype(np.float64) for c in range(C)]

    raw_c = np.zeros(C)
    grad_c = np.zeros(C)
    val_c = np.zeros(C)
    exp_c = np.zeros(C)

    def sweep(update=True):
        moved = [False]

        def work(c):
            lam_c = None if lam_u is None else lam_u[c]
            th, raw, grad, val, expt, stepped = _glm_sweep_neuron(
                c, theta[c], ws, lam_c, dns[c], tau, config.inner_tol,
                eval_only=not update)
            if update and stepped:
                theta[c] = th
                moved[0] = True
            raw_c[c] = raw
            grad_c[c] = grad
            val_c[c] = val
            exp_c[c] = expt

        pool.run_items(work, range(C))
        return moved[0]

    trace = []

    def record():
        trace.append((const + float(np.sum(val_c)), float(np.sum(exp_c))))

    total = 0
    converged = False
    try:
        if sweep_schedule is not None:
            sweep(update=False)
            record()
            for group in sweep_schedule:
                for _ in range(int(group)):
                    moved = sweep(update=True)
                    total += 1
                    converged = float(np.max(raw_c)) < config.inner_tol
                    if converged or not moved:
                        break
                sweep(update=False)
                record()
            converged = float(np.max(raw_c)) < config.inner_tol
        else:
            cap = config.inner_max_iters if max_sweeps is None else int(max_sweeps)
            sweep(update=False)
            if track_ll:
                record()
            for it in range(cap):
                if float(np.max(raw_c)) < config.inner_tol:
                    converged = True
                    break
                moved = sweep(update=True)
                total += 1
                if track_ll:
                    record()
                if not moved:
                    break
            else:
                sweep(update=False)
                converged = float(np.max(raw_c)) < config.inner_tol
    finally:
        if own_pool:
            pool.close()
    mu = np.where(ws.free, np.exp(theta), 1.0)
    return GlmStepResult(mu, total, float(np.max(raw_c)), float(np.max(grad_c)),
                         converged, trace)


def glm_log_gradient(mu: np.ndarray, ws: GlmWorkspace,
                     latent_log: np.ndarray | None, train: SpikeTrain) -> np.ndarray:
    """(C, D) gradient of the log-likelihood in the log-parameters.

    grad[c, j] = sum_k Y_j(k) (dN_k - tau * lambda_c(k)); pinned slots are
    reported as 0. Zero at the GLM fixed point on free slots.
    """
    C, D = ws.numer.shape
    tau = train.tau
    lam_u = None if latent_log is None else np.exp(latent_log)
    out = np.zeros((C, D))
    for c in range(C):
        Y = ws.covariates[c]
        theta = np.where(ws.free[c], np.log(mu[c]), 0.0)
        w = np.exp(Y @ theta)
        if lam_u is not None:
            w = w * lam_u[c]
        den = tau * (Y.T @ w)
        out[c] = np.where(ws.free[c], ws.numer[c] - den, 0.0)
    return out


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    """Fitted parameters, latent inputs (None for a GLM-only fit), and report."""

    params: GlmParams
    latents: LatentInputs | None
    report: FitReport


def _omega_table(params, train):
    log_om = history_log_intensity(params, train)
    peak = float(log_om.max())
    if not np.isfinite(peak) or peak > _LOG_MAX:
        c, k = np.unravel_index(np.argmax(log_om), log_om.shape)
        raise NumericRangeError("history intensity overflow", neuron=int(c), bin=int(k))
    return np.exp(log_om)


def fit_em(train: SpikeTrain, kernels: np.ndarray, config: FitConfig,
           prior_shape: float = 50.0, prior_scale: float = 1.0) -> FitResult:
    """Joint estimation of GLM parameters and latent activities.

    Initialization draws the latent activities iid uniform on [-1, 1] with
    ``config.seed`` (pinned entries zeroed) and fits the GLM once against
    them; afterwards latent and GLM steps alternate, each warm-started from
    the previous EM iterate, until the relative log-likelihood change drops
    below ``em_tol`` or ``em_max_iters`` is reached. The report carries the
    log-likelihood and penalized-objective traces (entry 0 is the
    initialization point) and both identifiability masks.
    """
    t0 = time.perf_counter()
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 3:
        raise ValueError("kernels must be C x I x M")
    C, I, M = kernels.shape
    if train.num_neurons != C:
        raise ValueError(f"kernels are for {C} neurons, train has {train.num_neurons}")
    if I >= C:
        raise ValueError(f"latent source count ({I}) must be smaller than neuron count ({C})")
    if config.n_latents != I or config.latent_lags != M:
        raise ValueError("config n_latents/latent_lags do not match the kernels table")
    K = train.num_bins

    ws_e = latent_step_precompute(train, kernels, prior_shape, config, prior_scale)
    ws_m = glm_step_precompute(train, config)

    rng = np.random.default_rng(config.seed)
    act = rng.uniform(-1.0, 1.0, size=(I, K))
    act[~ws_e.free] = 0.0

    with WorkerPool(config.threads) as pool:
        lat_log = latent_log_intensity(kernels, act)
        mres = solve_glm_params(ws_m, lat_log, train, config, pool=pool)
        mu = mres.mu
        params = ExpParams(mu, config.history_lags, config.coupling_lags).to_glm_params()
        latents = LatentInputs(kernels, act, prior_shape, prior_scale)
        ll = log_likelihood(params, latents, train)
        ll_trace = [ll]
        pen_trace = [penalized_objective(params, latents, train)]
        e_sweeps: list[int] = []
        m_sweeps = [mres.iters]
        e_res = float("nan")
        converged = False
        em_iters = 0
        for _ in range(config.em_max_iters):
            omega = _omega_table(params, train)
            eres = solve_latent_activity(ws_e, omega, train, kernels, config,
                                         activity_init=act, pool=pool)
            act = eres.activity
            e_sweeps.append(eres.iters)
            e_res = eres.residual
            lat_log = latent_log_intensity(kernels, act)
            mres = solve_glm_params(ws_m, lat_log, train, config, mu_init=mu, pool=pool)
            mu = mres.mu
            params = ExpParams(mu, config.history_lags, config.coupling_lags).to_glm_params()
            latents = LatentInputs(kernels, act, prior_shape, prior_scale)
            new_ll = log_likelihood(params, latents, train)
            ll_trace.append(new_ll)
            pen_trace.append(penalized_objective(params, latents, train))
            m_sweeps.append(mres.iters)
            em_iters += 1
            if abs(new_ll - ll) / (1.0 + abs(ll)) < config.em_tol:
                converged = True
                ll = new_ll
                break
            ll = new_ll

    report = FitReport(
        ll_trace=np.array(ll_trace),
        penalized_trace=np.array(pen_trace),
        converged=converged,
        em_iters=em_iters,
        latent_free=ws_e.free.copy(),
        glm_free=ws_m.free.copy(),
        wall_time=time.perf_counter() - t0,
        seed=config.seed,
        e_sweeps=e_sweeps,
        m_sweeps=m_sweeps,
        latent_residual=e_res,
        glm_residual=mres.grad_residual,
    )
    return FitResult(params, latents, report)


def fit_without_latents(train: SpikeTrain, config: FitConfig,
                        prior_scale: float | None = None,
                        sweep_schedule: list | None = None) -> FitResult:
    """GLM-only fit (latent factor identically 1), the comparison baseline.

    ``sweep_schedule`` grants the same per-EM-iteration sweep budget as a
    latent-augmented run (pass that run's ``report.m_sweeps``), making the two
    trace files comparable row by row. Without a schedule the fit runs to
    convergence within ``inner_max_iters`` and traces every sweep.
    The penalized trace needs the latent prior constant; it is NaN unless
    ``prior_scale`` is given.
    """
    t0 = time.perf_counter()
    ws_m = glm_step_precompute(train, config)
    with WorkerPool(config.threads) as pool:
        res = solve_glm_params(ws_m, None, train, config,
                               sweep_schedule=sweep_schedule,
                               track_ll=sweep_schedule is None, pool=pool)
    mu = res.mu
    params = ExpParams(mu, config.history_lags, config.coupling_lags).to_glm_params()
    ll_trace = np.array([v for v, _ in res.ll_trace])
    if prior_scale is not None:
        shift = config.n_latents * train.num_bins / prior_scale
        pen_trace = np.array([-train.tau * e - shift for _, e in res.ll_trace])
    else:
        pen_trace = np.full(ll_trace.shape, np.nan)
    report = FitReport(
        ll_trace=ll_trace,
        penalized_trace=pen_trace,
        converged=res.converged,
        em_iters=len(ll_trace) - 1,
        latent_free=None,
        glm_free=ws_m.free.copy(),
        wall_time=time.perf_counter() - t0,
        seed=config.seed,
        m_sweeps=[res.iters],
        glm_residual=res.grad_residual,
    )
    return FitResult(params, None, report)


# ---------------------------------------------------------------------------
# contraction diagnostic
# ---------------------------------------------------------------------------

def contraction_diagnostic(activity: np.ndarray, ws: LatentWorkspace,
                           omega: np.ndarray, train: SpikeTrain,
                           kernels: np.ndarray, relaxation: float) -> float:
    """Spectral radius of the latent fixed-point map's Jacobian at a solution.

    Builds the multiplicative update map with the intensity-weighted exponent
    (the exact form the counting exponent approximates), differentiates it by
    central finite differences at the supplied converged activities, and
    estimates the spectral radius by power iteration. Local contraction
    theory predicts |1 - relaxation| at the exact fixed point. Diagnostic
    only: instances above I*K = 200 are rejected.
    """
    I, K = ws.numer.shape
    if I * K > 200:
        raise ValueError(f"diagnostic limited to I*K <= 200 entries, got {I * K}")
    C = train.num_neurons
    free_idx = np.argwhere(ws.free)
    F = len(free_idx)
    if F == 0:
        return 0.0
    pool = WorkerPool(1)
    log_om = np.log(omega)
    log_tau = float(np.log(train.tau))
    gain_hat = np.exp(activity)
    lags = np.minimum(np.arange(K), kernels.shape[2])

    def weight_of(act):
        lat_log = np.empty((C, K))
        w = np.empty((C, K))
        _fill_latent_log(kernels, act, lat_log, pool)
        _fill_weight(log_om, lat_log, log_tau, w, pool)
        return w

    # intensity-weighted exponent denominator at the solution
    w_hat = weight_of(activity)
    M = kernels.shape[2]
    d_exact = np.zeros((I, K))
    for i in range(I):
        for c in range(C):
            g = kernels[c, i]
            mass = np.concatenate(([0.0], np.cumsum(g)))[lags]
            wgt = w_hat[c] * mass
            for m in range(1, M + 1):
                if m >= K + 1:
                    break
                d_exact[i, :K - m] += g[m - 1] * wgt[m:]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_exact = np.where(ws.free, relaxation * ws.numer / d_exact, 0.0)

    def fixed_point_map(gain):
        act = np.log(gain)
        w = weight_of(act)
        den = np.empty((I, K))
        _fill_latent_denominator(kernels, w, den, pool)
        denom = den + gain / ws.prior_scale
        out = np.where(ws.free, gain * (ws.numer / denom) ** t_exact, 1.0)
        return out

    jac = np.empty((F, F))
    for col, (i, q) in enumerate(free_idx):
        h = 1e-6 * gain_hat[i, q]
        plus = gain_hat.copy()
        minus = gain_hat.copy()
        plus[i, q] += h
        minus[i, q] -= h
        diff = (fixed_point_map(plus) - fixed_point_map(minus)) / (2.0 * h)
        jac[:, col] = diff[ws.free]

    # power iteration; geometric mean of late norm ratios rides out rotation
    v = np.ones(F) / np.sqrt(F)
    ratios = []
    for _ in range(400):
        nxt = jac @ v
        norm = float(np.linalg.norm(nxt))
        if norm < 1e-14:
            return norm
        ratios.append(norm)
        v = nxt / norm
    tail = np.array(ratios[-20:])
    return float(np.exp(np.mean(np.log(tail))))
