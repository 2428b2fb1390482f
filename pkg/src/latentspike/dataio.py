"""File formats and binning utilities.

On-disk forms:

* spike matrix CSV -- header line ``tau=<seconds>``, then one row per bin and
  one integer column per neuron.
* event-list CSV -- header line ``duration=<seconds>``, then ``neuron,timestamp``
  rows (1-based neuron ids, timestamps in seconds, sorted).
* model document -- one JSON file carrying dimensions, parameter tables,
  latent kernels/activities, prior, fit report, effective config, and seed;
  the schema is strict (unknown fields rejected, dimensions cross-checked).
* trace CSV -- ``iter,loglik,penalized`` rows.

Every reader/writer pair round-trips to equality; rebinning conserves counts
exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .model import FitReport, GlmParams, SpikeTrain


# ---------------------------------------------------------------------------
# event lists and binning
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EventList:
    """Sorted spike events: 1-based neuron ids and timestamps in [0, duration)."""

    neuron: np.ndarray
    time: np.ndarray
    duration: float

    def __post_init__(self):
        neuron = np.asarray(self.neuron, dtype=np.int64)
        time = np.asarray(self.time, dtype=np.float64)
        if neuron.shape != time.shape or neuron.ndim != 1:
            raise ValueError("neuron and time must be equal-length vectors")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if neuron.size:
            if np.any(np.diff(time) < 0):
                idx = int(np.argwhere(np.diff(time) < 0)[0][0]) + 1
                raise ValueError(f"events not sorted by timestamp (event {idx})")
            if time[0] < 0 or time[-1] >= self.duration:
                raise ValueError("timestamps must lie in [0, duration)")
            if neuron.min() < 1:
                raise ValueError("neuron ids are 1-based")
            present = np.unique(neuron)
            if present.size != present[-1]:
                missing = sorted(set(range(1, int(present[-1]) + 1)) - set(present.tolist()))
                raise ValueError(f"neuron ids must be dense in 1..C; missing {missing}")
        object.__setattr__(self, "neuron", neuron)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "duration", float(self.duration))

    @property
    def num_neurons(self) -> int:
        return int(self.neuron.max()) if self.neuron.size else 0

    def __eq__(self, other):
        if not isinstance(other, EventList):
            return NotImplemented
        return (np.array_equal(self.neuron, other.neuron)
                and np.array_equal(self.time, other.time)
                and self.duration == other.duration)


def read_events_csv(path) -> EventList:
    """Parse an event-list CSV (``duration=`` header, then neuron,timestamp rows)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("duration="):
        raise FormatError("expected header 'duration=<seconds>'", path=path, location="line 1")
    try:
        duration = float(lines[0].split("=", 1)[1])
    except ValueError:
        raise FormatError("malformed duration header", path=path, location="line 1") from None
    neuron, time = [], []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 2:
            raise FormatError("expected 'neuron,timestamp'", path=path, location=f"line {ln}")
        try:
            neuron.append(int(parts[0]))
            time.append(float(parts[1]))
        except ValueError:
            raise FormatError("malformed neuron id or timestamp",
                              path=path, location=f"line {ln}") from None
    try:
        return EventList(np.array(neuron, dtype=np.int64),
                         np.array(time, dtype=np.float64), duration)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from None


def write_events_csv(events: EventList, path):
    with open(path, "w") as fh:
        fh.write(f"duration={events.duration!r}\n")
        for n, t in zip(events.neuron, events.time):
            fh.write(f"{int(n)},{float(t)!r}\n")


def bin_events(events: EventList, tau: float, mode: str = "count") -> tuple:
    """Bin events into a SpikeTrain of K = ceil(duration/tau) bins.

    ``binary`` mode clips each (bin, neuron) cell to {0, 1}; the number of
    clipped events is returned alongside (always 0 in ``count`` mode).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if mode not in ("binary", "count"):
        raise ValueError(f"mode must be 'binary' or 'count', got {mode!r}")
    K = max(1, math.ceil(events.duration / tau))
    C = max(1, events.num_neurons)
    counts = np.zeros((K, C), dtype=np.int64)
    if events.neuron.size:
        bins = np.minimum((events.time / tau).astype(np.int64), K - 1)
        np.add.at(counts, (bins, events.neuron - 1), 1)
    clipped = 0
    if mode == "binary":
        clipped = int((counts - np.minimum(counts, 1)).sum())
        counts = np.minimum(counts, 1)
    return SpikeTrain(counts, tau), clipped


def rebin(train: SpikeTrain, factor: int) -> tuple:
    """Sum consecutive groups of ``factor`` bins; tau grows by the same factor.

    Counts are conserved exactly. A trailing partial group is kept (its counts
    are not dropped) and flagged by the returned boolean, since its true width
    is shorter than the new tau.
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return SpikeTrain(train.counts.copy(), train.tau, train.start_time), False
    K, C = train.counts.shape
    groups = math.ceil(K / factor)
    out = np.zeros((groups, C), dtype=np.int64)
    for g in range(groups):
        out[g] = train.counts[g * factor:(g + 1) * factor].sum(axis=0)
    partial = (K % factor) != 0
    return SpikeTrain(out, train.tau * factor, train.start_time), partial


# ---------------------------------------------------------------------------
# spike matrix CSV
# ---------------------------------------------------------------------------

def write_spike_csv(train: SpikeTrain, path):
    with open(path, "w") as fh:
        fh.write(f"tau={train.tau!r}\n")
        for row in train.counts:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def read_spike_csv(path) -> SpikeTrain:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("tau="):
        raise FormatError("expected header 'tau=<seconds>'", path=path, location="line 1")
    try:
        tau = float(lines[0].split("=", 1)[1])
    except ValueError:
        raise FormatError("malformed tau header", path=path, location="line 1") from None
    rows = []
    width = None
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise FormatError(f"expected {width} columns, found {len(cells)}",
                              path=path, location=f"line {ln}")
        try:
            row = [int(c) for c in cells]
        except ValueError:
            raise FormatError("non-integer cell", path=path, location=f"line {ln}") from None
        if any(v < 0 for v in row):
            raise FormatError("negative count", path=path, location=f"line {ln}")
        rows.append(row)
    if not rows:
        raise FormatError("no data rows", path=path)
    try:
        return SpikeTrain(np.array(rows, dtype=np.int64), tau)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from None


# ---------------------------------------------------------------------------
# model document (strict JSON schema)
# ---------------------------------------------------------------------------

_TOP_KEYS = {"format", "dims", "params", "kernels", "activity", "prior",
             "report", "config", "seed"}
_DIM_KEYS = {"C", "Q", "R", "I", "M", "K"}
_PARAM_KEYS = {"baseline", "history", "coupling"}
_PRIOR_KEYS = {"shape", "scale"}
_REPORT_KEYS = {"ll_trace", "penalized_trace", "converged", "em_iters",
                "latent_free", "glm_free", "wall_time", "seed", "e_sweeps",
                "m_sweeps", "latent_residual", "glm_residual"}
_FORMAT_TAG = "latentspike-model/1"


@dataclass
class ModelDocument:
    """In-memory form of a model document."""

    params: GlmParams
    kernels: np.ndarray | None = None
    activity: np.ndarray | None = None
    prior_shape: float | None = None
    prior_scale: float | None = None
    report: FitReport | None = None
    config: dict | None = None
    seed: int | None = None


def report_to_dict(report: FitReport) -> dict:
    return {
        "ll_trace": report.ll_trace.tolist(),
        "penalized_trace": report.penalized_trace.tolist(),
        "converged": bool(report.converged),
        "em_iters": int(report.em_iters),
        "latent_free": None if report.latent_free is None else report.latent_free.tolist(),
        "glm_free": report.glm_free.tolist(),
        "wall_time": float(report.wall_time),
        "seed": report.seed,
        "e_sweeps": [int(v) for v in report.e_sweeps],
        "m_sweeps": [int(v) for v in report.m_sweeps],
        "latent_residual": float(report.latent_residual),
        "glm_residual": float(report.glm_residual),
    }


def report_from_dict(d: dict) -> FitReport:
    return FitReport(
        ll_trace=np.array(d["ll_trace"], dtype=float),
        penalized_trace=np.array(d["penalized_trace"], dtype=float),
        converged=bool(d["converged"]),
        em_iters=int(d["em_iters"]),
        latent_free=None if d["latent_free"] is None else np.array(d["latent_free"], dtype=bool),
        glm_free=np.array(d["glm_free"], dtype=bool),
        wall_time=float(d["wall_time"]),
        seed=d.get("seed"),
        e_sweeps=list(d.get("e_sweeps", [])),
        m_sweeps=list(d.get("m_sweeps", [])),
        latent_residual=float(d.get("latent_residual", float("nan"))),
        glm_residual=float(d.get("glm_residual", float("nan"))),
    )


def write_model(path, params: GlmParams, kernels=None, activity=None,
                prior_shape=None, prior_scale=None, report: FitReport | None = None,
                config: dict | None = None, seed: int | None = None):
    """Write a model document; every table present is dimension-stamped."""
    K = 0
    if activity is not None:
        activity = np.asarray(activity, dtype=float)
        K = activity.shape[1]
    I = M = 0
    if kernels is not None:
        kernels = np.asarray(kernels, dtype=float)
        I, M = kernels.shape[1], kernels.shape[2]
    doc = {
        "format": _FORMAT_TAG,
        "dims": {"C": params.num_neurons, "Q": params.history_lags,
                 "R": params.coupling_lags, "I": I, "M": M, "K": K},
        "params": {
            "baseline": params.baseline.tolist(),
            "history": params.history.tolist(),
            "coupling": params.coupling.tolist(),
        },
        "kernels": None if kernels is None else kernels.tolist(),
        "activity": None if activity is None else activity.tolist(),
        "prior": (None if prior_shape is None else
                  {"shape": float(prior_shape), "scale": float(prior_scale)}),
        "report": None if report is None else report_to_dict(report),
        "config": config,
        "seed": seed,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _expect_keys(d, allowed, where, path):
    unknown = set(d) - allowed
    if unknown:
        raise FormatError(f"unknown field {sorted(unknown)[0]!r}",
                          path=path, location=where)


def _table(doc, key, shape, path, dtype=float):
    arr = np.asarray(doc, dtype=dtype)
    if arr.shape != shape:
        raise FormatError(f"table {key!r} has shape {arr.shape}, expected {shape}",
                          path=path, location=key)
    return arr


def read_model(path) -> ModelDocument:
    """Read and validate a model document (strict: unknown fields rejected)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"not valid JSON: {exc}", path=path) from None
    if not isinstance(doc, dict):
        raise FormatError("document must be a JSON object", path=path)
    _expect_keys(doc, _TOP_KEYS, "top level", path)
    for key in ("format", "dims", "params"):
        if key not in doc:
            raise FormatError(f"missing field {key!r}", path=path, location="top level")
    if doc["format"] != _FORMAT_TAG:
        raise FormatError(f"unsupported format {doc['format']!r}", path=path, location="format")
    dims = doc["dims"]
    _expect_keys(dims, _DIM_KEYS, "dims", path)
    missing = _DIM_KEYS - set(dims)
    if missing:
        raise FormatError(f"missing dims field {sorted(missing)[0]!r}", path=path, location="dims")
    C, Q, R = dims["C"], dims["Q"], dims["R"]
    I, M, K = dims["I"], dims["M"], dims["K"]
    pd = doc["params"]
    _expect_keys(pd, _PARAM_KEYS, "params", path)
    baseline = _table(pd.get("baseline"), "baseline", (C,), path)
    history = _table(pd.get("history"), "history", (C, Q), path)
    coupling = _table(pd.get("coupling"), "coupling", (C, C, R), path)
    try:
        params = GlmParams(baseline, history, coupling)
    except ValueError as exc:
        raise FormatError(str(exc), path=path, location="params") from None
    kernels = doc.get("kernels")
    if kernels is not None:
        kernels = _table(kernels, "kernels", (C, I, M), path)
    elif I or M:
        raise FormatError("dims announce latent kernels but table is null",
                          path=path, location="kernels")
    activity = doc.get("activity")
    if activity is not None:
        activity = _table(activity, "activity", (I, K), path)
    elif K:
        raise FormatError("dims announce activities but table is null",
                          path=path, location="activity")
    prior = doc.get("prior")
    prior_shape = prior_scale = None
    if prior is not None:
        _expect_keys(prior, _PRIOR_KEYS, "prior", path)
        prior_shape, prior_scale = float(prior["shape"]), float(prior["scale"])
    report = doc.get("report")
    if report is not None:
        _expect_keys(report, _REPORT_KEYS, "report", path)
        try:
            report = report_from_dict(report)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed report: {exc}", path=path, location="report") from None
    return ModelDocument(params, kernels, activity, prior_shape, prior_scale,
                         report, doc.get("config"), doc.get("seed"))


# ---------------------------------------------------------------------------
# trace CSV
# ---------------------------------------------------------------------------

def write_trace_csv(path, ll_trace, penalized_trace=None):
    ll = np.asarray(ll_trace, dtype=float)
    pen = (np.full(ll.shape, np.nan) if penalized_trace is None
           else np.asarray(penalized_trace, dtype=float))
    if pen.shape != ll.shape:
        raise ValueError("trace lengths differ")
    with open(path, "w") as fh:
        fh.write("iter,loglik,penalized\n")
        for it, (a, b) in enumerate(zip(ll, pen)):
            fh.write(f"{it},{float(a)!r},{float(b)!r}\n")


def read_trace_csv(path) -> tuple:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "iter,loglik,penalized":
        raise FormatError("expected header 'iter,loglik,penalized'",
                          path=path, location="line 1")
    ll, pen = [], []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 3:
            raise FormatError("expected 3 columns", path=path, location=f"line {ln}")
        try:
            ll.append(float(parts[1]))
            pen.append(float(parts[2]))
        except ValueError:
            raise FormatError("malformed value", path=path, location=f"line {ln}") from None
    return np.array(ll), np.array(pen)
