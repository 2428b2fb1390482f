"""Command-line front end: simulate / fit / eval / rebin.

Settings may come from a JSON config file (``--config``); explicit flags
override file values, and the effective settings are echoed into every output
document. Exit code is 0 iff all requested artifacts were written.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from . import simulate as sim
from .errors import FormatError, GenerationError, NumericRangeError
from .estimator import fit_em, fit_without_latents
from .model import (
    FitConfig,
    LatentInputs,
    history_log_intensity,
    latent_log_intensity,
    log_likelihood,
)

_COMMON = {"seed": None, "threads": 1, "out_dir": "."}
_DEFAULTS = {
    "simulate": {**_COMMON, "preset": "paper-fig2", "spec": None,
                 "bins": None, "tau": None},
    "fit": {**_COMMON, "train": None, "gamma": "from-truth",
            "I": None, "M": None, "Q": None, "R": None, "l": 1.0,
            "em_tol": 1e-6, "em_max_iters": 100,
            "inner_tol": 1e-8, "inner_max_iters": 200,
            "prior_shape": None, "prior_scale": None,
            "no_baseline": False, "seed": 0},
    "eval": {**_COMMON, "model": None, "train": None},
    "rebin": {**_COMMON, "train": None, "factor": None, "out": None},
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="latentspike",
        description="Fit and simulate point-process GLMs with latent background inputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of default settings (flags override)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("simulate", help="generate a spike train and its ground truth")
    common(p)
    p.add_argument("--preset", help="bundled network preset name")
    p.add_argument("--spec", help="network spec JSON file (overrides --preset)")
    p.add_argument("--bins", type=int, help="override the spec's bin count")
    p.add_argument("--tau", type=float, help="override the spec's bin width (seconds)")

    p = sub.add_parser("fit", help="fit the model to a spike CSV")
    common(p)
    p.add_argument("--train", help="spike matrix CSV")
    p.add_argument("--gamma",
                   help="latent kernels: 'zero', 'from-truth' (truth.json next to "
                        "the train), or a model document path")
    p.add_argument("--I", type=int, dest="I", help="latent source count")
    p.add_argument("--M", type=int, dest="M", help="latent kernel memory length")
    p.add_argument("--Q", type=int, dest="Q", help="history memory length")
    p.add_argument("--R", type=int, dest="R", help="coupling memory length")
    p.add_argument("--l", type=float, dest="l", help="fixed-point relaxation in (0,2)")
    p.add_argument("--em-tol", type=float, dest="em_tol")
    p.add_argument("--em-max-iters", type=int, dest="em_max_iters")
    p.add_argument("--inner-tol", type=float, dest="inner_tol")
    p.add_argument("--inner-max-iters", type=int, dest="inner_max_iters")
    p.add_argument("--prior-shape", type=float, dest="prior_shape")
    p.add_argument("--prior-scale", type=float, dest="prior_scale")
    p.add_argument("--no-baseline", dest="no_baseline", action="store_const", const=True,
                   help="skip the latent-free comparison fit")

    p = sub.add_parser("eval", help="log-likelihood of a model document on a train")
    common(p)
    p.add_argument("--model", help="model document JSON")
    p.add_argument("--train", help="spike matrix CSV")

    p = sub.add_parser("rebin", help="aggregate consecutive bins of a spike CSV")
    common(p)
    p.add_argument("--train", help="spike matrix CSV")
    p.add_argument("--factor", type=int, help="bins to merge per group")
    p.add_argument("--out", help="output CSV path")
    return parser


def _effective(args) -> dict:
    """Merge defaults, config-file values, and explicit flags (flags win)."""
    eff = dict(_DEFAULTS[args.command])
    if args.config:
        with open(args.config) as fh:
            try:
                file_vals = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"not valid JSON: {exc}", path=args.config) from None
        unknown = set(file_vals) - set(eff)
        if unknown:
            raise FormatError(f"unknown setting {sorted(unknown)[0]!r}", path=args.config)
        eff.update(file_vals)
    for key in eff:
        flag = getattr(args, key, None)
        if flag is not None:
            eff[key] = flag
    eff["command"] = args.command
    return eff


def _require(eff, *keys):
    for key in keys:
        if eff.get(key) is None:
            raise ValueError(f"missing required setting --{key.replace('_', '-')}")


def cmd_simulate(eff) -> int:
    if eff["spec"]:
        spec = sim.NetworkSpec.load(eff["spec"])
    else:
        spec = sim.load_preset(eff["preset"])
    result = sim.simulate_experiment(spec, seed=eff["seed"],
                                     num_bins=eff["bins"], tau=eff["tau"])
    out = Path(eff["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "train.csv"
    truth_path = out / "truth.json"
    dataio.write_spike_csv(result.train, train_path)
    seed = eff["seed"] if eff["seed"] is not None else spec.seed
    dataio.write_model(truth_path, result.params, kernels=result.kernels,
                       activity=result.activity, prior_shape=spec.prior_shape,
                       prior_scale=spec.prior_scale,
                       config={**eff, "network": spec.to_dict()}, seed=seed)
    print(f"wrote {train_path} ({result.train.num_bins} bins x "
          f"{result.train.num_neurons} neurons) and {truth_path}")
    print("spikes per neuron:", " ".join(str(int(s)) for s in result.stats.spikes_per_neuron))
    print(f"max tau*intensity: {result.stats.max_bin_prob:.4f} "
          f"({result.stats.violations} cells >= 1, "
          f"{100 * result.stats.violation_frac:.2f}%)")
    return 0


def _load_gamma(eff, train):
    """Resolve the latent-kernel source; returns (kernels, doc_or_None)."""
    source = eff["gamma"]
    C = train.num_neurons
    if source == "zero":
        I = eff["I"] if eff["I"] is not None else 1
        M = eff["M"] if eff["M"] is not None else 1
        return np.zeros((C, I, M)), None
    if source == "from-truth":
        path = Path(eff["train"]).parent / "truth.json"
        if not path.exists():
            raise ValueError(f"--gamma from-truth: {path} not found")
    else:
        path = Path(source)
    doc = dataio.read_model(path)
    if doc.kernels is None:
        raise ValueError(f"{path} carries no latent kernels table")
    return doc.kernels, doc


def cmd_fit(eff) -> int:
    _require(eff, "train")
    train = dataio.read_spike_csv(eff["train"])
    kernels, doc = _load_gamma(eff, train)
    if kernels.shape[0] != train.num_neurons:
        raise ValueError(f"kernels are for {kernels.shape[0]} neurons, "
                         f"train has {train.num_neurons}")
    I, M = kernels.shape[1], kernels.shape[2]
    if eff["I"] is not None and eff["I"] != I:
        raise ValueError(f"--I {eff['I']} conflicts with kernels table (I={I})")
    if eff["M"] is not None and eff["M"] != M:
        raise ValueError(f"--M {eff['M']} conflicts with kernels table (M={M})")
    Q = eff["Q"] if eff["Q"] is not None else (doc.params.history_lags if doc else 0)
    R = eff["R"] if eff["R"] is not None else (doc.params.coupling_lags if doc else 0)
    prior_shape = eff["prior_shape"] if eff["prior_shape"] is not None else \
        (doc.prior_shape if doc and doc.prior_shape is not None else 50.0)
    prior_scale = eff["prior_scale"] if eff["prior_scale"] is not None else \
        (doc.prior_scale if doc and doc.prior_scale is not None else 1.0)
    config = FitConfig(history_lags=Q, coupling_lags=R, latent_lags=M, n_latents=I,
                       relaxation=eff["l"], em_max_iters=eff["em_max_iters"],
                       inner_max_iters=eff["inner_max_iters"], em_tol=eff["em_tol"],
                       inner_tol=eff["inner_tol"], seed=eff["seed"],
                       threads=eff["threads"])
    eff = {**eff, "Q": Q, "R": R, "I": I, "M": M,
           "prior_shape": prior_shape, "prior_scale": prior_scale}

    result = fit_em(train, kernels, config, prior_shape, prior_scale)
    out = Path(eff["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    trace_path = out / "trace.csv"
    dataio.write_model(model_path, result.params, kernels=kernels,
                       activity=result.latents.activity, prior_shape=prior_shape,
                       prior_scale=prior_scale, report=result.report,
                       config=eff, seed=config.seed)
    dataio.write_trace_csv(trace_path, result.report.ll_trace,
                           result.report.penalized_trace)
    print(f"wrote {model_path} and {trace_path}")
    print(f"final log-likelihood (with latent inputs): {result.report.final_ll:.6f} "
          f"({result.report.em_iters} EM iterations, "
          f"converged={result.report.converged})")

    if not eff["no_baseline"]:
        base = fit_without_latents(train, config, prior_scale=prior_scale,
                                   sweep_schedule=result.report.m_sweeps)
        base_trace = out / "baseline_trace.csv"
        base_model = out / "baseline_model.json"
        dataio.write_trace_csv(base_trace, base.report.ll_trace,
                               base.report.penalized_trace)
        dataio.write_model(base_model, base.params, report=base.report,
                           config={**eff, "baseline": True}, seed=config.seed)
        print(f"wrote {base_model} and {base_trace}")
        print(f"final log-likelihood (no latent inputs):  {base.report.final_ll:.6f}")
        print(f"likelihood gap: {result.report.final_ll - base.report.final_ll:.6f}")

    lat_pinned = int((~result.report.latent_free).sum())
    lat_total = result.report.latent_free.size
    glm_pinned = int((~result.report.glm_free).sum())
    glm_total = result.report.glm_free.size
    print(f"identifiability: {lat_total - lat_pinned}/{lat_total} latent entries free"
          + (f" ({lat_pinned} held at zero: no data support)" if lat_pinned else ""))
    print(f"identifiability: {glm_total - glm_pinned}/{glm_total} GLM slots free"
          + (f" ({glm_pinned} held at zero: covariate never co-occurs with a spike; "
             f"consider rebinning to a larger bin width)" if glm_pinned else ""))
    return 0


def cmd_eval(eff) -> int:
    _require(eff, "model", "train")
    doc = dataio.read_model(eff["model"])
    train = dataio.read_spike_csv(eff["train"])
    if doc.params.num_neurons != train.num_neurons:
        raise ValueError(f"model is for {doc.params.num_neurons} neurons, "
                         f"train has {train.num_neurons}")
    latents = None
    if doc.kernels is not None and doc.activity is not None:
        if doc.activity.shape[1] != train.num_bins:
            raise ValueError(f"model activities cover {doc.activity.shape[1]} bins, "
                             f"train has {train.num_bins}")
        latents = LatentInputs(doc.kernels, doc.activity,
                               doc.prior_shape or 50.0, doc.prior_scale or 1.0)
    total = log_likelihood(doc.params, latents, train)
    log_lam = history_log_intensity(doc.params, train)
    if latents is not None:
        log_lam = log_lam + latent_log_intensity(latents.kernels, latents.activity)
    per_neuron = ((train.counts.T * log_lam).sum(axis=1)
                  - train.tau * np.exp(log_lam).sum(axis=1))
    print(f"log-likelihood: {total!r}")
    for c, v in enumerate(per_neuron):
        print(f"  neuron {c}: {float(v)!r}")
    return 0


def cmd_rebin(eff) -> int:
    _require(eff, "train", "factor", "out")
    train = dataio.read_spike_csv(eff["train"])
    rebinned, partial = dataio.rebin(train, eff["factor"])
    dataio.write_spike_csv(rebinned, eff["out"])
    print(f"wrote {eff['out']}: {train.num_bins} bins -> {rebinned.num_bins} "
          f"(tau {train.tau!r} -> {rebinned.tau!r}), "
          f"{rebinned.total_spikes} spikes conserved"
          + (", trailing partial group kept" if partial else ""))
    return 0


_COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit,
             "eval": cmd_eval, "rebin": cmd_rebin}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        eff = _effective(args)
        return _COMMANDS[args.command](eff)
    except (ValueError, FormatError, GenerationError, NumericRangeError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
