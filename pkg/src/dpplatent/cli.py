"""Command-line entry point: ``dpplatent <subcommand> [options]``.

Subcommands
-----------
simulate      write synthetic data and the truth behind it
fit-mixture   run mixture chains, one trace per chain
fit-features  run feature-allocation chains
sample-prior  prior-only chains, or exact draws from a finite kernel
summarize     pool traces of a run and write summary tables

Exit status is 0 on success, 1 on usage errors and 2 on data or
configuration errors. Messages go to standard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import os
import sys

import numpy as np

from .dpp import sample_finite_dpp
from .featalloc import fit_features, random_feature_matrix, simulate_feature_data
from .io import (
    U64_MAX,
    ConfigError,
    DataFormatError,
    RunConfig,
    load_config,
    read_matrix_csv,
    serialize_config,
    write_matrix_csv,
)
from .mixture import fit_mixture, simulate_mixture_data
from .summarize import (
    coclustering_matrix,
    density_on_grid,
    feature_point_estimate,
    k_distribution,
    k_mode,
    point_estimate_partition,
)
from .trace import PosteriorTrace, TraceFormatError, atomic_write_text, read_trace, write_trace

__all__ = ["main", "chain_rngs", "chain_dir"]

TRACE_NAME = "trace.ndjson"
CONFIG_NAME = "config.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _u64(text):
    v = int(text)
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpplatent", description="Repulsive DPP priors for mixtures and feature allocation.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="run configuration file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")

    p = sub.add_parser("simulate", help="write synthetic data and truth files")
    common(p, False)

    for name, model in (("fit-mixture", "mixture"), ("fit-features", "features")):
        p = sub.add_parser(name, help=f"fit the {model} model")
        common(p, True)
        p.add_argument("--data", help="CSV data file (overrides the config)")
        p.add_argument("--prior-only", action="store_true", help="drop the likelihood")
        if model == "features":
            p.add_argument("--fixed-k", type=_positive_int, help="fix the number of features")

    p = sub.add_parser("sample-prior", help="prior-only chains, or exact finite-DPP draws")
    common(p, False)
    p.add_argument("--kernel", help="CSV kernel matrix; draw exact finite-DPP samples from it")
    p.add_argument("--draws", type=_positive_int, default=1000, help="number of finite-DPP draws")
    p.add_argument("--fixed-k", type=_positive_int, help="fix the number of features (features model)")

    p = sub.add_parser("summarize", help="summarize the traces of a run")
    p.add_argument("run_dir", help="directory holding chain-<idx>/trace.ndjson")
    p.add_argument("--out", help="output directory (default: <run_dir>/summary)")
    p.add_argument("--data", help="data CSV, for beta_hat of feature runs (default: from the run config)")
    p.add_argument("--per-chain", action="store_true", help="also summarize each chain separately")
    p.add_argument("--grid-size", type=_positive_int, default=200, help="density grid points per dimension")
    return parser


# -- helpers -------------------------------------------------------------------------


def chain_rngs(seed: int, chains: int):
    """Independent generators per chain, a pure function of (seed, index)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chains)]


def chain_dir(out, idx: int) -> str:
    return os.path.join(out, f"chain-{idx}")


def _resolve(args, config: RunConfig | None) -> RunConfig | None:
    if config is None:
        return None
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out"] = args.out
    if getattr(args, "data", None):
        changes["data"] = args.data
    return config.replace(**changes) if changes else config


def _out_dir(args, config):
    out = (config.out if config is not None else None) or getattr(args, "out", None)
    if not out:
        raise UsageError("no output directory: pass --out or set 'out' in the config")
    return out


def _run_chains(config: RunConfig, data, prior_only: bool, out: str):
    fit = fit_mixture if config.model == "mixture" else fit_features
    traces = []
    for idx, rng in enumerate(chain_rngs(config.seed, config.chains)):
        if config.model == "mixture":
            trace = fit(data, config.prior, config.schedule, rng, prior_only=prior_only, seed=config.seed,
                        dim=None if data is not None else 1)
        else:
            trace = fit(data, config.prior, config.schedule, rng, prior_only=prior_only, seed=config.seed)
        trace.meta["chain"] = idx
        write_trace(os.path.join(chain_dir(out, idx), TRACE_NAME), trace)
        traces.append(trace)
    atomic_write_text(os.path.join(out, CONFIG_NAME), serialize_config(config))
    return traces


def _write_k_histogram(path, trace):
    pmf = k_distribution(trace)
    rows = [f"{k},{p!r}" for k, p in enumerate(pmf.tolist())]
    atomic_write_text(path, "K,probability\n" + "\n".join(rows) + "\n")


def _write_report(path, items):
    atomic_write_text(path, "".join(f"{k} = {v}\n" for k, v in items))


def _pool(traces):
    pooled = traces[0]
    for t in traces[1:]:
        pooled = pooled.concat(t)
    return pooled


# -- subcommands ---------------------------------------------------------------------


def _cmd_simulate(args):
    config = _resolve(args, load_config(args.config)) if args.config else None
    out = _out_dir(args, config)
    model = config.model if config else "mixture"
    extra = dict(config.extra) if config else {}
    rng = np.random.default_rng(config.seed if config else (args.seed or 0))
    if model == "mixture":
        means = extra.get("means", [-3.0, 0.0, 3.0])
        sds = extra.get("sds", [0.5] * len(means))
        weights = extra.get("weights", [1.0 / len(means)] * len(means))
        if not len(means) == len(sds) == len(weights):
            raise ConfigError("simulate.means, simulate.sds and simulate.weights must have equal lengths")
        y, labels = simulate_mixture_data(means, sds, weights, extra.get("n", 300), rng)
        write_matrix_csv(os.path.join(out, "data.csv"), y, header=[f"y{d + 1}" for d in range(y.shape[1])])
        write_matrix_csv(os.path.join(out, "truth_labels.csv"), labels, header=["label"])
    else:
        n, S, K = extra.get("n", 100), extra.get("S", 50), extra.get("K", 3)
        Z = random_feature_matrix(n, K, rng)
        beta = rng.standard_normal((K, S))
        Y = simulate_feature_data(Z, beta, extra.get("sigma", 0.5), rng)
        write_matrix_csv(os.path.join(out, "data.csv"), Y, header=[f"y{j + 1}" for j in range(S)])
        write_matrix_csv(os.path.join(out, "truth_Z.csv"), Z, header=[f"z{k + 1}" for k in range(K)])
        write_matrix_csv(os.path.join(out, "truth_beta.csv"), beta, header=[f"y{j + 1}" for j in range(S)])
    print(f"wrote {model} data to {out}", file=sys.stderr)
    return 0


def _cmd_fit(args, model):
    config = _resolve(args, load_config(args.config))
    if config.model != model:
        raise ConfigError(f"model: config is for {config.model!r}, but the subcommand fits {model!r}")
    if getattr(args, "fixed_k", None) is not None:
        config = config.replace(prior=_with_fixed_k(config.prior, args.fixed_k))
    out = _out_dir(args, config)
    data = None
    if config.data is None:
        if not args.prior_only or model == "features":
            raise ConfigError("data: no dataset given (set 'data' or pass --data)")
    else:
        data = read_matrix_csv(config.data)
    if model == "features" and data is None:
        raise ConfigError("data: the features model needs Y (its shape) even with --prior-only")
    traces = _run_chains(config, data, args.prior_only, out)
    print(f"wrote {len(traces)} chain(s) to {out}", file=sys.stderr)
    return 0


def _with_fixed_k(prior, k):
    try:
        return dataclasses.replace(prior, fixed_K=k)
    except ValueError as exc:
        raise ConfigError(f"--fixed-k: {exc}") from None


def _cmd_sample_prior(args):
    if args.kernel:
        config = _resolve(args, load_config(args.config)) if args.config else None
        out = _out_dir(args, config)
        C = read_matrix_csv(args.kernel)
        if C.shape[0] != C.shape[1]:
            raise DataFormatError(f"{args.kernel}: kernel must be square, got {C.shape}")
        seed = config.seed if config else (args.seed or 0)
        draws = sample_finite_dpp(C, np.random.default_rng(seed), size=args.draws)
        lines = [" ".join(str(i + 1) for i in A) for A in draws]
        atomic_write_text(os.path.join(out, "samples.txt"), "\n".join(lines) + "\n")
        sizes = np.bincount([len(A) for A in draws], minlength=C.shape[0] + 1) / len(draws)
        rows = [f"{k},{p!r}" for k, p in enumerate(sizes.tolist())]
        atomic_write_text(os.path.join(out, "k_histogram.csv"), "K,probability\n" + "\n".join(rows) + "\n")
        print(f"wrote {len(draws)} draws to {out}", file=sys.stderr)
        return 0
    if not args.config:
        raise UsageError("sample-prior needs --config (prior-only chains) or --kernel (finite draws)")
    config = _resolve(args, load_config(args.config))
    if args.fixed_k is not None:
        if config.model != "features":
            raise UsageError("--fixed-k applies to the features model only")
        config = config.replace(prior=_with_fixed_k(config.prior, args.fixed_k))
    out = _out_dir(args, config)
    data = None
    if config.model == "features":
        if config.data is None:
            raise ConfigError("data: the features model needs Y (its shape) even for prior draws")
        data = read_matrix_csv(config.data)
    traces = _run_chains(config, data, True, out)
    _write_k_histogram(os.path.join(out, "k_histogram.csv"), _pool(traces))
    print(f"wrote {len(traces)} prior chain(s) to {out}", file=sys.stderr)
    return 0


def _density_grid(trace, size):
    meta = trace.meta
    loc = np.asarray(meta.get("loc", [0.0]), dtype=float)
    scale = np.asarray(meta.get("scale", [1.0]), dtype=float)
    axes = [np.linspace(l - 4.0 * s, l + 4.0 * s, size) for l, s in zip(loc, scale)]
    if len(axes) == 1:
        return axes[0][:, None]
    g = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([a.ravel() for a in g])


def _summarize_one(trace: PosteriorTrace, out, args, config):
    pmf = k_distribution(trace)
    _write_k_histogram(os.path.join(out, "k_histogram.csv"), trace)
    report = [("model", trace.model), ("samples", len(trace)), ("K_hat", k_mode(pmf))]
    if trace.model == "mixture":
        write_matrix_csv(os.path.join(out, "coclustering.csv"), coclustering_matrix(trace))
        part, idx = point_estimate_partition(trace, return_index=True)
        write_matrix_csv(os.path.join(out, "partition.csv"), part, header=["label"])
        report += [("partition_sample", idx), ("partition_K", int(np.unique(part).size))]
        D = np.asarray(trace.samples[0]["means"]).shape[1]
        if D <= 2:
            grid = _density_grid(trace, args.grid_size)
            dens = density_on_grid(trace, grid)
            header = [f"x{d + 1}" for d in range(D)] + ["density"]
            write_matrix_csv(os.path.join(out, "density_grid.csv"), np.column_stack([grid, dens]), header=header)
    else:
        data_path = args.data or (config.data if config else None)
        Y = read_matrix_csv(data_path) if data_path else None
        Z, beta, idx = feature_point_estimate(trace, Y)
        write_matrix_csv(os.path.join(out, "z_hat.csv"), Z, header=[f"z{k + 1}" for k in range(Z.shape[1])])
        write_matrix_csv(os.path.join(out, "beta_hat.csv"), beta,
                         header=[f"y{j + 1}" for j in range(beta.shape[1])])
        report += [("z_hat_sample", idx), ("z_hat_K", Z.shape[1]),
                   ("beta_hat", "conditional mean" if Y is not None else "sampled value")]
    _write_report(os.path.join(out, "summary.txt"), report)


def _cmd_summarize(args):
    paths = sorted(glob.glob(os.path.join(args.run_dir, "chain-*", TRACE_NAME)),
                   key=lambda p: int(os.path.basename(os.path.dirname(p)).split("-", 1)[1]))
    if not paths:
        raise ConfigError(f"{args.run_dir}: no chain-<idx>/{TRACE_NAME} files")
    cfg_path = os.path.join(args.run_dir, CONFIG_NAME)
    config = load_config(cfg_path) if os.path.exists(cfg_path) else None
    traces = [read_trace(p) for p in paths]
    if len({t.model for t in traces}) != 1:
        raise ConfigError(f"{args.run_dir}: chains of different models")
    out = args.out or os.path.join(args.run_dir, "summary")
    _summarize_one(_pool(traces), out, args, config)
    if args.per_chain:
        for p, t in zip(paths, traces):
            _summarize_one(t, os.path.join(out, os.path.basename(os.path.dirname(p))), args, config)
    print(f"wrote summary of {len(traces)} chain(s) to {out}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "dpplatent: error: a subcommand is required")
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "fit-mixture":
            return _cmd_fit(args, "mixture")
        if args.command == "fit-features":
            return _cmd_fit(args, "features")
        if args.command == "sample-prior":
            return _cmd_sample_prior(args)
        return _cmd_summarize(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ConfigError, DataFormatError, TraceFormatError, ValueError, OSError) as exc:
        print(f"dpplatent: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
