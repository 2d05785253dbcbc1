"""Command-line pipeline: ``gfa run | predict | robust | report | experiment-fig1``.

Configuration is a flat TOML file. Every key is listed in
:data:`CONFIG_KEYS` (plus the :class:`~gfa.model.ModelOptions` fields);
anything else is rejected. Relative paths are resolved against the config
file's directory. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data_model import (
    DataBlock,
    MultiViewData,
    read_dataset,
    safe_name,
    validate,
    write_dataset,
    write_matrix,
)
from .errors import ConfigError, DataError, GFAError, NumericalError
from .experiments import DEFAULT_GRID, run_fig1
from .model import ModelOptions, default_options, informative_noise_prior
from .predict import PredictiveSummary, predict_new_samples, prediction_batch, reconstruction
from .preprocess import apply_normalization, normalize
from .report import DEFAULT_ACTIVITY_THRESHOLD, export_visualization
from .robust import robust_components
from .sampler import run_chains
from .store import dump_json, find_chain_dirs, load_samples, save_samples

logger = logging.getLogger("gfa")

OPTION_KEYS = tuple(f.name for f in dataclasses.fields(ModelOptions))

# non-option keys with their defaults
CONFIG_KEYS = {
    "row_paired": [],
    "column_paired": [],
    "normalization": "center",
    "bicluster": False,
    "chains": 1,
    "jobs": 1,
    "out": None,
    "signal_proportion": None,
    "noise_confidence": 1.0,
    # predict
    "run_dir": None,
    "new_row_paired": [],
    "new_column_paired": [],
    "truth_row_paired": [],
    "truth_column_paired": [],
    "point_estimate": True,
    "use_mean_W": False,
    # robust
    "runs": [],
    "cor_thr": 0.9,
    "match_thr": 0.5,
    "all_references": False,
    # report
    "chain": 0,
    "activity_threshold": DEFAULT_ACTIVITY_THRESHOLD,
    # experiment-fig1
    "grid": list(DEFAULT_GRID),
    "folds": 5,
    "n": 100,
    "dims": [40, 30, 20],
    "noise_sd": 1.0,
    "holdout_block": 0,
}
PATH_KEYS = ("row_paired", "column_paired", "new_row_paired", "new_column_paired",
             "truth_row_paired", "truth_column_paired", "runs", "run_dir", "out")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def load_config(path=None) -> dict:
    """Read a config file into a dict of all known keys (defaults filled in)."""
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = path.resolve().parent
    unknown = sorted(set(raw) - set(CONFIG_KEYS) - set(OPTION_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in CONFIG_KEYS.items()}
    cfg.update(raw)
    for key in PATH_KEYS:
        v = cfg[key]
        if isinstance(v, list):
            cfg[key] = [str((base / p).resolve()) for p in v]
        elif v is not None:
            cfg[key] = str((base / v).resolve())
    cfg["_options"] = {k: raw[k] for k in OPTION_KEYS if k in raw}
    return cfg


def options_to_config(options: ModelOptions) -> str:
    """TOML text holding every option field; :func:`load_config` reads it back."""
    return tomli_w.dumps(options.to_dict())


def options_from_config(cfg: dict, data: MultiViewData) -> ModelOptions:
    """Defaults for ``data`` overridden by the option keys present in ``cfg``."""
    overrides = dict(cfg["_options"])
    if cfg.get("signal_proportion") is not None:
        a, b = informative_noise_prior(data, cfg["signal_proportion"], cfg["noise_confidence"])
        overrides.setdefault("a_tau", a)
        overrides.setdefault("b_tau", b)
    return default_options(data, bicluster=cfg["bicluster"], **overrides)


def _apply_flags(cfg: dict, args) -> dict:
    if getattr(args, "out", None):
        cfg["out"] = str(Path(args.out).resolve())
    if getattr(args, "seed", None) is not None:
        cfg["_options"]["seed"] = args.seed
    if getattr(args, "chains", None) is not None:
        cfg["chains"] = args.chains
    return cfg


def _require(cfg, key, why):
    if not cfg.get(key):
        raise ConfigError(f"{key} is required {why}")


def _out_dir(cfg) -> Path:
    _require(cfg, "out", "(use --out or the 'out' key)")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_files(paths):
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"input file not found: {p}")


def _write_table(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _training_data(cfg) -> MultiViewData:
    _require(cfg, "row_paired", "to read the input blocks")
    _check_files(cfg["row_paired"] + cfg["column_paired"])
    return read_dataset(cfg["row_paired"], cfg["column_paired"])


# --------------------------------------------------------------------------- commands

def cmd_run(cfg: dict) -> Path:
    """Ingest, normalize, sample ``chains`` chains and persist everything."""
    out = _out_dir(cfg)
    if cfg["chains"] < 1:
        raise ConfigError("chains must be >= 1")
    data = _training_data(cfg)
    report = validate(data)
    normalized, record = normalize(data, cfg["normalization"])
    options = options_from_config(cfg, normalized)
    logger.info("running %d chain(s) with K_init=%d", cfg["chains"], options.K_init)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        chains = run_chains(normalized, options, cfg["chains"], options.seed, record, jobs=cfg["jobs"])
    summaries = []
    for i, samples in enumerate(chains):
        name = f"chain_{i:03d}"
        save_samples(samples, out / name)
        summaries.append({
            "dir": name, "seed": samples.seed, "K_init": samples.K_init, "K_active": samples.K_active,
            "empty_components": samples.empty_components, "geweke_z": samples.geweke_z,
            "pruned": [e.component for e in samples.pruning], "warnings": list(samples.warnings),
        })
        for msg in samples.warnings:
            logger.warning("chain %d: %s", i, msg)
    (out / "config.toml").write_text(tomli_w.dumps(_effective_config(cfg, options)))
    manifest = {
        "inputs": {"row_paired": cfg["row_paired"], "column_paired": cfg["column_paired"]},
        "labels": list(data.labels), "dims": list(data.dims), "n_samples": data.n_samples,
        "missing_counts": report.missing_counts,
        "constant_features": [list(x) for x in report.constant_features],
        "normalization": record.to_dict(), "options": options.to_dict(), "chains": summaries,
    }
    dump_json(manifest, out / "run_manifest.json")
    return out


def _effective_config(cfg, options):
    keep = {k: cfg[k] for k in ("row_paired", "column_paired", "normalization", "chains")}
    keep.update(options.to_dict())
    return keep


def _load_run(run_dir):
    run_dir = Path(run_dir)
    if not run_dir.exists():
        raise DataError(f"trained run directory not found: {run_dir}")
    return [load_samples(d) for d in find_chain_dirs(run_dir)]


def _run_config(run_dir) -> dict:
    path = Path(run_dir) / "config.toml"
    if not path.is_file():
        raise DataError(f"{run_dir} has no config.toml; was it written by 'gfa run'?")
    return load_config(path)


def _write_predictions(out: Path, summary: PredictiveSummary, template: MultiViewData):
    write_dataset(template, out, summary.mean, suffix="_mean")
    write_dataset(template, out, summary.sd, suffix="_sd")


def _heldout_metrics(pred: PredictiveSummary, inputs: MultiViewData, truth: MultiViewData, baseline_means):
    metrics = {}
    for m, b in enumerate(inputs.blocks):
        if b.label not in truth.labels:
            continue
        tb = truth.block(b.label)
        if tb.shape != b.shape:
            raise DataError(f"truth block {b.label!r} has shape {tb.shape}, expected {b.shape}")
        held = ~b.mask & tb.mask
        if not held.any():
            continue
        err = np.abs(pred.mean[m][held] - tb.values[held])
        base = np.abs(np.broadcast_to(baseline_means[m], b.shape)[held] - tb.values[held])
        metrics[b.label] = {"n": int(held.sum()), "mae": float(err.mean()), "baseline_mae": float(base.mean())}
    return metrics


def cmd_predict(cfg: dict) -> Path:
    """Reconstruct the training data or predict a new batch with fixed projections."""
    out = _out_dir(cfg)
    _require(cfg, "run_dir", "(use --run or the 'run_dir' key)")
    chains = _load_run(cfg["run_dir"])
    train_cfg = _run_config(cfg["run_dir"])
    train = _training_data(train_cfg)
    record = chains[0].normalization
    new_paths = cfg["new_row_paired"] + cfg["new_column_paired"]
    if new_paths:
        _check_files(new_paths)
        given = read_dataset(cfg["new_row_paired"], cfg["new_column_paired"], strict=False)
        observed = {}
        for b in given.blocks:
            if b.label not in train.labels:
                raise DataError(f"new block {b.label!r} is not one of the trained blocks {train.labels}")
            m = train.labels.index(b.label)
            if b.shape[1] != train.dims[m]:
                raise DataError(f"new block {b.label!r} has {b.shape[1]} features, trained with {train.dims[m]}")
            observed[b.label] = (b.values - record.means[m]) / record.scale(m)
        batch = prediction_batch(chains, observed, sample_names=given.sample_names)
        summary = predict_new_samples(chains, batch, point_estimate=cfg["point_estimate"],
                                      use_mean_W=cfg["use_mean_W"], seed=chains[0].seed)
        template = _template(train, batch, summary)
        inputs = template.with_values([np.where(b.mask, b.values * record.scale(m) + record.means[m], np.nan)
                                       for m, b in enumerate(batch.blocks)])
    else:
        summary = reconstruction(chains)
        template = train
        inputs = train
    _write_predictions(out, summary, template)
    truth_paths = cfg["truth_row_paired"] + cfg["truth_column_paired"]
    if truth_paths:
        _check_files(truth_paths)
        truth = read_dataset(cfg["truth_row_paired"], cfg["truth_column_paired"], strict=False)
        means = [np.nanmean(np.where(b.mask, b.values, np.nan), axis=0) for b in train.blocks]
        dump_json(_heldout_metrics(summary, inputs, truth, means), out / "heldout_metrics.json")
    return out


def _template(train: MultiViewData, batch: MultiViewData, summary) -> MultiViewData:
    """Batch-shaped dataset carrying the training orientation and names, for writing."""
    blocks = [DataBlock(t.label, v, t.feature_names, batch.sample_names, t.transposed)
              for t, v in zip(train.blocks, summary.mean)]
    return MultiViewData(tuple(blocks))


def cmd_robust(cfg: dict) -> Path:
    """Match components across the chains of several runs."""
    out = _out_dir(cfg)
    if len(cfg["runs"]) < 2:
        raise ConfigError("robust needs at least 2 run directories")
    chains = []
    for r in cfg["runs"]:
        chains.extend(_load_run(r))
    result = robust_components(chains, cfg["cor_thr"], cfg["match_thr"], cfg["all_references"])
    first = chains[0]
    for i, rs in enumerate(result.sets):
        for m, lab in enumerate(first.labels):
            write_matrix(out / f"set_{i:02d}_{safe_name(lab)}.csv", rs.effect[m], first.sample_names,
                         first.feature_names[m] if first.feature_names else None)
    report = result.to_dict()
    report["runs"] = cfg["runs"]
    dump_json(report, out / "robust_manifest.json")
    return out


def cmd_report(cfg: dict) -> Path:
    """Export component activity, parameters and effects of one chain."""
    out = _out_dir(cfg)
    _require(cfg, "run_dir", "(use --run or the 'run_dir' key)")
    chains = _load_run(cfg["run_dir"])
    if not 0 <= cfg["chain"] < len(chains):
        raise ConfigError(f"chain {cfg['chain']} out of range; the run has {len(chains)} chain(s)")
    samples = chains[cfg["chain"]]
    data = apply_normalization(_training_data(_run_config(cfg["run_dir"])), samples.normalization)
    export_visualization(samples, data, out, cfg["activity_threshold"])
    return out


def cmd_experiment_fig1(cfg: dict) -> Path:
    """Predictive performance and empty components as a function of initial K."""
    out = _out_dir(cfg)
    opts = dict(cfg["_options"])
    opts.pop("K_init", None)
    seed = opts.pop("seed", 0)
    table, folds = run_fig1(grid=[int(k) for k in cfg["grid"]], folds=cfg["folds"], n=cfg["n"],
                            dims=tuple(cfg["dims"]), noise_sd=cfg["noise_sd"],
                            holdout_block=cfg["holdout_block"], seed=seed, **opts)
    _write_table(out / "fig1_table.csv", ["K_init", "spearman", "empty_components"],
                 [[g.K_init, repr(g.spearman), repr(g.empty_components)] for g in table])
    _write_table(out / "fig1_folds.csv", ["K_init", "fold", "spearman", "empty_components", "K_active"],
                 [[r.K_init, r.fold, repr(r.spearman), r.empty_components, r.K_active] for r in folds])
    return out


COMMANDS = {
    "run": cmd_run,
    "predict": cmd_predict,
    "robust": cmd_robust,
    "report": cmd_report,
    "experiment-fig1": cmd_experiment_fig1,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfa", description="Group factor analysis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--chains", type=int, help="number of chains")
        p.add_argument("--verbose", action="store_true")
        if name in ("predict", "report"):
            p.add_argument("--run", help="trained run directory")
        if name == "robust":
            p.add_argument("--runs", nargs="+", help="run or chain directories")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_flags(load_config(args.config), args)
        if getattr(args, "run", None):
            cfg["run_dir"] = str(Path(args.run).resolve())
        if getattr(args, "runs", None):
            cfg["runs"] = [str(Path(r).resolve()) for r in args.runs]
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be non-negative")
        out = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"gfa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"gfa: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, GFAError) as exc:
        print(f"gfa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
