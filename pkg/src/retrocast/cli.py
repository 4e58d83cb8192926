"""Command-line entry point.

Subcommands: train, evaluate, gridsearch, ablate, stride, diagnose, synth,
similarity-study, training-length-study, rare-pattern-study.

Precedence: built-in defaults < config file (--config) < explicit flags.
Every run writes a manifest.json recording the command, arguments, config,
dataset digest, seeds, version string, and wall times. Wall times live
only in manifests and *_timings.csv files; metric CSVs contain none, so
reruns with identical config and seeds reproduce them byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cache import CacheMismatchError, patches_for_starts, precompute
from .config import VARIANTS, ExperimentConfig
from .harness import (
    GridSpace,
    MetricReport,
    RunResult,
    _eval_windows,
    diagnostics,
    evaluate,
    grid_search,
    prepare_dataset,
    rare_pattern_study,
    resolve_split,
    run_ablation,
    run_single,
    similarity_study,
    stride_study,
    training_length_study,
)
from .model import load_checkpoint, save_checkpoint
from .retrieval import METRIC_KINDS, RetrievalParams, SimilarityMetric, build_index
from .series import CsvSchema, TimeSeries, load_csv, write_csv
from .synthetic import PATTERN_KINDS, SyntheticSpec, assemble, write_annotations

__all__ = ["main"]

# checkpoint fields adopted from the checkpoint itself during evaluate;
# everything else in the fingerprint must match the evaluate-time config
_ADOPTED_KEYS = (
    "lookback", "horizon", "seed", "learning_rate", "batch_size",
    "max_epochs", "patience", "optimizer",
)

# flag dest -> ExperimentConfig field
_FLAG_FIELDS = {
    "dataset": "data_path",
    "dataset_name": "dataset_name",
    "split": "split",
    "target": "target",
    "lookback": "lookback",
    "horizon": "horizon",
    "periods": "periods",
    "m": "m",
    "tau": "tau",
    "metric": "metric",
    "channel_reduce": "channel_reduce",
    "embed_dim": "embed_dim",
    "stride": "stride",
    "lr": "learning_rate",
    "batch_size": "batch_size",
    "max_epochs": "max_epochs",
    "patience": "patience",
    "optimizer": "optimizer",
    "variant": "variant",
    "out": "out_dir",
    "jobs": "jobs",
}


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _csv_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _csv_strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _version_string() -> str:
    import subprocess

    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"retrocast-{__version__}+{out.stdout.strip()}"
    except Exception:
        pass
    return f"retrocast-{__version__}"


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, argv, cfg, dataset_info, seeds,
                    timing: dict, started: str) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": _version_string(),
        "config": None if cfg is None else cfg.to_dict(),
        "dataset": dataset_info,
        "seeds": list(seeds),
        "started_utc": started,
        "finished_utc": _utc_now(),
        "timing": timing,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows_csv(path: Path, columns, rows: list[dict]) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in
                             (row[c] for c in columns)])


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if getattr(args, "config", None) \
        else ExperimentConfig()
    overrides = {}
    for dest, fieldname in _FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[fieldname] = value
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    elif getattr(args, "seeds", None) is not None:
        overrides["seeds"] = tuple(args.seeds)
    if getattr(args, "no_retrieval", False):
        overrides["variant"] = "no_retrieval"
    cfg = cfg.override(**overrides)
    cfg.validate()
    return cfg


def _load_dataset(cfg: ExperimentConfig, args) -> tuple[TimeSeries, dict]:
    if not cfg.data_path:
        raise ValueError("invalid data_path: pass --dataset or set [data] data_path")
    ts_col = getattr(args, "timestamp_column", 0)
    schema = CsvSchema(
        timestamp_column=None if ts_col is not None and ts_col < 0 else ts_col,
        frequency=getattr(args, "frequency", "") or "",
    )
    series = load_csv(cfg.data_path, schema)
    info = {
        "path": str(cfg.data_path),
        "sha256": _sha256_file(cfg.data_path),
        "channels": list(series.channel_names),
        "n_steps": series.n_steps,
    }
    return series, info


def _run_fingerprint(cfg: ExperimentConfig, raw: TimeSeries, seed: int) -> dict:
    borders = resolve_split(cfg, raw.n_steps)
    values_digest = hashlib.sha256(
        np.ascontiguousarray(raw.values).tobytes()
        + repr(raw.values.shape).encode()
    ).hexdigest()[:32]
    return {
        "dataset_sha256": values_digest,
        "dataset_name": cfg.dataset_name,
        "target": cfg.target,
        "borders": list(borders),
        "lookback_overlap": cfg.lookback_overlap,
        "lookback": cfg.lookback,
        "horizon": cfg.horizon,
        "periods": list(cfg.periods),
        "stride": cfg.stride,
        "m": cfg.m,
        "tau": cfg.tau,
        "metric": cfg.metric,
        "channel_reduce": cfg.channel_reduce,
        "embed_dim": cfg.embed_dim,
        "variant": cfg.variant,
        "seed": seed,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "optimizer": cfg.optimizer,
    }


def _timing_of(result: RunResult) -> dict:
    return {
        "precompute_seconds": result.precompute_seconds,
        "train_seconds": result.train_seconds,
        "inference_seconds": result.inference_seconds,
        "epoch_seconds": list(result.history.epoch_seconds) if result.history else [],
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    seed = cfg.seeds[0]
    result = run_single(raw, cfg, seed=seed, variant=cfg.variant)
    out = _out_dir(cfg)
    fingerprint = _run_fingerprint(cfg, raw, seed)
    extra = {
        "fingerprint": fingerprint,
        "val_mse": result.val_mse,
        "epochs_run": result.epochs_run,
        "best_epoch": result.history.best_epoch,
    }
    save_checkpoint(out / "checkpoint.rc", result.model,
                    metric=result.retrieval_metric, extra=extra)
    history_rows = [
        {"epoch": i, "train_loss": tl, "val_loss": vl}
        for i, (tl, vl) in enumerate(
            zip(result.history.train_loss, result.history.val_loss)
        )
    ]
    _write_rows_csv(out / "history.csv", ("epoch", "train_loss", "val_loss"),
                    history_rows)
    with open(out / "fingerprint.json", "w") as fh:
        json.dump(fingerprint, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "train", argv, cfg, data_info, [seed],
                    _timing_of(result), started)
    print(f"train: val_mse={result.val_mse:.6f} test_mse={result.test_mse:.6f} "
          f"epochs={result.epochs_run} -> {out / 'checkpoint.rc'}")
    return 0


def cmd_evaluate(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    results = []
    timing = {}
    for ckpt_path in args.checkpoint:
        model, metric, extra = load_checkpoint(ckpt_path)
        saved = extra.get("fingerprint")
        if saved is None:
            raise ValueError(f"checkpoint {ckpt_path} carries no fingerprint")
        cfg_run = cfg.override(
            lookback=saved["lookback"], horizon=saved["horizon"],
            learning_rate=saved["learning_rate"], batch_size=saved["batch_size"],
            max_epochs=saved["max_epochs"], patience=saved["patience"],
            optimizer=saved["optimizer"],
        )
        cfg_run.validate()
        now = _run_fingerprint(cfg_run, raw, saved["seed"])
        mismatched = [
            key for key in saved
            if key not in _ADOPTED_KEYS and now.get(key) != saved[key]
        ]
        if mismatched:
            raise ValueError(
                f"checkpoint {ckpt_path} does not match this config; "
                f"differing fields: {', '.join(sorted(mismatched))}"
            )
        prepared = prepare_dataset(raw, cfg_run)
        variant = saved["variant"]
        starts = prepared.test.window_starts(cfg_run.lookback, cfg_run.horizon)
        cache = None
        live = None
        precompute_seconds = 0.0
        if variant != "no_retrieval":
            periods = (1,) if variant == "one_period" else cfg_run.periods
            index = build_index(prepared.train.as_series(), cfg_run.lookback,
                                cfg_run.horizon, cfg_run.stride, periods)
            rmetric = metric if metric is not None else SimilarityMetric(
                kind=cfg_run.metric, channel_reduce=cfg_run.channel_reduce,
                embed_dim=cfg_run.embed_dim,
            )
            rparams = RetrievalParams(
                m=cfg_run.m, tau=cfg_run.tau, metric=rmetric,
                selection="random" if variant == "random_retrieval" else "similarity",
                weighting="uniform" if variant in ("random_retrieval", "no_attention")
                else "softmax",
                seed=saved["seed"],
            )
            if rmetric.trainable:
                live = (index, rparams, False)
            else:
                t0 = time.perf_counter()
                cache = precompute(
                    index,
                    patches_for_starts(prepared.series, starts, cfg_run.lookback),
                    rparams, exclude_self=False,
                )
                precompute_seconds = time.perf_counter() - t0
        test_mse, test_mae, infer_s = _eval_windows(
            model, prepared.series, starts, cache, live
        )
        results.append(RunResult(
            dataset=cfg_run.dataset_name or "series",
            horizon=cfg_run.horizon, variant=variant, metric_kind=cfg_run.metric,
            seed=saved["seed"], lookback=cfg_run.lookback, m=cfg_run.m,
            stride=cfg_run.stride, learning_rate=saved["learning_rate"],
            val_mse=extra.get("val_mse", float("nan")),
            test_mse=test_mse, test_mae=test_mae,
            epochs_run=extra.get("epochs_run", 0),
            n_test_windows=int(starts.size),
            precompute_seconds=precompute_seconds, train_seconds=0.0,
            inference_seconds=infer_s,
        ))
        timing[str(ckpt_path)] = {
            "precompute_seconds": precompute_seconds,
            "inference_seconds": infer_s,
        }
    report = MetricReport(results=results)
    out = _out_dir(cfg)
    report.to_csv(out / "metrics.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "evaluate", argv, cfg, data_info,
                    sorted({r.seed for r in results}), timing, started)
    for r in results:
        print(f"evaluate: horizon={r.horizon} seed={r.seed} "
              f"test_mse={r.test_mse:.6f} test_mae={r.test_mae:.6f}")
    return 0


def cmd_gridsearch(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    space = GridSpace(
        learning_rates=args.grid_lrs or (1e-4, 1e-3, 1e-2),
        lookbacks=args.grid_lookbacks or (96, 192, 336, 720),
        ms=args.grid_ms or (1, 5, 10, 20),
    )
    result = grid_search(raw, cfg, space=space, seeds=cfg.seeds)
    out = _out_dir(cfg)
    grid_rows = [
        {"learning_rate": row["learning_rate"], "lookback": row["lookback"],
         "m": row["m"], "val_mse_mean": row["val_mse_mean"]}
        for row in result.table
    ]
    _write_rows_csv(out / "grid.csv",
                    ("learning_rate", "lookback", "m", "val_mse_mean"), grid_rows)
    with open(out / "best.json", "w") as fh:
        json.dump({
            "learning_rate": result.best["learning_rate"],
            "lookback": result.best["lookback"],
            "m": result.best["m"],
            "val_mse_mean": result.best["val_mse_mean"],
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    result.test_report.to_csv(out / "metrics.csv")
    result.test_report.timings_to_csv(out / "timings.csv")
    _write_manifest(out, "gridsearch", argv, cfg, data_info, cfg.seeds, {}, started)
    print(f"gridsearch: best lr={result.best['learning_rate']} "
          f"lookback={result.best['lookback']} m={result.best['m']} "
          f"val_mse={result.best['val_mse_mean']:.6f}")
    return 0


def cmd_ablate(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    variants = args.variants or VARIANTS
    report = run_ablation(raw, cfg, seeds=cfg.seeds, variants=tuple(variants))
    out = _out_dir(cfg)
    report.to_csv(out / "metrics.csv")
    report.timings_to_csv(out / "timings.csv")
    summary_rows = []
    for variant in variants:
        stats = report.mean(variant=variant)
        summary_rows.append({
            "variant": variant, "seeds": stats["n"],
            "test_mse_mean": stats["test_mse"], "test_mae_mean": stats["test_mae"],
        })
    _write_rows_csv(out / "summary.csv",
                    ("variant", "seeds", "test_mse_mean", "test_mae_mean"),
                    summary_rows)
    _write_manifest(out, "ablate", argv, cfg, data_info, cfg.seeds, {}, started)
    for row in summary_rows:
        print(f"ablate: {row['variant']}: test_mse={row['test_mse_mean']:.6f}")
    return 0


def cmd_stride(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    strides = args.strides or (1, 2, 4, 8)
    rows = stride_study(raw, cfg, strides=tuple(strides), seeds=cfg.seeds)
    out = _out_dir(cfg)
    _write_rows_csv(out / "stride_mse.csv",
                    ("stride", "test_mse_mean", "test_mae_mean", "seeds"),
                    [{k: r[k] for k in ("stride", "test_mse_mean", "test_mae_mean",
                                        "seeds")} for r in rows])
    _write_rows_csv(out / "stride_timings.csv",
                    ("stride", "precompute_seconds_mean"),
                    [{"stride": r["stride"],
                      "precompute_seconds_mean": r["precompute_seconds_mean"]}
                     for r in rows])
    _write_manifest(out, "stride", argv, cfg, data_info, cfg.seeds,
                    {str(r["stride"]): r["precompute_seconds_mean"] for r in rows},
                    started)
    for r in rows:
        print(f"stride {r['stride']}: test_mse={r['test_mse_mean']:.6f} "
              f"precompute={r['precompute_seconds_mean']:.2f}s")
    return 0


def cmd_diagnose(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    seed = cfg.seeds[0]
    result = diagnostics(raw, cfg, seed=seed)
    out = _out_dir(cfg)
    result.to_csv(out / "diagnostics.csv")
    with open(out / "diagnostics_summary.json", "w") as fh:
        json.dump({
            "n_records": len(result.records),
            "spearman_key_value": result.spearman_key_value,
            "spearman_value_gain": result.spearman_value_gain,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "diagnose", argv, cfg, data_info, [seed], {}, started)
    print(f"diagnose: n={len(result.records)} "
          f"spearman(key,value)={result.spearman_key_value:.4f} "
          f"spearman(value,gain)={result.spearman_value_gain:.4f}")
    return 0


def cmd_synth(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    spec_kwargs = {
        "pattern_kind": args.kind,
        "occurrences_per_pattern": args.occurrences,
        "seed": args.seed if args.seed is not None else 0,
    }
    if args.total_length is not None:
        spec_kwargs["total_length"] = args.total_length
    if args.pattern_length is not None:
        spec_kwargs["pattern_length"] = args.pattern_length
    if args.n_patterns is not None:
        spec_kwargs["n_distinct_patterns"] = args.n_patterns
    spec = SyntheticSpec(**spec_kwargs)
    series, annotations = assemble(spec)
    out = _out_dir(cfg)
    write_csv(series, out / "series.csv")
    write_annotations(annotations, out / "annotations.csv")
    _write_manifest(out, "synth", argv, None,
                    {"synthetic": vars(spec).copy() | {"rw_step_range":
                     list(spec.rw_step_range)}},
                    [spec.seed], {}, started)
    print(f"synth: {series.n_steps} steps, {len(annotations)} annotated spans "
          f"-> {out / 'series.csv'}")
    return 0


def cmd_similarity_study(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    kinds = args.metrics or METRIC_KINDS
    for kind in kinds:
        if kind not in METRIC_KINDS:
            raise ValueError(f"invalid metric: {kind!r}; choose from {METRIC_KINDS}")
    report = similarity_study(raw, cfg, kinds=tuple(kinds), seeds=cfg.seeds)
    out = _out_dir(cfg)
    report.to_csv(out / "metrics.csv")
    report.timings_to_csv(out / "timings.csv")
    summary_rows = []
    for kind in kinds:
        stats = report.mean(metric=kind)
        summary_rows.append({
            "metric": kind, "seeds": stats["n"],
            "test_mse_mean": stats["test_mse"], "test_mae_mean": stats["test_mae"],
        })
    _write_rows_csv(out / "summary.csv",
                    ("metric", "seeds", "test_mse_mean", "test_mae_mean"),
                    summary_rows)
    _write_manifest(out, "similarity-study", argv, cfg, data_info, cfg.seeds,
                    {}, started)
    for row in summary_rows:
        print(f"similarity-study: {row['metric']}: "
              f"test_mse={row['test_mse_mean']:.6f}")
    return 0


def cmd_training_length_study(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    raw, data_info = _load_dataset(cfg, args)
    fractions = args.fractions or (0.2, 0.6, 1.0)
    rows = training_length_study(raw, cfg, fractions=tuple(fractions),
                                 seeds=cfg.seeds)
    out = _out_dir(cfg)
    _write_rows_csv(out / "fractions.csv",
                    ("fraction", "variant", "test_mse_mean", "test_mae_mean",
                     "seeds"), rows)
    _write_manifest(out, "training-length-study", argv, cfg, data_info,
                    cfg.seeds, {}, started)
    for row in rows:
        print(f"training-length-study: fraction={row['fraction']} "
              f"{row['variant']}: test_mse={row['test_mse_mean']:.6f}")
    return 0


def cmd_rare_pattern_study(args, argv) -> int:
    started = _utc_now()
    cfg = _load_config(args)
    levels = args.levels or (1, 2, 4)
    rows = rare_pattern_study(
        cfg, kind=args.kind, occurrence_levels=tuple(levels),
        n_series=args.n_series, base_seed=args.seed if args.seed is not None else 0,
    )
    out = _out_dir(cfg)
    _write_rows_csv(out / "rare_patterns.csv",
                    ("pattern_kind", "occurrences", "n_series", "test_mse_with",
                     "test_mse_without", "mse_change_percent"), rows)
    _write_manifest(out, "rare-pattern-study", argv, cfg,
                    {"synthetic": {"kind": args.kind, "levels": list(levels),
                                   "n_series": args.n_series}},
                    [args.seed if args.seed is not None else 0], {}, started)
    for row in rows:
        print(f"rare-pattern-study: occ={row['occurrences']} "
              f"change={row['mse_change_percent']:+.1f}%")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser, with_data: bool = True) -> None:
    parser.add_argument("--config", help="INI config file; flags override it")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--jobs", type=int, help="worker pool size for independent runs")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--seed", type=int, help="single run seed")
    group.add_argument("--seeds", type=_csv_ints, help="comma-separated run seeds")
    if with_data:
        parser.add_argument("--dataset", help="path to the dataset CSV")
        parser.add_argument("--dataset-name", dest="dataset_name",
                            help="dataset label used in reports and split presets")
        parser.add_argument("--split",
                            help="auto | etth | ettm | ratio | borders:a,b[,c]")
        parser.add_argument("--target", help="restrict to one channel by name")
        parser.add_argument("--timestamp-column", dest="timestamp_column", type=int,
                            default=0, help="CSV timestamp column; negative for none")
        parser.add_argument("--frequency", default="", help="sampling frequency label")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lookback", type=int)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--periods", type=_csv_ints,
                        help="comma-separated pooling periods, e.g. 1,2,4")
    parser.add_argument("--m", type=int, help="retrieved candidates per period")
    parser.add_argument("--tau", type=float, help="softmax temperature")
    parser.add_argument("--metric", choices=METRIC_KINDS)
    parser.add_argument("--channel-reduce", dest="channel_reduce",
                        choices=("mean", "flatten"))
    parser.add_argument("--embed-dim", dest="embed_dim", type=int)
    parser.add_argument("--stride", type=int, help="candidate start spacing")
    parser.add_argument("--lr", type=float, help="learning rate")
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--max-epochs", dest="max_epochs", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--optimizer", choices=("adam", "sgd"))
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--no-retrieval", dest="no_retrieval", action="store_true",
                        help="shorthand for --variant no_retrieval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retrocast",
        description="Retrieval-augmented linear forecasting over sliding patches.",
    )
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on the test split")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--checkpoint", nargs="+", required=True,
                   help="one or more checkpoint files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="validation-selected hyperparameter sweep")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--grid-lrs", dest="grid_lrs", type=_csv_floats)
    p.add_argument("--grid-lookbacks", dest="grid_lookbacks", type=_csv_ints)
    p.add_argument("--grid-ms", dest="grid_ms", type=_csv_ints)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("ablate", help="run retrieval ablation variants")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--variants", type=_csv_strs,
                   help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stride", help="precompute time vs accuracy per stride")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--strides", type=_csv_ints, help="e.g. 1,2,4,8")
    p.set_defaults(func=cmd_stride)

    p = sub.add_parser("diagnose", help="per-query retrieval quality vs forecast gain")
    _add_common(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("synth", help="generate a synthetic series with annotations")
    _add_common(p, with_data=False)
    p.add_argument("--kind", choices=PATTERN_KINDS, default="ar")
    p.add_argument("--occurrences", type=int, default=1,
                   help="train-region insertions per pattern")
    p.add_argument("--total-length", dest="total_length", type=int)
    p.add_argument("--pattern-length", dest="pattern_length", type=int)
    p.add_argument("--n-patterns", dest="n_patterns", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("similarity-study", help="compare similarity metrics")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--metrics", type=_csv_strs,
                   help=f"comma-separated subset of {','.join(METRIC_KINDS)}")
    p.set_defaults(func=cmd_similarity_study)

    p = sub.add_parser("training-length-study",
                       help="retrain on trailing fractions of the train split")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--fractions", type=_csv_floats, help="e.g. 0.2,0.6,1.0")
    p.set_defaults(func=cmd_training_length_study)

    p = sub.add_parser("rare-pattern-study",
                       help="retrieval gain on injected rare patterns")
    _add_common(p, with_data=False)
    _add_model_flags(p)
    p.add_argument("--kind", choices=PATTERN_KINDS, default="ar")
    p.add_argument("--levels", type=_csv_ints, help="occurrence levels, e.g. 1,2,4")
    p.add_argument("--n-series", dest="n_series", type=int, default=20)
    p.set_defaults(func=cmd_rare_pattern_study)

    return parser


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except (ValueError, OSError, KeyError, CacheMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
