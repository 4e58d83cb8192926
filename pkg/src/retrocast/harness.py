"""Experiment orchestration: end-to-end runs, metric reports, grid search,
ablations, stride/similarity/training-length studies, synthetic rare-pattern
studies, and per-query retrieval diagnostics.

Every study funnels through one run path (prepare, index, precompute,
train, evaluate) so variants differ only in the stage a study swaps out.
All reported metrics live in standardized space. Wall times never enter
metric CSVs; fixed seeds therefore reproduce reports byte for byte.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np

from .cache import RetrievalCache, patches_for_starts, precompute
from .config import VARIANTS, ExperimentConfig
from .metrics import mae, mse, spearman
from .model import (
    ForecastModel,
    TrainConfig,
    TrainHistory,
    _gather_windows,
    _live_vt,
    _vt_rows_from_cache,
    init_model,
    predict_windows,
    train,
)
from .retrieval import (
    ExclusionRule,
    PatchIndex,
    RetrievalParams,
    SimilarityMetric,
    _corr,
    build_index,
    retrieve,
)
from .series import (
    ChannelStats,
    Patch,
    SplitSpec,
    SplitView,
    TimeSeries,
    apply_standardize,
    downsample,
    fit_standardize,
    select_channels,
    split,
    subtract_offset,
)
from .synthetic import PatternAnnotation, SyntheticSpec, assemble

__all__ = [
    "PreparedData",
    "RunResult",
    "MetricReport",
    "GridSpace",
    "GridResult",
    "DiagnosticsRecord",
    "DiagnosticsResult",
    "resolve_split",
    "tuned_config",
    "default_horizons",
    "prepare_dataset",
    "run_single",
    "evaluate",
    "grid_search",
    "run_ablation",
    "stride_study",
    "similarity_study",
    "training_length_study",
    "diagnostics",
    "rare_pattern_study",
    "eval_starts_for_annotations",
]

# fixed benchmark borders (series rows, not window counts); the ETT sets
# conventionally use 20 months of hourly/quarter-hourly rows
PRESET_BORDERS = {
    "etth": (8640, 11520, 14400),
    "ettm": (34560, 46080, 57600),
}

# per-dataset settings selected by validation grid search; (lookback,
# learning rate, m) per horizon
TUNED_CONFIGS: dict[str, dict[int, tuple[int, float, int]]] = {
    "ETTh1": {96: (720, 1e-3, 20), 192: (720, 1e-2, 20), 336: (720, 1e-2, 20), 720: (720, 1e-4, 20)},
    "ETTh2": {96: (720, 1e-2, 10), 192: (720, 1e-3, 10), 336: (720, 1e-3, 20), 720: (720, 1e-4, 20)},
    "ETTm1": {96: (720, 1e-2, 1), 192: (720, 1e-3, 20), 336: (720, 1e-3, 20), 720: (720, 1e-2, 20)},
    "ETTm2": {96: (720, 1e-3, 5), 192: (720, 1e-3, 20), 336: (720, 1e-4, 20), 720: (720, 1e-4, 20)},
    "Electricity": {96: (720, 1e-2, 1), 192: (720, 1e-3, 1), 336: (720, 1e-3, 1), 720: (720, 1e-3, 1)},
    "Exchange": {96: (720, 1e-4, 1), 192: (720, 1e-3, 1), 336: (720, 1e-3, 10), 720: (720, 1e-4, 20)},
    "Illness": {24: (96, 1e-2, 1), 36: (96, 1e-2, 1), 48: (96, 1e-2, 20), 60: (96, 1e-2, 20)},
    "Solar": {96: (720, 1e-3, 1), 192: (720, 1e-2, 1), 336: (720, 1e-3, 1), 720: (720, 1e-3, 1)},
    "Traffic": {96: (720, 1e-2, 1), 192: (720, 1e-3, 1), 336: (720, 1e-3, 1), 720: (720, 1e-3, 1)},
    "Weather": {96: (720, 1e-2, 1), 192: (720, 1e-3, 1), 336: (720, 1e-3, 1), 720: (720, 1e-3, 1)},
}


def default_horizons(dataset: str) -> tuple[int, ...]:
    if dataset.lower().startswith("illness"):
        return (24, 36, 48, 60)
    return (96, 192, 336, 720)


def tuned_config(cfg: ExperimentConfig, dataset: str, horizon: int) -> ExperimentConfig:
    """Overlay the published per-dataset settings, when known."""
    table = TUNED_CONFIGS.get(dataset)
    if table is None or horizon not in table:
        return replace(cfg, dataset_name=dataset, horizon=horizon).validate()
    lookback, lr, m = table[horizon]
    return replace(
        cfg, dataset_name=dataset, horizon=horizon,
        lookback=lookback, learning_rate=lr, m=m,
    ).validate()


def resolve_split(cfg: ExperimentConfig, total: int) -> tuple[int, int, int]:
    """(train_end, val_end, used_length) series-row borders for a config."""
    rule = cfg.split
    if rule == "auto":
        name = cfg.dataset_name.lower()
        if name.startswith("etth"):
            rule = "etth"
        elif name.startswith("ettm"):
            rule = "ettm"
        else:
            rule = "ratio"
    if rule.startswith("borders:"):
        parts = [int(x) for x in rule.split(":", 1)[1].split(",")]
        if len(parts) == 2:
            parts.append(total)
        if len(parts) != 3:
            raise ValueError(f"invalid split spec {cfg.split!r}")
        train_end, val_end, end = parts
    elif rule in PRESET_BORDERS:
        train_end, val_end, end = PRESET_BORDERS[rule]
    else:  # ratio 70/10/20
        n_test = int(0.2 * total)
        train_end = int(0.7 * total)
        val_end = total - n_test
        end = total
    if not (0 < train_end < val_end <= end <= total):
        raise ValueError(
            f"split borders ({train_end}, {val_end}, {end}) do not fit a "
            f"series of {total} steps"
        )
    return train_end, val_end, end


@dataclass(eq=False)
class PreparedData:
    """A dataset made ready to run: target-selected, truncated to its
    border convention, standardized on train stats, and split."""

    series: TimeSeries
    stats: ChannelStats
    train: SplitView
    val: SplitView
    test: SplitView
    borders: tuple[int, int, int]
    origin: int = 0  # train view start; nonzero only in truncated-train studies


def prepare_dataset(
    raw: TimeSeries, cfg: ExperimentConfig, train_fraction: float = 1.0
) -> PreparedData:
    if cfg.target is not None:
        raw = select_channels(raw, [cfg.target])
    train_end, val_end, end = resolve_split(cfg, raw.n_steps)
    if end < raw.n_steps:
        raw = TimeSeries(
            values=raw.values[:, :end],
            channel_names=raw.channel_names,
            frequency=raw.frequency,
            timestamps=raw.timestamps[:end] if raw.timestamps else None,
        )
    if not (0 < train_fraction <= 1.0):
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    train_start = train_end - int(train_fraction * train_end)
    if train_end - train_start < cfg.lookback + cfg.horizon:
        raise ValueError(
            f"train fraction {train_fraction} leaves {train_end - train_start} steps, "
            f"fewer than lookback+horizon = {cfg.lookback + cfg.horizon}"
        )
    raw_train = SplitView(raw, train_start, train_end).as_series()
    stats = fit_standardize(raw_train)
    std = apply_standardize(stats, raw)
    train_view = SplitView(std, train_start, train_end, lookback=False)
    val_view = SplitView(std, train_end, val_end, lookback=cfg.lookback_overlap)
    test_view = SplitView(std, val_end, std.n_steps, lookback=cfg.lookback_overlap)
    if train_start == 0:
        train_view, val_view, test_view = split(
            std, SplitSpec(train_end, val_end, cfg.lookback_overlap)
        )
    return PreparedData(
        series=std, stats=stats, train=train_view, val=val_view, test=test_view,
        borders=(train_end, val_end, end), origin=train_start,
    )


@dataclass(eq=False)
class RunResult:
    dataset: str
    horizon: int
    variant: str
    metric_kind: str
    seed: int
    lookback: int
    m: int
    stride: int
    learning_rate: float
    val_mse: float
    test_mse: float
    test_mae: float
    epochs_run: int
    n_test_windows: int
    precompute_seconds: float
    train_seconds: float
    inference_seconds: float
    history: TrainHistory = field(repr=False, default=None)
    model: ForecastModel = field(repr=False, default=None)
    retrieval_metric: SimilarityMetric = field(repr=False, default=None)


METRIC_COLUMNS = (
    "dataset", "horizon", "variant", "metric", "seed", "lookback", "m",
    "stride", "learning_rate", "val_mse", "test_mse", "test_mae",
    "epochs_run", "n_test_windows",
)
TIMING_COLUMNS = (
    "dataset", "horizon", "variant", "metric", "seed",
    "precompute_seconds", "train_seconds", "inference_seconds",
)


@dataclass(eq=False)
class MetricReport:
    """Per-run metric rows plus aggregation and CSV emission."""

    results: list[RunResult] = field(default_factory=list)

    def metric_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            rows.append({
                "dataset": r.dataset, "horizon": r.horizon, "variant": r.variant,
                "metric": r.metric_kind, "seed": r.seed, "lookback": r.lookback,
                "m": r.m, "stride": r.stride, "learning_rate": r.learning_rate,
                "val_mse": r.val_mse, "test_mse": r.test_mse, "test_mae": r.test_mae,
                "epochs_run": r.epochs_run, "n_test_windows": r.n_test_windows,
            })
        return rows

    def timing_rows(self) -> list[dict]:
        return [
            {
                "dataset": r.dataset, "horizon": r.horizon, "variant": r.variant,
                "metric": r.metric_kind, "seed": r.seed,
                "precompute_seconds": r.precompute_seconds,
                "train_seconds": r.train_seconds,
                "inference_seconds": r.inference_seconds,
            }
            for r in self.results
        ]

    def mean(self, **filters) -> dict:
        """Seed-mean MSE/MAE over rows matching the given column values."""
        picked = [
            r for r in self.results
            if all(getattr(r, _FILTER_FIELDS.get(k, k)) == v for k, v in filters.items())
        ]
        if not picked:
            raise ValueError(f"no runs match {filters}")
        return {
            "n": len(picked),
            "val_mse": float(np.mean([r.val_mse for r in picked])),
            "test_mse": float(np.mean([r.test_mse for r in picked])),
            "test_mae": float(np.mean([r.test_mae for r in picked])),
        }

    def summary(self) -> dict:
        """Per (dataset, horizon, variant) seed means, plus the across-
        horizon average row per (dataset, variant)."""
        groups: dict[tuple, list[RunResult]] = {}
        for r in self.results:
            groups.setdefault((r.dataset, r.horizon, r.variant), []).append(r)
        per_horizon = []
        for (ds, hz, var), rs in sorted(groups.items(), key=lambda kv: str(kv[0])):
            per_horizon.append({
                "dataset": ds, "horizon": hz, "variant": var, "seeds": len(rs),
                "test_mse_mean": float(np.mean([r.test_mse for r in rs])),
                "test_mae_mean": float(np.mean([r.test_mae for r in rs])),
            })
        avg_groups: dict[tuple, list[dict]] = {}
        for row in per_horizon:
            avg_groups.setdefault((row["dataset"], row["variant"]), []).append(row)
        averaged = [
            {
                "dataset": ds, "variant": var, "horizons": len(rows),
                "test_mse_mean": float(np.mean([r["test_mse_mean"] for r in rows])),
                "test_mae_mean": float(np.mean([r["test_mae_mean"] for r in rows])),
            }
            for (ds, var), rows in sorted(avg_groups.items())
        ]
        return {"per_horizon": per_horizon, "averaged": averaged}

    def to_csv(self, path: str | Path) -> None:
        _write_csv(path, METRIC_COLUMNS, self.metric_rows())

    def timings_to_csv(self, path: str | Path) -> None:
        _write_csv(path, TIMING_COLUMNS, self.timing_rows())


_FILTER_FIELDS = {"metric": "metric_kind"}


def _write_csv(path: str | Path, columns, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# single-run execution


def _make_rparams(cfg: ExperimentConfig, variant: str, seed: int) -> RetrievalParams:
    metric = SimilarityMetric(
        kind=cfg.metric, channel_reduce=cfg.channel_reduce, embed_dim=cfg.embed_dim
    )
    return RetrievalParams(
        m=cfg.m,
        tau=cfg.tau,
        metric=metric,
        selection="random" if variant == "random_retrieval" else "similarity",
        weighting="uniform" if variant in ("random_retrieval", "no_attention") else "softmax",
        seed=seed,
    )


def _build_assets(prepared: PreparedData, cfg: ExperimentConfig, variant: str, seed: int):
    """Index and caches for one run. Returns (index, rparams, caches,
    precompute_seconds); caches is None for no_retrieval and for the
    trainable metric (scored live)."""
    if variant == "no_retrieval":
        return None, None, None, 0.0
    periods = (1,) if variant == "one_period" else cfg.periods
    rparams = _make_rparams(cfg, variant, seed)
    index = build_index(
        prepared.train.as_series(), cfg.lookback, cfg.horizon, cfg.stride, periods
    )
    if rparams.metric.trainable:
        return index, rparams, None, 0.0
    l, f = cfg.lookback, cfg.horizon
    t0 = time.perf_counter()
    caches = {
        "train": precompute(
            index,
            patches_for_starts(prepared.series, prepared.train.window_starts(l, f), l),
            rparams, exclude_self=True, origin=prepared.origin,
        ),
        "val": precompute(
            index,
            patches_for_starts(prepared.series, prepared.val.window_starts(l, f), l),
            rparams, exclude_self=False,
        ),
        "test": precompute(
            index,
            patches_for_starts(prepared.series, prepared.test.window_starts(l, f), l),
            rparams, exclude_self=False,
        ),
    }
    return index, rparams, caches, time.perf_counter() - t0


def _eval_windows(model, series, starts, cache, live, chunk=2048):
    """(mse, mae, seconds) over forecast windows in standardized space."""
    if starts.size == 0:
        raise ValueError("no evaluation windows")
    t0 = time.perf_counter()
    se = 0.0
    ae = 0.0
    count = 0
    for lo in range(0, starts.size, chunk):
        part = starts[lo : lo + chunk]
        x = _gather_windows(series, part, model.lookback, 0)
        y0 = _gather_windows(series, part, model.horizon, model.lookback)
        if cache is not None:
            vt = _vt_rows_from_cache(cache, part, model.periods)
        elif live is not None:
            index, params, exclude = live
            vt = _live_vt(index, series, part, params, exclude)
        else:
            vt = None
        pred = predict_windows(model, x, vt)
        se += float(np.sum((pred - y0) ** 2))
        ae += float(np.sum(np.abs(pred - y0)))
        count += y0.size
    return se / count, ae / count, time.perf_counter() - t0


def _execute(
    prepared: PreparedData,
    cfg: ExperimentConfig,
    variant: str,
    seed: int,
    assets,
    eval_starts: np.ndarray | None = None,
) -> RunResult:
    index, rparams, caches, precompute_seconds = assets
    use_retrieval = variant != "no_retrieval"
    periods = (1,) if variant == "one_period" else cfg.periods
    model = init_model(cfg.lookback, cfg.horizon, periods, seed=seed)
    tconf = TrainConfig(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs, patience=cfg.patience, seed=seed,
        optimizer=cfg.optimizer,
    )
    model, history = train(
        model, prepared.series, prepared.train, prepared.val, tconf,
        index=index, rparams=rparams,
        train_cache=None if caches is None else caches["train"],
        val_cache=None if caches is None else caches["val"],
        use_retrieval=use_retrieval,
        index_origin=prepared.origin,
    )
    starts = prepared.test.window_starts(cfg.lookback, cfg.horizon)
    if eval_starts is not None:
        starts = np.asarray(eval_starts, dtype=np.int64)
    live = None
    if use_retrieval and caches is None:
        live = (index, rparams, False)
    test_mse, test_mae, infer_s = _eval_windows(
        model, prepared.series, starts,
        None if caches is None else caches["test"], live,
    )
    return RunResult(
        dataset=cfg.dataset_name or "series",
        horizon=cfg.horizon,
        variant=variant,
        metric_kind=cfg.metric,
        seed=seed,
        lookback=cfg.lookback,
        m=cfg.m,
        stride=cfg.stride,
        learning_rate=cfg.learning_rate,
        val_mse=history.best_val,
        test_mse=test_mse,
        test_mae=test_mae,
        epochs_run=len(history.train_loss),
        n_test_windows=int(starts.size),
        precompute_seconds=precompute_seconds,
        train_seconds=float(sum(history.epoch_seconds)),
        inference_seconds=infer_s,
        history=history,
        model=model,
        retrieval_metric=None if rparams is None else rparams.metric,
    )


def run_single(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    seed: int = 0,
    variant: str | None = None,
    eval_starts: np.ndarray | None = None,
    train_fraction: float = 1.0,
) -> RunResult:
    """Prepare, index, precompute, train, and score one configuration."""
    variant = variant or cfg.variant
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; known: {VARIANTS}")
    cfg.validate()
    prepared = prepare_dataset(raw, cfg, train_fraction)
    assets = _build_assets(prepared, cfg, variant, seed)
    return _execute(prepared, cfg, variant, seed, assets, eval_starts)


def _run_task(args) -> RunResult:
    raw, cfg, seed, variant, train_fraction = args
    return run_single(raw, cfg, seed=seed, variant=variant, train_fraction=train_fraction)


def _map_runs(tasks: list, jobs: int) -> list[RunResult]:
    if jobs <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


# ---------------------------------------------------------------------------
# studies


def evaluate(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    horizons: tuple[int, ...] | None = None,
    seeds: tuple[int, ...] | None = None,
    variant: str | None = None,
    jobs: int | None = None,
) -> MetricReport:
    """Train and score per (horizon, seed); one report row per run."""
    horizons = horizons or (cfg.horizon,)
    seeds = seeds or cfg.seeds
    variant = variant or cfg.variant
    tasks = []
    for hz in horizons:
        cfg_h = replace(cfg, horizon=hz).validate()
        for seed in seeds:
            tasks.append((raw, cfg_h, seed, variant, 1.0))
    return MetricReport(results=_map_runs(tasks, jobs or cfg.jobs))


@dataclass(frozen=True)
class GridSpace:
    learning_rates: tuple[float, ...] = (1e-4, 1e-3, 1e-2)
    lookbacks: tuple[int, ...] = (96, 192, 336, 720)
    ms: tuple[int, ...] = (1, 5, 10, 20)

    def __post_init__(self) -> None:
        if not (self.learning_rates and self.lookbacks and self.ms):
            raise ValueError("every grid axis must be non-empty")


@dataclass(eq=False)
class GridResult:
    table: list[dict]
    best: dict
    best_config: ExperimentConfig
    test_report: MetricReport


def grid_search(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    space: GridSpace | None = None,
    seeds: tuple[int, ...] | None = None,
) -> GridResult:
    """Exhaustive search selected on validation MSE alone.

    The index is built once per lookback and retrieval caches once per
    (lookback, m); learning rates then share them. Selection ties break
    lexicographically in (learning_rate, lookback, m) axis order. Test
    metrics are computed only for the winner, after selection.
    """
    space = space or GridSpace()
    seeds = seeds or cfg.seeds
    table = []
    for lookback in space.lookbacks:
        cfg_l = replace(cfg, lookback=lookback).validate()
        prepared = prepare_dataset(raw, cfg_l)
        for m in space.ms:
            cfg_m = replace(cfg_l, m=m).validate()
            assets = _build_assets(prepared, cfg_m, "full", seeds[0])
            for lr in space.learning_rates:
                cfg_run = replace(cfg_m, learning_rate=lr).validate()
                vals = []
                for seed in seeds:
                    result = _execute(prepared, cfg_run, "full", seed, assets)
                    vals.append(result.val_mse)
                table.append({
                    "learning_rate": lr, "lookback": lookback, "m": m,
                    "val_mse_mean": float(np.mean(vals)),
                    "val_mse_per_seed": vals,
                })
    def sort_key(row):
        return (
            row["val_mse_mean"],
            space.learning_rates.index(row["learning_rate"]),
            space.lookbacks.index(row["lookback"]),
            space.ms.index(row["m"]),
        )
    best = min(table, key=sort_key)
    best_config = replace(
        cfg, learning_rate=best["learning_rate"], lookback=best["lookback"], m=best["m"]
    ).validate()
    test_report = evaluate(raw, best_config, seeds=seeds, variant="full")
    return GridResult(table=table, best=dict(best), best_config=best_config,
                      test_report=test_report)


def run_ablation(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    seeds: tuple[int, ...] | None = None,
    variants: tuple[str, ...] = VARIANTS,
    eval_starts: np.ndarray | None = None,
    jobs: int | None = None,
) -> MetricReport:
    """Identical protocol per variant; only the retrieval stage differs.

    Every variant sees the same seeds, split, and standardization stats,
    so rows are directly comparable.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; known: {VARIANTS}")
    seeds = seeds or cfg.seeds
    results = []
    if eval_starts is not None or (jobs or cfg.jobs) <= 1:
        prepared = prepare_dataset(raw, cfg)
        for variant in variants:
            for seed in seeds:
                assets = _build_assets(prepared, cfg, variant, seed)
                results.append(_execute(prepared, cfg, variant, seed, assets, eval_starts))
    else:
        tasks = [(raw, cfg, seed, variant, 1.0) for variant in variants for seed in seeds]
        results = _map_runs(tasks, jobs or cfg.jobs)
    return MetricReport(results=results)


def stride_study(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    strides: tuple[int, ...] = (1, 2, 4, 8),
    seeds: tuple[int, ...] | None = None,
) -> list[dict]:
    """Candidate-grid thinning: precompute wall time and test MSE per stride."""
    seeds = seeds or cfg.seeds
    rows = []
    for stride in strides:
        if stride < 1:
            raise ValueError(f"invalid stride {stride}")
        report = evaluate(raw, replace(cfg, stride=stride).validate(), seeds=seeds)
        rows.append({
            "stride": stride,
            "precompute_seconds_mean": float(
                np.mean([r.precompute_seconds for r in report.results])
            ),
            "test_mse_mean": float(np.mean([r.test_mse for r in report.results])),
            "test_mae_mean": float(np.mean([r.test_mae for r in report.results])),
            "seeds": len(report.results),
        })
    return rows


def similarity_study(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    kinds: tuple[str, ...] = ("pearson", "cosine", "cosine_projected", "neg_l2"),
    seeds: tuple[int, ...] | None = None,
) -> MetricReport:
    """Metric comparison in univariate mode; identical seeds per metric row."""
    if cfg.target is None and raw.n_channels != 1:
        raise ValueError(
            "similarity study runs on a single channel; set a target channel"
        )
    seeds = seeds or cfg.seeds
    results = []
    for kind in kinds:
        cfg_k = replace(cfg, metric=kind).validate()
        report = evaluate(raw, cfg_k, seeds=seeds, variant="full")
        results.extend(report.results)
    return MetricReport(results=results)


def training_length_study(
    raw: TimeSeries,
    cfg: ExperimentConfig,
    fractions: tuple[float, ...] = (0.2, 0.6, 1.0),
    seeds: tuple[int, ...] | None = None,
    variants: tuple[str, ...] = ("full", "no_retrieval"),
) -> list[dict]:
    """Truncate the train split to its trailing fraction and retrain.

    Standardization is refit on the truncated train slice: the discarded
    past is treated as unobserved.
    """
    seeds = seeds or cfg.seeds
    rows = []
    for fraction in fractions:
        if not (0.0 < fraction <= 1.0):
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
        for variant in variants:
            per_seed = [
                run_single(raw, cfg, seed=seed, variant=variant, train_fraction=fraction)
                for seed in seeds
            ]
            rows.append({
                "fraction": fraction,
                "variant": variant,
                "test_mse_mean": float(np.mean([r.test_mse for r in per_seed])),
                "test_mae_mean": float(np.mean([r.test_mae for r in per_seed])),
                "seeds": len(per_seed),
            })
    return rows


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class DiagnosticsRecord:
    query_start: int
    key_similarity: float
    value_similarity: float
    mse_with: float
    mse_without: float
    mse_change_percent: float


@dataclass(eq=False)
class DiagnosticsResult:
    records: list[DiagnosticsRecord]
    spearman_key_value: float
    spearman_value_gain: float

    def to_csv(self, path: str | Path) -> None:
        cols = (
            "query_start", "key_similarity", "value_similarity",
            "mse_with", "mse_without", "mse_change_percent",
        )
        _write_csv(path, cols, [vars(r) for r in self.records])


def _pearson_mean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean([_corr(a[c], b[c]) for c in range(a.shape[0])]))


def diagnostics(
    raw: TimeSeries, cfg: ExperimentConfig, seed: int = 0
) -> DiagnosticsResult:
    """Per-test-query retrieval quality against forecast gain.

    key_similarity and value_similarity are period-averaged per-channel
    Pearson correlations (regardless of the retrieval metric in use);
    mse_change_percent is 100 * (with - without) / without per query, so
    negative values mean retrieval helped.
    """
    prepared = prepare_dataset(raw, cfg)
    assets = _build_assets(prepared, cfg, "full", seed)
    index, rparams, caches, _ = assets
    with_run = _execute(prepared, cfg, "full", seed, assets)
    without_run = _execute(prepared, cfg, "no_retrieval", seed, (None, None, None, 0.0))
    l, f = cfg.lookback, cfg.horizon
    starts = prepared.test.window_starts(l, f)
    pearson = SimilarityMetric(kind="pearson", channel_reduce="mean")
    records = []
    series = prepared.series
    for q in starts.tolist():
        patch = Patch(values=series.values[:, q : q + l], start=q)
        res = retrieve(index, patch, cfg.m, cfg.tau, rparams.metric, ExclusionRule(None))
        if res.degenerate:
            continue
        y0 = Patch(values=series.values[:, q + l : q + l + f], start=q + l)
        key_sims = []
        val_sims = []
        for p in res.periods:
            qp = res.query[p].values
            y0p = subtract_offset(downsample(y0, p)).values
            for pos in res.selected[p].tolist():
                key_sims.append(_pearson_mean(qp, index.keys[p][pos]))
                val_sims.append(_pearson_mean(y0p, index.values[p][pos]))
        x = patch.values[None, :, :]
        truth = y0.values[None, :, :]
        vt_with = {p: res.aggregated[p][None, :, :] for p in res.periods}
        pred_with = predict_windows(with_run.model, x, vt_with)
        pred_without = predict_windows(without_run.model, x, None)
        m_with = mse(pred_with, truth)
        m_without = mse(pred_without, truth)
        if m_without == 0.0:
            continue
        records.append(DiagnosticsRecord(
            query_start=q,
            key_similarity=float(np.mean(key_sims)),
            value_similarity=float(np.mean(val_sims)),
            mse_with=m_with,
            mse_without=m_without,
            mse_change_percent=100.0 * (m_with - m_without) / m_without,
        ))
    if len(records) < 3:
        raise ValueError(f"only {len(records)} usable diagnostic records; need >= 3")
    return DiagnosticsResult(
        records=records,
        spearman_key_value=spearman(
            [r.key_similarity for r in records], [r.value_similarity for r in records]
        ),
        spearman_value_gain=spearman(
            [r.value_similarity for r in records], [r.mse_change_percent for r in records]
        ),
    )


# ---------------------------------------------------------------------------
# synthetic rare-pattern study


def eval_starts_for_annotations(
    annotations: list[PatternAnnotation],
    view: SplitView,
    lookback: int,
    horizon: int,
) -> np.ndarray:
    """Test-window starts whose target overlaps an annotated span inside
    the view."""
    starts = view.window_starts(lookback, horizon)
    spans = [
        (a.start, a.end) for a in annotations
        if a.start >= view.start and a.end <= view.end
    ]
    keep = [
        q for q in starts.tolist()
        if any(q + lookback < e and q + lookback + horizon > s for s, e in spans)
    ]
    return np.asarray(keep, dtype=np.int64)


def rare_pattern_study(
    cfg: ExperimentConfig,
    kind: str = "ar",
    occurrence_levels: tuple[int, ...] = (1, 2, 4),
    n_series: int = 20,
    base_seed: int = 0,
    spec_overrides: dict | None = None,
) -> list[dict]:
    """Retrieval gain on injected rare patterns, per occurrence level.

    For each level, n_series synthetic series are generated; the full
    model and the no-retrieval baseline train on each with the same
    seed, scored only on test windows whose target overlaps an annotated
    span. mse_change_percent < 0 means retrieval helped.

    Series seeds are shared across occurrence levels (a paired design):
    level k and level k' see the same backgrounds and the same patterns,
    differing only in how often the patterns repeat, so cross-level
    comparisons are not confounded by draw luck.
    """
    if kind not in ("ar", "random_walk"):
        raise ValueError(f"unknown pattern kind {kind!r}")
    rows = []
    for level in occurrence_levels:
        with_vals = []
        without_vals = []
        for rep in range(n_series):
            spec = SyntheticSpec(
                pattern_kind=kind,
                occurrences_per_pattern=level,
                seed=base_seed + rep,
                **(spec_overrides or {}),
            )
            series, annotations = assemble(spec)
            total = spec.total_length
            train_end = int(0.7 * total)
            val_end = total - int(0.2 * total)
            cfg_run = replace(
                cfg,
                dataset_name=f"synthetic-{kind}",
                split=f"borders:{train_end},{val_end}",
            ).validate()
            prepared = prepare_dataset(series, cfg_run)
            eval_starts = eval_starts_for_annotations(
                annotations, prepared.test, cfg_run.lookback, cfg_run.horizon
            )
            if eval_starts.size == 0:
                raise ValueError("no test windows overlap an annotated span")
            seed = base_seed + rep
            with_run = _execute(
                prepared, cfg_run, "full", seed,
                _build_assets(prepared, cfg_run, "full", seed), eval_starts,
            )
            without_run = _execute(
                prepared, cfg_run, "no_retrieval", seed,
                (None, None, None, 0.0), eval_starts,
            )
            with_vals.append(with_run.test_mse)
            without_vals.append(without_run.test_mse)
        mean_with = float(np.mean(with_vals))
        mean_without = float(np.mean(without_vals))
        rows.append({
            "pattern_kind": kind,
            "occurrences": level,
            "n_series": n_series,
            "test_mse_with": mean_with,
            "test_mse_without": mean_without,
            "mse_change_percent": 100.0 * (mean_with - mean_without) / mean_without,
        })
    return rows
