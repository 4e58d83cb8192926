"""Containers and primitives for regularly sampled multivariate series.

Everything downstream works on float64 channel-major arrays (C x T). A
series is immutable once constructed; splits hand out views, not copies,
so window extraction over a long history costs no memory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TimeSeries",
    "CsvSchema",
    "SplitSpec",
    "SplitView",
    "Patch",
    "AnchoredPatch",
    "ChannelStats",
    "load_csv",
    "write_csv",
    "select_channels",
    "split",
    "fit_standardize",
    "apply_standardize",
    "downsample",
    "subtract_offset",
    "sliding_windows",
]


def _frozen_f64(a, name: str) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True, order="C")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeSeries:
    """A C x T block of channel values, immutable, all finite.

    timestamps are carried for reporting only; no arithmetic touches them.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    frequency: str = ""
    timestamps: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"values must be C x T, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"values must be non-empty, got shape {vals.shape}")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != vals.shape[0]:
            raise ValueError(
                f"{len(names)} channel names for {vals.shape[0]} channels"
            )
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        object.__setattr__(self, "values", _frozen_f64(vals, "values"))
        object.__setattr__(self, "channel_names", names)
        if self.timestamps is not None:
            ts = tuple(str(t) for t in self.timestamps)
            if len(ts) != vals.shape[1]:
                raise ValueError(f"{len(ts)} timestamps for {vals.shape[1]} steps")
            object.__setattr__(self, "timestamps", ts)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CsvSchema:
    """Column layout for CSV ingestion.

    The timestamp column is positional; channels default to every other
    column in file order.
    """

    timestamp_column: int | None = 0
    channels: tuple[str, ...] | None = None
    frequency: str = ""


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> TimeSeries:
    """Read a header + rows CSV into a TimeSeries.

    Raises FileNotFoundError for a missing file and ValueError naming the
    offending row/column for ragged or non-numeric data.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        ts_col = schema.timestamp_column
        if ts_col is not None and not (0 <= ts_col < len(header)):
            raise ValueError(f"timestamp column {ts_col} out of range")
        data_cols = [i for i in range(len(header)) if i != ts_col]
        if schema.channels is not None:
            by_name = {h: i for i, h in enumerate(header)}
            missing = [c for c in schema.channels if c not in by_name]
            if missing:
                raise ValueError(f"{path}: channels not in header: {missing}")
            data_cols = [by_name[c] for c in schema.channels]
        if not data_cols:
            raise ValueError(f"{path}: no data columns")
        names = tuple(header[i] for i in data_cols)
        rows: list[list[float]] = []
        stamps: list[str] = []
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(
                    f"{path}:{lineno}: expected {width} columns, found {len(row)}"
                )
            if ts_col is not None:
                stamps.append(row[ts_col])
            parsed = []
            for i in data_cols:
                cell = row[i].strip()
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: column '{header[i]}' not numeric: {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64).T
    return TimeSeries(
        values=values,
        channel_names=names,
        frequency=schema.frequency,
        timestamps=tuple(stamps) if ts_col is not None else None,
    )


def write_csv(series: TimeSeries, path: str | Path) -> None:
    """Write a series back out in the same header + rows layout load_csv reads."""
    path = Path(path)
    stamps = series.timestamps or tuple(str(i) for i in range(series.n_steps))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *series.channel_names])
        for t in range(series.n_steps):
            writer.writerow([stamps[t], *(repr(float(v)) for v in series.values[:, t])])


def select_channels(series: TimeSeries, channels) -> TimeSeries:
    """Restrict to a subset of channels by name or integer position."""
    idx = []
    for c in channels:
        if isinstance(c, str):
            if c not in series.channel_names:
                raise ValueError(f"no channel named {c!r}")
            idx.append(series.channel_names.index(c))
        else:
            i = int(c)
            if not (0 <= i < series.n_channels):
                raise ValueError(f"channel index {i} out of range")
            idx.append(i)
    if not idx:
        raise ValueError("no channels selected")
    return TimeSeries(
        values=series.values[idx, :],
        channel_names=tuple(series.channel_names[i] for i in idx),
        frequency=series.frequency,
        timestamps=series.timestamps,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split boundaries: train [0, train_end), val
    [train_end, val_end), test [val_end, T).

    With lookback_overlap, val and test views may read into the preceding
    partition when forming input windows, so the first forecastable target
    starts exactly at the boundary.
    """

    train_end: int
    val_end: int
    lookback_overlap: bool = True

    def __post_init__(self) -> None:
        if not (0 < self.train_end < self.val_end):
            raise ValueError(
                f"need 0 < train_end < val_end, got {self.train_end}, {self.val_end}"
            )


@dataclass(frozen=True)
class SplitView:
    """A contiguous [start, end) slice of a parent series.

    Owns no data. window_starts() enumerates forecast windows in parent
    coordinates; a lookback view lets input windows begin up to L steps
    before start, which is how val/test keep targets flush with the
    boundary without ever scoring targets outside [start, end).
    """

    parent: TimeSeries
    start: int
    end: int
    lookback: bool = False

    def __post_init__(self) -> None:
        if not (0 <= self.start <= self.end <= self.parent.n_steps):
            raise ValueError(
                f"slice [{self.start}, {self.end}) outside series of length "
                f"{self.parent.n_steps}"
            )

    @property
    def values(self) -> np.ndarray:
        return self.parent.values[:, self.start : self.end]

    def __len__(self) -> int:
        return self.end - self.start

    def as_series(self) -> TimeSeries:
        if len(self) == 0:
            raise ValueError("empty view has no series form")
        return TimeSeries(
            values=self.values,
            channel_names=self.parent.channel_names,
            frequency=self.parent.frequency,
            timestamps=(
                self.parent.timestamps[self.start : self.end]
                if self.parent.timestamps is not None
                else None
            ),
        )

    def window_starts(self, lookback: int, horizon: int, stride: int = 1) -> np.ndarray:
        """Input-window start indices (parent coordinates) for every
        length-lookback input whose length-horizon target lies inside the view."""
        if lookback < 1 or horizon < 1:
            raise ValueError("lookback and horizon must be positive")
        if stride < 1:
            raise ValueError("stride must be positive")
        lo = self.start - lookback if self.lookback else self.start
        lo = max(lo, 0)
        hi = self.end - (lookback + horizon)
        if hi < lo:
            return np.empty(0, dtype=np.int64)
        return np.arange(lo, hi + 1, stride, dtype=np.int64)


def split(series: TimeSeries, spec: SplitSpec) -> tuple[SplitView, SplitView, SplitView]:
    """Partition a series chronologically. Views cover [0, T) exactly once."""
    if not (spec.val_end <= series.n_steps):
        raise ValueError(
            f"val_end {spec.val_end} beyond series length {series.n_steps}"
        )
    train = SplitView(series, 0, spec.train_end, lookback=False)
    val = SplitView(series, spec.train_end, spec.val_end, lookback=spec.lookback_overlap)
    test = SplitView(series, spec.val_end, series.n_steps, lookback=spec.lookback_overlap)
    return train, val, test


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = _frozen_f64(np.atleast_1d(self.mean), "mean")
        std = _frozen_f64(np.atleast_1d(self.std), "std")
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be matching 1-d vectors")
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def fit_standardize(train: TimeSeries) -> ChannelStats:
    """Fit per-channel stats on training data only. Constant channels get
    std 1 so standardizing them is a pure shift."""
    mean = train.values.mean(axis=1)
    std = train.values.std(axis=1)  # population std, ddof 0
    std = np.where(std == 0.0, 1.0, std)
    return ChannelStats(mean=mean, std=std)


def apply_standardize(stats: ChannelStats, series: TimeSeries) -> TimeSeries:
    if stats.mean.shape[0] != series.n_channels:
        raise ValueError(
            f"stats fitted for {stats.mean.shape[0]} channels, series has "
            f"{series.n_channels}"
        )
    vals = (series.values - stats.mean[:, None]) / stats.std[:, None]
    return TimeSeries(
        values=vals,
        channel_names=series.channel_names,
        frequency=series.frequency,
        timestamps=series.timestamps,
    )


@dataclass(frozen=True)
class Patch:
    """A C x W excerpt plus its absolute start index in the source series.

    period > 1 marks a pooled patch; start then points at the first source
    step the pooled window covers.
    """

    values: np.ndarray
    start: int
    period: int = 1

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"patch values must be non-empty C x W, got {vals.shape}")
        if self.start < 0:
            raise ValueError("start must be non-negative")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        object.__setattr__(self, "values", vals)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AnchoredPatch:
    """A patch shifted so its final step is exactly zero per channel.

    offset holds the removed final-step values; adding it back restores
    the original patch to float64 round-off (the final step exactly).
    """

    values: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        off = np.asarray(self.offset, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"anchored values must be C x W, got {vals.shape}")
        if off.shape != (vals.shape[0],):
            raise ValueError("offset must be one value per channel")
        if vals.shape[1] >= 1 and np.any(vals[:, -1] != 0.0):
            raise ValueError("anchored patch must end at exactly zero")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "offset", off)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]


def subtract_offset(patch: Patch) -> AnchoredPatch:
    """Anchor a patch at its final step. x - x[-1] is exact in IEEE754, so
    the last column is true zero, not merely small."""
    offset = patch.values[:, -1].copy()
    return AnchoredPatch(values=patch.values - offset[:, None], offset=offset)


def _pool_mean(a: np.ndarray, p: int) -> np.ndarray:
    # trailing-aligned: drop the oldest W mod p steps, then mean over
    # non-overlapping blocks of p
    w = a.shape[-1]
    r = w % p
    trimmed = a[..., r:]
    shape = trimmed.shape[:-1] + (w // p, p)
    return trimmed.reshape(shape).mean(axis=-1)


def downsample(patch: Patch, period: int) -> Patch:
    """Average-pool a raw patch to a coarser period.

    Blocks align to the patch end so the final pooled step always covers
    the final raw step; period 1 is the identity.
    """
    if patch.period != 1:
        raise ValueError("downsample expects a raw (period 1) patch")
    if period < 1:
        raise ValueError("period must be >= 1")
    if period > patch.width:
        raise ValueError(f"period {period} exceeds patch width {patch.width}")
    if period == 1:
        return Patch(values=patch.values, start=patch.start, period=1)
    pooled = _pool_mean(patch.values, period)
    return Patch(values=pooled, start=patch.start + patch.width % period, period=period)


def sliding_windows(
    series: TimeSeries, lookback: int, horizon: int, stride: int = 1
) -> list[tuple[Patch, Patch]]:
    """Every (input, continuation) patch pair on the stride grid.

    Patch values are views into the series buffer; with stride 1 there are
    T - (lookback + horizon) + 1 pairs.
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be positive")
    if stride < 1:
        raise ValueError("stride must be positive")
    span = lookback + horizon
    if series.n_steps < span:
        raise ValueError(
            f"series too short: T={series.n_steps} < lookback+horizon={span}"
        )
    pairs = []
    for i in range(0, series.n_steps - span + 1, stride):
        key = Patch(values=series.values[:, i : i + lookback], start=i)
        value = Patch(values=series.values[:, i + lookback : i + span], start=i + lookback)
        pairs.append((key, value))
    return pairs
