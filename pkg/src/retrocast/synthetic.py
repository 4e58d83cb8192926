"""Synthetic benchmark series: smooth sinusoidal background plus rare
short-term patterns injected at controlled occurrence counts.

Draw order is part of the contract so that tests (and anyone else) can
replay the generator streams: assemble() consumes its generator in the
order background, then each distinct pattern, then placements (train
placements for each pattern in id order, then one test placement per
pattern in id order). Each generator op documents its own internal order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .series import TimeSeries

__all__ = [
    "SyntheticSpec",
    "PatternAnnotation",
    "gen_background",
    "gen_ar_pattern",
    "gen_rw_pattern",
    "assemble",
    "write_annotations",
    "read_annotations",
]

PATTERN_KINDS = ("ar", "random_walk")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic series.

    The background is a trend sinusoid plus a seasonality sinusoid, each
    with period, amplitude, and offset drawn uniformly from the ranges
    here. Patterns are either a fixed AR(ar_order) realisation or a fixed
    random-walk realisation, clamped elementwise to clamp_range, inserted
    additively.
    """

    total_length: int = 18000
    trend_period_range: tuple[float, float] = (1000.0, 4000.0)
    seasonality_period_range: tuple[float, float] = (500.0, 1000.0)
    trend_amp_range: tuple[float, float] = (200.0, 300.0)
    seasonality_amp_range: tuple[float, float] = (100.0, 200.0)
    offset_range: tuple[float, float] = (100.0, 200.0)
    pattern_length: int = 200
    pattern_kind: str = "ar"
    ar_order: int = 20
    ar_param_range: tuple[float, float] = (-5.0, 5.0)
    ar_noise_range: tuple[float, float] = (-10.0, 10.0)
    rw_step_range: tuple[float, float] = (0.0, 20.0)
    clamp_range: tuple[float, float] = (-100.0, 100.0)
    n_distinct_patterns: int = 3
    occurrences_per_pattern: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.total_length < 1:
            raise ValueError("total_length must be positive")
        if self.pattern_kind not in PATTERN_KINDS:
            raise ValueError(f"pattern_kind must be one of {PATTERN_KINDS}")
        if self.pattern_length < 1 or self.ar_order < 1:
            raise ValueError("pattern_length and ar_order must be positive")
        if self.n_distinct_patterns < 1 or self.occurrences_per_pattern < 1:
            raise ValueError("need at least one pattern and one occurrence")
        for name in (
            "trend_period_range", "seasonality_period_range", "trend_amp_range",
            "seasonality_amp_range", "offset_range", "ar_param_range",
            "ar_noise_range", "rw_step_range", "clamp_range",
        ):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ValueError(f"{name} is not ordered: ({lo}, {hi})")
        if self.total_length < (
            self.pattern_length * self.n_distinct_patterns * self.occurrences_per_pattern
        ):
            raise ValueError(
                "total_length cannot fit the requested pattern occurrences"
            )


@dataclass(frozen=True)
class PatternAnnotation:
    pattern_id: int
    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length


def gen_background(spec: SyntheticSpec, rng: np.random.Generator) -> TimeSeries:
    """Trend sinusoid plus seasonality sinusoid.

    Six uniform draws in order: trend period, trend amplitude, trend
    offset, seasonality period, seasonality amplitude, seasonality offset.
    Each component is offset + amplitude * sin(2*pi*t / period).
    """
    t = np.arange(spec.total_length, dtype=np.float64)
    out = np.zeros(spec.total_length)
    for period_range, amp_range in (
        (spec.trend_period_range, spec.trend_amp_range),
        (spec.seasonality_period_range, spec.seasonality_amp_range),
    ):
        period = rng.uniform(*period_range)
        amp = rng.uniform(*amp_range)
        offset = rng.uniform(*spec.offset_range)
        out += offset + amp * np.sin(2.0 * np.pi * t / period)
    return TimeSeries(values=out[None, :], channel_names=("value",))


def gen_ar_pattern(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """One fixed AR realisation of pattern_length steps.

    Draws the coefficient vector (ar_order values), then the noise vector
    (pattern_length values). History warm-starts at zeros. The clamp is
    applied inside the recurrence: with coefficients as large as 5 the
    raw process overflows float64 within a few dozen steps, so each
    stored step is clamped and later steps see clamped history.
    """
    phi = rng.uniform(*spec.ar_param_range, size=spec.ar_order)
    eps = rng.uniform(*spec.ar_noise_range, size=spec.pattern_length)
    lo, hi = spec.clamp_range
    out = np.zeros(spec.pattern_length)
    for t in range(spec.pattern_length):
        acc = eps[t]
        for i in range(1, spec.ar_order + 1):
            if t - i >= 0:
                acc += phi[i - 1] * out[t - i]
        out[t] = min(max(acc, lo), hi)
    return out


def gen_rw_pattern(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """One fixed random-walk realisation: cumulative sum of uniform steps
    from rw_step_range, starting at zero, clamped inside the recurrence."""
    steps = rng.uniform(*spec.rw_step_range, size=spec.pattern_length)
    lo, hi = spec.clamp_range
    out = np.zeros(spec.pattern_length)
    prev = 0.0
    for t in range(spec.pattern_length):
        prev = min(max(prev + steps[t], lo), hi)
        out[t] = prev
    return out


def _gen_pattern(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.pattern_kind == "ar":
        return gen_ar_pattern(spec, rng)
    return gen_rw_pattern(spec, rng)


def _place(
    rng: np.random.Generator,
    lo: int,
    hi: int,
    length: int,
    taken: list[tuple[int, int]],
    max_attempts: int = 1000,
) -> int:
    """Uniform non-overlapping placement by rejection sampling."""
    if hi < lo:
        raise ValueError("placement region shorter than the pattern")
    for _ in range(max_attempts):
        start = int(rng.integers(lo, hi + 1))
        if all(start + length <= s or start >= e for s, e in taken):
            taken.append((start, start + length))
            return start
    raise ValueError(
        f"could not place a length-{length} pattern in [{lo}, {hi}] "
        f"after {max_attempts} attempts; region too crowded"
    )


def assemble(
    spec: SyntheticSpec,
    rng: np.random.Generator | None = None,
    train_end: int | None = None,
    test_start: int | None = None,
) -> tuple[TimeSeries, list[PatternAnnotation]]:
    """Background plus injected patterns, with span annotations.

    Each distinct pattern appears occurrences_per_pattern times at uniform
    non-overlapping spots in the train region [0, train_end) and exactly
    once in the test region [test_start, total). Region defaults follow
    the 70/10/20 split convention. Outside annotated spans the series
    equals the background exactly.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    total = spec.total_length
    if train_end is None:
        train_end = int(0.7 * total)
    if test_start is None:
        test_start = total - int(0.2 * total)
    if not (0 < train_end <= test_start <= total):
        raise ValueError(
            f"invalid regions: train_end={train_end}, test_start={test_start}, total={total}"
        )
    background = gen_background(spec, rng)
    patterns = [_gen_pattern(spec, rng) for _ in range(spec.n_distinct_patterns)]
    values = background.values.copy()
    taken: list[tuple[int, int]] = []
    annotations: list[PatternAnnotation] = []
    plen = spec.pattern_length
    for pid in range(spec.n_distinct_patterns):
        for _ in range(spec.occurrences_per_pattern):
            start = _place(rng, 0, train_end - plen, plen, taken)
            annotations.append(PatternAnnotation(pid, start, plen))
    for pid in range(spec.n_distinct_patterns):
        start = _place(rng, test_start, total - plen, plen, taken)
        annotations.append(PatternAnnotation(pid, start, plen))
    for ann in annotations:
        values[0, ann.start : ann.end] += patterns[ann.pattern_id]
    series = TimeSeries(values=values, channel_names=background.channel_names)
    return series, annotations


def write_annotations(annotations: list[PatternAnnotation], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pattern_id", "start", "length"])
        for ann in annotations:
            writer.writerow([ann.pattern_id, ann.start, ann.length])


def read_annotations(path: str | Path) -> list[PatternAnnotation]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                PatternAnnotation(
                    pattern_id=int(row["pattern_id"]),
                    start=int(row["start"]),
                    length=int(row["length"]),
                )
            )
    return out
