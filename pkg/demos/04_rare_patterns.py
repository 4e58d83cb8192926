"""Measure the retrieval gain on injected rare patterns, per occurrence count.

A scaled-down version of the rare-pattern experiment: short background,
short patterns, three series per level. Scores only the test windows whose
target overlaps an annotated pattern span. Negative change means
retrieval helped.

Run: python3 demos/04_rare_patterns.py  (well under a minute)
"""
import retrocast as rc

cfg = rc.ExperimentConfig(lookback=48, horizon=48, periods=(1,), m=1,
                          max_epochs=5, seeds=(0,)).validate()
rows = rc.rare_pattern_study(
    cfg, kind="random_walk", occurrence_levels=(1, 4), n_series=3,
    spec_overrides={"total_length": 6000, "pattern_length": 160,
                    "n_distinct_patterns": 2},
)
print(f"{'occurrences':>11s} {'with':>8s} {'without':>8s} {'change':>8s}")
for r in rows:
    print(f"{r['occurrences']:11d} {r['test_mse_with']:8.4f} "
          f"{r['test_mse_without']:8.4f} {r['mse_change_percent']:+7.1f}%")
