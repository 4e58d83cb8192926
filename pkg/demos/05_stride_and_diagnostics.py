"""Candidate stride trade-off and per-query retrieval diagnostics.

Stride thins the candidate index: precompute gets cheaper, accuracy
drifts. Diagnostics correlate key similarity, value similarity, and the
per-window MSE change between the with- and without-retrieval models.

Run: python3 demos/05_stride_and_diagnostics.py
"""
import numpy as np

import retrocast as rc

rng = np.random.default_rng(11)
t = np.arange(3000, dtype=np.float64)
values = (np.sin(2 * np.pi * t / 40) + 2 * np.sin(2 * np.pi * t / 300)
          + 0.1 * rng.normal(size=t.size))[None, :]
series = rc.TimeSeries(values, channel_names=("seasonal",))

cfg = rc.ExperimentConfig(lookback=48, horizon=24, periods=(1,), m=3,
                          max_epochs=3, seeds=(0,)).validate()

print("stride  test_mse  precompute_s")
for row in rc.stride_study(series, cfg, strides=(1, 4, 8)):
    print(f"{row['stride']:6d} {row['test_mse_mean']:9.4f} "
          f"{row['precompute_seconds_mean']:13.3f}")

result = rc.diagnostics(series, cfg, seed=0)
print(f"\ndiagnostics over {len(result.records)} test windows:")
print(f"  spearman(key_similarity, value_similarity) = "
      f"{result.spearman_key_value:+.3f}")
print(f"  spearman(value_similarity, mse_change)     = "
      f"{result.spearman_value_gain:+.3f}")
helped = sum(1 for r in result.records if r.mse_change_percent < 0)
print(f"  retrieval helped on {helped}/{len(result.records)} windows")
