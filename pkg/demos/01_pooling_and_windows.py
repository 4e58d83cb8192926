"""Sliding windows, average pooling, and offset anchoring on a tiny series.

Run: python3 demos/01_pooling_and_windows.py
"""
import numpy as np

import retrocast as rc

rng = np.random.default_rng(0)
values = np.cumsum(rng.normal(size=(1, 48)), axis=1)
series = rc.TimeSeries(values, channel_names=("walk",))
print(f"series: {series.n_channels} channel x {series.n_steps} steps")

L, F = 8, 4
starts = np.arange(series.n_steps - (L + F) + 1)
print(f"L={L} F={F} -> {starts.size} full key+value windows")

# one key patch and the value patch that continues it
key = values[:, 10:10 + L]
val = values[:, 10 + L:10 + L + F]
anchor = key[:, -1:]
print("key  :", np.array2string(key[0], precision=2))
print("value:", np.array2string(val[0], precision=2))
print("anchored key ends at 0:", (key - anchor)[0, -1])
print("anchored value:", np.array2string((val - anchor)[0], precision=2))

raw = rc.Patch(values=series.values[:, :L], start=0)
for p in (1, 2, 4):
    pooled = rc.downsample(raw, p)
    print(f"pool p={p}: width {L} -> {pooled.width}")

# trailing alignment: a width not divisible by p drops the OLDEST steps
odd = rc.Patch(values=series.values[:, :7], start=0)
trimmed = rc.Patch(values=series.values[:, 1:7], start=1)
print("pool p=2 on width 7 keeps the trailing 6 steps:",
      np.allclose(rc.downsample(odd, 2).values, rc.downsample(trimmed, 2).values))
