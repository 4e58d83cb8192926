"""Index a seasonal series and walk one query through retrieval.

The series repeats every 25 steps, so the best candidates for any query
sit one or more full seasons away and their continuations nearly equal
the query's true future.

Run: python3 demos/02_retrieval_walkthrough.py
"""
import numpy as np

import retrocast as rc
from retrocast.retrieval import retrieve
from retrocast.cache import patches_for_starts

rng = np.random.default_rng(7)
t = np.arange(400, dtype=np.float64)
values = (np.sin(2 * np.pi * t / 25) + 0.05 * rng.normal(size=t.size))[None, :]
series = rc.TimeSeries(values, channel_names=("seasonal",))

L, F = 16, 8
index = rc.build_index(rc.TimeSeries(values[:, :300], channel_names=("seasonal",)), L, F,
                       stride=1, periods=(1, 2))
print(f"index: {index.starts.size} candidates, periods {index.periods}")

q = 320
patch = patches_for_starts(series, [q], L)[0]
result = retrieve(index, patch, m=4, tau=0.1, metric=rc.SimilarityMetric())

for p in index.periods:
    starts = result.selected_starts[p]
    gaps = (q - starts) % 25
    print(f"p={p}: starts {starts.tolist()} scores "
          f"{np.round(result.scores[p], 3).tolist()} weights "
          f"{np.round(result.weights[p], 3).tolist()} (phase gaps {gaps.tolist()})")

truth = series.values[:, q + L:q + L + F] - series.values[:, q + L - 1:q + L]
blend = result.aggregated[1]
print("true anchored future:", np.array2string(truth[0], precision=3))
print("retrieved blend     :", np.array2string(blend[0], precision=3))
print(f"blend MSE vs truth: {np.mean((blend - truth) ** 2):.5f}")
