"""Precomputed retrieval results, in memory and on disk.

Retrieval for a fixed index, metric, and parameter set is a pure function
of the query start, so training loops precompute it once. Each query is
scored through the exact same single-query path the live API uses, which
makes cache hits bit-identical to on-the-fly retrieval by construction.

File layout (little-endian):

    byte 0        format version (1)
    bytes 1..4    uint32 header length H
    H bytes       UTF-8 JSON header: fingerprint, query count, periods,
                  channel count, per-period widths
    rest          raw arrays, in order: query starts (int64), degenerate
                  flags (uint8), then one float64 block of aggregated
                  values per period, ascending
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .retrieval import ExclusionRule, PatchIndex, RetrievalParams, perform_retrieval
from .series import Patch, TimeSeries

__all__ = [
    "CacheMismatchError",
    "RetrievalCache",
    "make_fingerprint",
    "precompute",
]

FORMAT_VERSION = 1


class CacheMismatchError(ValueError):
    """Cache on disk was built under a different configuration."""


def make_fingerprint(
    index: PatchIndex, params: RetrievalParams, exclude_self: bool, origin: int = 0
) -> dict:
    """Everything that determines cache contents, JSON-serialisable."""
    fp = {
        "origin": int(origin),
        "format": FORMAT_VERSION,
        "lookback": index.lookback,
        "horizon": index.horizon,
        "stride": index.stride,
        "periods": list(index.periods),
        "n_candidates": index.n_candidates,
        "channels": index.n_channels,
        "dataset_hash": index.dataset_hash,
        "m": params.m,
        "tau": params.tau,
        "metric": params.metric.kind,
        "channel_reduce": params.metric.channel_reduce,
        "selection": params.selection,
        "weighting": params.weighting,
        "exclude_self": bool(exclude_self),
    }
    if params.selection == "random":
        fp["selection_seed"] = params.seed
    return fp


@dataclass(eq=False)
class RetrievalCache:
    """Aggregated retrieval output for a fixed set of query starts."""

    fingerprint: dict
    query_starts: np.ndarray
    degenerate: np.ndarray
    aggregated: dict[int, np.ndarray]
    _rows: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._rows:
            self._rows = {int(q): i for i, q in enumerate(self.query_starts)}

    def __len__(self) -> int:
        return self.query_starts.shape[0]

    def row_of(self, query_start: int) -> int:
        try:
            return self._rows[int(query_start)]
        except KeyError:
            raise ValueError(f"query start {query_start} not in cache") from None

    def rows_of(self, query_starts) -> np.ndarray:
        return np.array([self.row_of(q) for q in query_starts], dtype=np.int64)

    def get(self, query_start: int) -> dict[int, np.ndarray]:
        """Aggregated (C, F // p) patch per period for one query."""
        row = self.row_of(query_start)
        return {p: self.aggregated[p][row] for p in self.aggregated}

    def is_degenerate(self, query_start: int) -> bool:
        return bool(self.degenerate[self.row_of(query_start)])

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        periods = sorted(self.aggregated)
        q = len(self)
        channels = self.aggregated[periods[0]].shape[1] if periods else 0
        header = {
            "fingerprint": self.fingerprint,
            "n_queries": q,
            "periods": periods,
            "channels": channels,
            "widths": {str(p): self.aggregated[p].shape[2] for p in periods},
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<B", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.query_starts, dtype=np.int64).tobytes())
            fh.write(np.ascontiguousarray(self.degenerate, dtype=np.uint8).tobytes())
            for p in periods:
                fh.write(np.ascontiguousarray(self.aggregated[p], dtype=np.float64).tobytes())

    @classmethod
    def load(cls, path: str | Path, expected_fingerprint: dict | None = None) -> "RetrievalCache":
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) < 5:
            raise ValueError(f"{path}: truncated cache file")
        version = raw[0]
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported cache format {version}")
        (hlen,) = struct.unpack_from("<I", raw, 1)
        if len(raw) < 5 + hlen:
            raise ValueError(f"{path}: truncated cache header")
        try:
            header = json.loads(raw[5 : 5 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: corrupt cache header: {exc}") from None
        fp = header["fingerprint"]
        if expected_fingerprint is not None and fp != expected_fingerprint:
            raise CacheMismatchError(
                f"{path}: cache fingerprint does not match the requested "
                f"configuration\n  cached:    {fp}\n  requested: {expected_fingerprint}"
            )
        q = int(header["n_queries"])
        channels = int(header["channels"])
        periods = [int(p) for p in header["periods"]]
        offset = 5 + hlen
        need = q * 8 + q
        for p in periods:
            need += q * channels * int(header["widths"][str(p)]) * 8
        if len(raw) - offset != need:
            raise ValueError(
                f"{path}: payload is {len(raw) - offset} bytes, expected {need}"
            )
        starts = np.frombuffer(raw, dtype=np.int64, count=q, offset=offset).copy()
        offset += q * 8
        degenerate = np.frombuffer(raw, dtype=np.uint8, count=q, offset=offset).astype(bool)
        offset += q
        aggregated = {}
        for p in periods:
            w = int(header["widths"][str(p)])
            block = np.frombuffer(raw, dtype=np.float64, count=q * channels * w, offset=offset)
            aggregated[p] = block.reshape(q, channels, w).copy()
            offset += q * channels * w * 8
        return cls(
            fingerprint=fp,
            query_starts=starts,
            degenerate=degenerate,
            aggregated=aggregated,
        )


def patches_for_starts(series: TimeSeries, starts, lookback: int) -> list[Patch]:
    """Query patches (views, no copies) for a sequence of window starts."""
    out = []
    for q in np.asarray(starts, dtype=np.int64):
        if q < 0 or q + lookback > series.n_steps:
            raise ValueError(f"query window at {q} falls outside the series")
        out.append(Patch(values=series.values[:, q : q + lookback], start=int(q)))
    return out


def precompute(
    index: PatchIndex,
    queries: list[Patch],
    params: RetrievalParams,
    exclude_self: bool,
    origin: int = 0,
) -> RetrievalCache:
    """Run retrieval for every query patch and collect the aggregates,
    keyed by query start.

    exclude_self applies the span-overlap rule at each query's own start;
    use it for training queries drawn from the indexed split and disable
    it for validation/test queries, which lie outside the index by
    construction. origin rebases query starts into index coordinates when
    the index was built on a view that does not begin at series step 0.

    The trainable metric is rejected: its scores change under training,
    so frozen aggregates would go stale without any fingerprint change.
    """
    if params.metric.trainable:
        raise ValueError(
            "precompute does not support the trainable projected metric; "
            "score it live so parameter updates take effect"
        )
    starts = np.array([q.start for q in queries], dtype=np.int64)
    if np.unique(starts).size != starts.size:
        raise ValueError("duplicate query starts")
    aggregated = {
        p: np.empty((starts.size, index.n_channels, index.horizon // p))
        for p in index.periods
    }
    degenerate = np.zeros(starts.size, dtype=bool)
    for i, patch in enumerate(queries):
        rule = (
            ExclusionRule(patch.start - origin) if exclude_self else ExclusionRule(None)
        )
        res = perform_retrieval(index, patch, params, rule)
        for p in index.periods:
            aggregated[p][i] = res.aggregated[p]
        degenerate[i] = res.degenerate
    return RetrievalCache(
        fingerprint=make_fingerprint(index, params, exclude_self, origin),
        query_starts=starts,
        degenerate=degenerate,
        aggregated=aggregated,
    )
