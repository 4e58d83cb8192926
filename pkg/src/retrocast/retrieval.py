"""Candidate indexing, similarity scoring, and weighted patch retrieval.

A query window is matched against every admissible historical window at
each pooling period. The top scorers are blended into one aggregated
continuation patch per period, which the forecaster consumes alongside
the query itself.

Scoring always goes through the same single-query code path, whether a
caller scores one window or precomputes thousands: batching matrix
products changes last-bit rounding, and downstream caching promises
bit-identical results either way.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .series import AnchoredPatch, Patch, TimeSeries, downsample, subtract_offset

__all__ = [
    "SimilarityMetric",
    "RetrievalParams",
    "ExclusionRule",
    "PatchIndex",
    "RetrievalResult",
    "ScoreSet",
    "build_index",
    "similarity",
    "score_all",
    "admissible_mask",
    "top_m",
    "softmax_weights",
    "retrieve",
    "random_retrieve",
    "perform_retrieval",
]

METRIC_KINDS = ("pearson", "cosine", "cosine_projected", "neg_l2")
CHANNEL_REDUCES = ("mean", "flatten")

# row-block size for the chunked euclidean path; constant so repeated
# scoring of the same query is bit-stable
_L2_BLOCK = 8192


@dataclass(eq=False)
class SimilarityMetric:
    """Similarity family plus its configuration.

    kind 'cosine_projected' owns trainable projection matrices, one pair
    per flattened input width; `version` ticks on every parameter update
    so cached key embeddings can be invalidated.
    """

    kind: str = "pearson"
    channel_reduce: str = "mean"
    embed_dim: int = 64
    projections: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    version: int = 0

    def __post_init__(self) -> None:
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}, expected one of {METRIC_KINDS}")
        if self.channel_reduce not in CHANNEL_REDUCES:
            raise ValueError(f"unknown channel_reduce {self.channel_reduce!r}")
        if self.kind == "cosine_projected" and self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")

    @property
    def trainable(self) -> bool:
        return self.kind == "cosine_projected"

    def ensure_projections(self, dims, seed: int) -> None:
        """Initialise projection pairs for the given flattened widths.

        Existing pairs are kept. Draw order is ascending width, query
        matrix before key matrix, so a fixed seed fixes every weight.
        """
        rng = np.random.default_rng(seed)
        for dim in sorted(set(int(d) for d in dims)):
            if dim in self.projections:
                continue
            bound = 1.0 / np.sqrt(dim)
            pq = rng.uniform(-bound, bound, size=(self.embed_dim, dim))
            pk = rng.uniform(-bound, bound, size=(self.embed_dim, dim))
            self.projections[dim] = {"q": pq, "k": pk}
            self.version += 1

    def projection(self, dim: int) -> dict[str, np.ndarray]:
        if dim not in self.projections:
            raise ValueError(
                f"no projection for flattened width {dim}; call ensure_projections first"
            )
        return self.projections[dim]

    def bump(self) -> None:
        self.version += 1


@dataclass(frozen=True)
class ExclusionRule:
    """Admissibility filter for candidate windows.

    query_start None admits everything (inference); otherwise candidates
    whose combined key+value span touches the query's own combined span
    are excluded, which is exactly |candidate_start - query_start| <
    lookback + horizon.
    """

    query_start: int | None = None


@dataclass(eq=False)
class PatchIndex:
    """Anchored key/value patches for every candidate window, per period.

    keys[p] is (N, C, L // p), values[p] is (N, C, F // p); both are
    anchored by the key's final pooled step at that period, so a key ends
    at exactly zero and its value is expressed relative to that anchor.
    """

    lookback: int
    horizon: int
    stride: int
    periods: tuple[int, ...]
    n_channels: int
    starts: np.ndarray
    keys: dict[int, np.ndarray]
    values: dict[int, np.ndarray]
    dataset_hash: str
    _packs: dict = field(default_factory=dict, repr=False)

    @property
    def n_candidates(self) -> int:
        return self.starts.shape[0]


def build_index(
    series: TimeSeries,
    lookback: int,
    horizon: int,
    stride: int = 1,
    periods: tuple[int, ...] = (1,),
) -> PatchIndex:
    """Slide a key+value window over the series and store anchored pooled
    copies for each period.

    stride thins the candidate grid; periods must each divide into both
    windows (p <= min(L, F)).
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be positive")
    if stride < 1:
        raise ValueError("stride must be positive")
    periods = tuple(sorted(set(int(p) for p in periods)))
    if not periods:
        raise ValueError("periods must be non-empty")
    if periods[0] < 1:
        raise ValueError("periods must be >= 1")
    if periods[-1] > min(lookback, horizon):
        raise ValueError(
            f"period {periods[-1]} exceeds min(lookback, horizon) = {min(lookback, horizon)}"
        )
    span = lookback + horizon
    if series.n_steps < span:
        raise ValueError(
            f"series too short: T={series.n_steps} < lookback+horizon={span}"
        )
    starts = np.arange(0, series.n_steps - span + 1, stride, dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(series.values, span, axis=1)
    sel = np.ascontiguousarray(windows[:, starts, :].transpose(1, 0, 2))  # (N, C, span)
    keys: dict[int, np.ndarray] = {}
    values: dict[int, np.ndarray] = {}
    for p in periods:
        kp = _pool(sel[:, :, :lookback], p)
        vp = _pool(sel[:, :, lookback:], p)
        anchor = kp[:, :, -1].copy()
        kp = kp - anchor[:, :, None]
        vp = vp - anchor[:, :, None]
        for a in (kp, vp):
            a.setflags(write=False)
        keys[p] = kp
        values[p] = vp
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(series.values).tobytes())
    digest.update(repr(series.values.shape).encode())
    return PatchIndex(
        lookback=lookback,
        horizon=horizon,
        stride=stride,
        periods=periods,
        n_channels=series.n_channels,
        starts=starts,
        keys=keys,
        values=values,
        dataset_hash=digest.hexdigest(),
    )


def _pool(a: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return np.ascontiguousarray(a)
    w = a.shape[-1]
    trimmed = a[..., w % p :]
    return trimmed.reshape(a.shape[:-1] + (w // p, p)).mean(axis=-1)


# ---------------------------------------------------------------------------
# scalar reference metric


def similarity(query: AnchoredPatch, key: AnchoredPatch, metric: SimilarityMetric) -> float:
    """Score one key against one query. The vectorised index path agrees
    with this definition to float64 round-off."""
    q = query.values
    k = key.values
    if q.shape != k.shape:
        raise ValueError(f"shape mismatch: query {q.shape} vs key {k.shape}")
    if metric.kind == "pearson":
        if metric.channel_reduce == "flatten":
            return _corr(q.ravel(), k.ravel())
        return float(np.mean([_corr(q[c], k[c]) for c in range(q.shape[0])]))
    if metric.kind == "cosine":
        if metric.channel_reduce == "flatten":
            return _cos(q.ravel(), k.ravel())
        return float(np.mean([_cos(q[c], k[c]) for c in range(q.shape[0])]))
    if metric.kind == "neg_l2":
        return float(-np.sqrt(np.sum((q - k) ** 2)))
    # cosine_projected
    proj = metric.projection(q.size)
    return _cos(proj["q"] @ q.ravel(), proj["k"] @ k.ravel())


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a0 = a - a.mean()
    b0 = b - b.mean()
    na = np.sqrt(a0 @ a0)
    nb = np.sqrt(b0 @ b0)
    if na == 0.0 or nb == 0.0:
        return 0.0  # zero-variance side scores zero by convention
    return float((a0 @ b0) / (na * nb))


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float((a @ b) / (na * nb))


# ---------------------------------------------------------------------------
# vectorised scoring packs (per index, period, metric flavour)


def _pack_pearson(index: PatchIndex, p: int, flatten: bool) -> np.ndarray:
    key = ("pearson", p, flatten)
    pack = index._packs.get(key)
    if pack is None:
        k = index.keys[p]
        n, c, w = k.shape
        if flatten:
            kf = k.reshape(n, c * w)
            kc = kf - kf.mean(axis=1, keepdims=True)
            nrm = np.sqrt(np.einsum("nd,nd->n", kc, kc))
            safe = nrm > 0.0
            kc[safe] /= nrm[safe, None]
            kc[~safe] = 0.0
            pack = kc
        else:
            kc = k - k.mean(axis=2, keepdims=True)
            nrm = np.sqrt(np.einsum("ncw,ncw->nc", kc, kc))
            safe = nrm > 0.0
            np.divide(kc, nrm[:, :, None], out=kc, where=safe[:, :, None])
            kc[~safe] = 0.0
            pack = kc.reshape(n, c * w)
        pack.setflags(write=False)
        index._packs[key] = pack
    return pack


def _pack_cosine(index: PatchIndex, p: int, flatten: bool) -> np.ndarray:
    key = ("cosine", p, flatten)
    pack = index._packs.get(key)
    if pack is None:
        k = index.keys[p]
        n, c, w = k.shape
        if flatten:
            kf = k.reshape(n, c * w).copy()
            nrm = np.sqrt(np.einsum("nd,nd->n", kf, kf))
            safe = nrm > 0.0
            kf[safe] /= nrm[safe, None]
            kf[~safe] = 0.0
            pack = kf
        else:
            kc = k.copy()
            nrm = np.sqrt(np.einsum("ncw,ncw->nc", kc, kc))
            safe = nrm > 0.0
            np.divide(kc, nrm[:, :, None], out=kc, where=safe[:, :, None])
            kc[~safe] = 0.0
            pack = kc.reshape(n, c * w)
        pack.setflags(write=False)
        index._packs[key] = pack
    return pack


def _pack_l2(index: PatchIndex, p: int) -> tuple[np.ndarray, None]:
    key = ("neg_l2", p)
    pack = index._packs.get(key)
    if pack is None:
        k = index.keys[p]
        pack = k.reshape(k.shape[0], -1)  # contiguous view, no copy
        index._packs[key] = pack
    return pack, None


def _pack_projected(index: PatchIndex, p: int, metric: SimilarityMetric):
    k = index.keys[p]
    n, c, w = k.shape
    key = ("proj", p, metric.version)
    pack = index._packs.get(key)
    if pack is None:
        # drop packs for stale parameter versions
        for stale in [kk for kk in index._packs if kk[0] == "proj" and kk[1] == p]:
            del index._packs[stale]
        proj = metric.projection(c * w)
        emb = k.reshape(n, c * w) @ proj["k"].T
        nrm = np.sqrt(np.einsum("nd,nd->n", emb, emb))
        pack = (emb, nrm)
        index._packs[key] = pack
    return pack


def _score_one(
    index: PatchIndex, p: int, qvals: np.ndarray, metric: SimilarityMetric
) -> np.ndarray:
    """Scores of every candidate at one period for one anchored query.

    This is the canonical scoring path; every public entry point funnels
    through it so identical queries always produce identical bits.
    """
    c, w = qvals.shape
    if metric.kind == "pearson":
        flatten = metric.channel_reduce == "flatten"
        pack = _pack_pearson(index, p, flatten)
        if flatten:
            q0 = qvals.ravel() - qvals.mean()
            nq = np.sqrt(q0 @ q0)
            if nq == 0.0:
                return np.zeros(index.n_candidates)
            return pack @ (q0 / nq)
        q0 = qvals - qvals.mean(axis=1, keepdims=True)
        nq = np.sqrt(np.einsum("cw,cw->c", q0, q0))
        coef = np.zeros_like(q0)
        safe = nq > 0.0
        coef[safe] = q0[safe] / (c * nq[safe, None])
        return pack @ coef.ravel()
    if metric.kind == "cosine":
        flatten = metric.channel_reduce == "flatten"
        pack = _pack_cosine(index, p, flatten)
        if flatten:
            qf = qvals.ravel()
            nq = np.sqrt(qf @ qf)
            if nq == 0.0:
                return np.zeros(index.n_candidates)
            return pack @ (qf / nq)
        nq = np.sqrt(np.einsum("cw,cw->c", qvals, qvals))
        coef = np.zeros_like(qvals)
        safe = nq > 0.0
        coef[safe] = qvals[safe] / (c * nq[safe, None])
        return pack @ coef.ravel()
    if metric.kind == "neg_l2":
        pack, _ = _pack_l2(index, p)
        qf = qvals.ravel()
        out = np.empty(pack.shape[0])
        for lo in range(0, pack.shape[0], _L2_BLOCK):
            hi = min(lo + _L2_BLOCK, pack.shape[0])
            d = pack[lo:hi] - qf
            out[lo:hi] = np.einsum("nd,nd->n", d, d)
        return -np.sqrt(out)
    # cosine_projected
    proj = metric.projection(c * w)
    emb, nrm = _pack_projected(index, p, metric)
    a = proj["q"] @ qvals.ravel()
    na = np.sqrt(a @ a)
    if na == 0.0:
        return np.zeros(index.n_candidates)
    dots = emb @ a
    out = np.zeros(index.n_candidates)
    safe = nrm > 0.0
    out[safe] = dots[safe] / (nrm[safe] * na)
    return out


# ---------------------------------------------------------------------------
# admissibility, selection, weighting


def admissible_mask(index: PatchIndex, exclusion: ExclusionRule) -> np.ndarray:
    if exclusion.query_start is None:
        return np.ones(index.n_candidates, dtype=bool)
    gap = np.abs(index.starts - int(exclusion.query_start))
    return gap >= index.lookback + index.horizon


@dataclass(eq=False)
class ScoreSet:
    """Raw scores for every candidate per period, plus the admissibility mask."""

    scores: dict[int, np.ndarray]
    admissible: np.ndarray


def score_all(
    index: PatchIndex,
    queries: dict[int, AnchoredPatch],
    metric: SimilarityMetric,
    exclusion: ExclusionRule = ExclusionRule(),
) -> ScoreSet:
    """Score one pre-pooled anchored query per period against all candidates."""
    for p in index.periods:
        if p not in queries:
            raise ValueError(f"missing query for period {p}")
        q = queries[p]
        expect = (index.n_channels, index.lookback // p)
        if q.values.shape != expect:
            raise ValueError(
                f"period {p} query has shape {q.values.shape}, expected {expect}"
            )
    scores = {p: _score_one(index, p, queries[p].values, metric) for p in index.periods}
    return ScoreSet(scores=scores, admissible=admissible_mask(index, exclusion))


def top_m(
    scores: np.ndarray,
    admissible: np.ndarray,
    m: int,
    starts: np.ndarray | None = None,
) -> np.ndarray:
    """Positions of the m best admissible scores.

    Ties at the cut are broken toward the smallest start so selection is a
    pure function of its inputs. Output is ordered by descending score,
    then ascending start. Fewer than m admissible candidates returns all
    of them; zero returns an empty array.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != admissible.shape:
        raise ValueError("scores and admissibility mask must align")
    pos = np.flatnonzero(admissible)
    if pos.size == 0:
        return np.empty(0, dtype=np.int64)
    sub = scores[pos]
    if not np.all(np.isfinite(sub)):
        raise ValueError("scores must be finite")
    tie = pos if starts is None else np.asarray(starts)[pos]
    k = min(m, pos.size)
    if k == pos.size:
        chosen = np.arange(pos.size)
    else:
        thr = np.partition(sub, pos.size - k)[pos.size - k]
        above = np.flatnonzero(sub > thr)
        need = k - above.size
        at = np.flatnonzero(sub == thr)
        at = at[np.argsort(tie[at], kind="stable")][:need]
        chosen = np.concatenate([above, at])
    order = np.lexsort((tie[chosen], -sub[chosen]))
    return pos[chosen[order]].astype(np.int64)


def softmax_weights(scores: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax with max-subtraction. Low tau sharpens toward
    one-hot, high tau flattens toward uniform."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot weight an empty selection")
    z = scores / tau
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


# ---------------------------------------------------------------------------
# retrieval


@dataclass(eq=False)
class RetrievalResult:
    """Selected candidates and their blended continuation, per period.

    aggregated[p] is (C, F // p), the weight-blended anchored value patch;
    degenerate marks the no-admissible-candidate case where every
    aggregate is zero and selections are empty.
    """

    periods: tuple[int, ...]
    selected: dict[int, np.ndarray]
    selected_starts: dict[int, np.ndarray]
    scores: dict[int, np.ndarray]
    weights: dict[int, np.ndarray]
    aggregated: dict[int, np.ndarray]
    query: dict[int, AnchoredPatch]
    tau: float
    weighting: str
    degenerate: bool


@dataclass(frozen=True)
class RetrievalParams:
    """Everything that shapes a retrieval besides the query itself."""

    m: int
    tau: float = 0.1
    metric: SimilarityMetric = field(default_factory=SimilarityMetric)
    selection: str = "similarity"  # or "random"
    weighting: str = "softmax"  # or "uniform"
    seed: int = 0  # used only by random selection

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.selection not in ("similarity", "random"):
            raise ValueError(f"unknown selection {self.selection!r}")
        if self.weighting not in ("softmax", "uniform"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


def _pooled_queries(index: PatchIndex, query: Patch) -> dict[int, AnchoredPatch]:
    if query.period != 1:
        raise ValueError("query must be a raw (period 1) patch")
    if query.width != index.lookback:
        raise ValueError(
            f"query width {query.width} does not match index lookback {index.lookback}"
        )
    if query.n_channels != index.n_channels:
        raise ValueError(
            f"query has {query.n_channels} channels, index has {index.n_channels}"
        )
    return {p: subtract_offset(downsample(query, p)) for p in index.periods}


def _degenerate(index: PatchIndex, pooled, tau: float, weighting: str) -> RetrievalResult:
    empty_i = np.empty(0, dtype=np.int64)
    empty_f = np.empty(0, dtype=np.float64)
    return RetrievalResult(
        periods=index.periods,
        selected={p: empty_i for p in index.periods},
        selected_starts={p: empty_i for p in index.periods},
        scores={p: empty_f for p in index.periods},
        weights={p: empty_f for p in index.periods},
        aggregated={
            p: np.zeros((index.n_channels, index.horizon // p)) for p in index.periods
        },
        query=pooled,
        tau=tau,
        weighting=weighting,
        degenerate=True,
    )


def _aggregate(values: np.ndarray, sel: np.ndarray, weights: np.ndarray) -> np.ndarray:
    picked = values[sel]  # (k, C, W)
    return np.tensordot(weights, picked, axes=(0, 0))


def retrieve(
    index: PatchIndex,
    query: Patch,
    m: int,
    tau: float,
    metric: SimilarityMetric,
    exclusion: ExclusionRule = ExclusionRule(),
    weighting: str = "softmax",
) -> RetrievalResult:
    """Score, select, weight, and blend the top-m candidates per period."""
    if weighting not in ("softmax", "uniform"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if m < 1:
        raise ValueError("m must be >= 1")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    pooled = _pooled_queries(index, query)
    mask = admissible_mask(index, exclusion)
    if not mask.any():
        return _degenerate(index, pooled, tau, weighting)
    selected = {}
    sel_starts = {}
    sel_scores = {}
    sel_weights = {}
    aggregated = {}
    for p in index.periods:
        scores = _score_one(index, p, pooled[p].values, metric)
        sel = top_m(scores, mask, m, index.starts)
        sc = scores[sel]
        if weighting == "softmax":
            w = softmax_weights(sc, tau)
        else:
            w = np.full(sel.size, 1.0 / sel.size)
        selected[p] = sel
        sel_starts[p] = index.starts[sel]
        sel_scores[p] = sc
        sel_weights[p] = w
        aggregated[p] = _aggregate(index.values[p], sel, w)
    return RetrievalResult(
        periods=index.periods,
        selected=selected,
        selected_starts=sel_starts,
        scores=sel_scores,
        weights=sel_weights,
        aggregated=aggregated,
        query=pooled,
        tau=tau,
        weighting=weighting,
        degenerate=False,
    )


def random_retrieve(
    index: PatchIndex,
    query: Patch,
    m: int,
    seed: int,
    exclusion: ExclusionRule = ExclusionRule(),
    metric: SimilarityMetric | None = None,
) -> RetrievalResult:
    """Uniformly sample m admissible candidates and blend them with equal
    weights. Selection ignores similarity entirely; the reported scores
    are filled in afterwards so results stay inspectable."""
    if m < 1:
        raise ValueError("m must be >= 1")
    metric = metric or SimilarityMetric()
    pooled = _pooled_queries(index, query)
    mask = admissible_mask(index, exclusion)
    adm = np.flatnonzero(mask)
    if adm.size == 0:
        return _degenerate(index, pooled, tau=1.0, weighting="uniform")
    rng = np.random.default_rng(seed)
    k = min(m, adm.size)
    sel = np.sort(rng.choice(adm, size=k, replace=False)).astype(np.int64)
    selected = {}
    sel_starts = {}
    sel_scores = {}
    sel_weights = {}
    aggregated = {}
    for p in index.periods:
        w = np.full(k, 1.0 / k)
        sc = np.array(
            [
                similarity(
                    pooled[p],
                    AnchoredPatch(
                        values=index.keys[p][i],
                        offset=np.zeros(index.n_channels),
                    ),
                    metric,
                )
                for i in sel
            ]
        )
        selected[p] = sel
        sel_starts[p] = index.starts[sel]
        sel_scores[p] = sc
        sel_weights[p] = w
        aggregated[p] = _aggregate(index.values[p], sel, w)
    return RetrievalResult(
        periods=index.periods,
        selected=selected,
        selected_starts=sel_starts,
        scores=sel_scores,
        weights=sel_weights,
        aggregated=aggregated,
        query=pooled,
        tau=1.0,
        weighting="uniform",
        degenerate=False,
    )


def perform_retrieval(
    index: PatchIndex,
    query: Patch,
    params: RetrievalParams,
    exclusion: ExclusionRule = ExclusionRule(),
) -> RetrievalResult:
    """Dispatch on the configured selection strategy.

    Random selection derives its stream from (seed, query start) so each
    query draws independently yet reproducibly.
    """
    if params.selection == "random":
        return random_retrieve(
            index,
            query,
            params.m,
            seed=_query_seed(params.seed, query.start),
            exclusion=exclusion,
            metric=params.metric,
        )
    return retrieve(
        index,
        query,
        params.m,
        params.tau,
        params.metric,
        exclusion=exclusion,
        weighting=params.weighting,
    )


def _query_seed(base: int, start: int) -> list[int]:
    return [int(base), int(start)]
