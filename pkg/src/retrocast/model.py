"""Linear forecaster over anchored windows plus retrieved continuations.

The model is three linear maps, each applied per channel with shared
weights: f reads the anchored input window, one g per period reads the
aggregated retrieved continuation, and h mixes both branches into the
anchored forecast. The window's final value is added back at the end, so
the network only ever models offsets from the most recent observation.

Gradients are computed analytically (plain matrix calculus, no autograd)
and checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import RetrievalCache, patches_for_starts, precompute
from .retrieval import (
    ExclusionRule,
    PatchIndex,
    RetrievalParams,
    RetrievalResult,
    SimilarityMetric,
    perform_retrieval,
    softmax_weights,
)
from .series import Patch, SplitView, TimeSeries, subtract_offset

__all__ = [
    "ForecastModel",
    "TrainConfig",
    "TrainHistory",
    "TrainSample",
    "TrainingDivergedError",
    "init_model",
    "forward",
    "predict",
    "predict_windows",
    "loss",
    "gradients",
    "batch_loss",
    "batch_gradients",
    "Adam",
    "SGD",
    "make_optimizer",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = 1


class TrainingDivergedError(RuntimeError):
    """A parameter or loss went non-finite during optimisation."""


@dataclass(eq=False)
class ForecastModel:
    """Channel-shared linear heads. Weight shapes follow (out, in)."""

    lookback: int
    horizon: int
    periods: tuple[int, ...]
    w_f: np.ndarray
    b_f: np.ndarray
    w_g: dict[int, np.ndarray]
    b_g: dict[int, np.ndarray]
    w_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self) -> None:
        l, f = self.lookback, self.horizon
        if self.w_f.shape != (f, l):
            raise ValueError(f"w_f must be ({f}, {l}), got {self.w_f.shape}")
        if self.b_f.shape != (f,):
            raise ValueError(f"b_f must be ({f},), got {self.b_f.shape}")
        for p in self.periods:
            if self.w_g[p].shape != (f, f // p):
                raise ValueError(f"w_g[{p}] must be ({f}, {f // p}), got {self.w_g[p].shape}")
            if self.b_g[p].shape != (f,):
                raise ValueError(f"b_g[{p}] must be ({f},), got {self.b_g[p].shape}")
        if self.w_h.shape != (f, 2 * f):
            raise ValueError(f"w_h must be ({f}, {2 * f}), got {self.w_h.shape}")
        if self.b_h.shape != (f,):
            raise ValueError(f"b_h must be ({f},), got {self.b_h.shape}")

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references in a stable order; optimisers mutate these."""
        out = {"f.weight": self.w_f, "f.bias": self.b_f}
        for p in self.periods:
            out[f"g{p}.weight"] = self.w_g[p]
            out[f"g{p}.bias"] = self.b_g[p]
        out["h.weight"] = self.w_h
        out["h.bias"] = self.b_h
        return out

    def copy(self) -> "ForecastModel":
        return ForecastModel(
            lookback=self.lookback,
            horizon=self.horizon,
            periods=self.periods,
            w_f=self.w_f.copy(),
            b_f=self.b_f.copy(),
            w_g={p: self.w_g[p].copy() for p in self.periods},
            b_g={p: self.b_g[p].copy() for p in self.periods},
            w_h=self.w_h.copy(),
            b_h=self.b_h.copy(),
        )

    def load_state(self, params: dict[str, np.ndarray]) -> None:
        for name, value in self.parameters().items():
            value[...] = params[name]


def init_model(
    lookback: int, horizon: int, periods: tuple[int, ...] = (1,), seed: int = 0
) -> ForecastModel:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    Draw order is f, then g per ascending period, then h, so a seed pins
    every weight regardless of how the model is later used.
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be positive")
    periods = tuple(sorted(set(int(p) for p in periods)))
    if not periods or periods[0] < 1:
        raise ValueError("periods must be a non-empty set of positive ints")
    if periods[-1] > min(lookback, horizon):
        raise ValueError("largest period exceeds min(lookback, horizon)")
    rng = np.random.default_rng(seed)

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    w_f = u((horizon, lookback), lookback)
    w_g = {}
    b_g = {}
    for p in periods:
        w_g[p] = u((horizon, horizon // p), horizon // p)
        b_g[p] = np.zeros(horizon)
    w_h = u((horizon, 2 * horizon), 2 * horizon)
    return ForecastModel(
        lookback=lookback,
        horizon=horizon,
        periods=periods,
        w_f=w_f,
        b_f=np.zeros(horizon),
        w_g=w_g,
        b_g=b_g,
        w_h=w_h,
        b_h=np.zeros(horizon),
    )


# ---------------------------------------------------------------------------
# forward


def _forward_rows(
    model: ForecastModel, xhat: np.ndarray, vt: dict[int, np.ndarray] | None
):
    """Row-wise forward pass. xhat is (R, L) anchored inputs, vt maps
    period to (R, F // p) aggregated retrievals, or None to drop the
    retrieval branch (and the half of h that reads it) entirely."""
    f = model.horizon
    fx = xhat @ model.w_f.T + model.b_f
    hl = model.w_h[:, :f]
    if vt is None:
        return fx @ hl.T + model.b_h, fx, None
    racc = np.zeros_like(fx)
    for p in model.periods:
        racc += vt[p] @ model.w_g[p].T + model.b_g[p]
    hr = model.w_h[:, f:]
    yhat = fx @ hl.T + racc @ hr.T + model.b_h
    return yhat, fx, racc


def predict_windows(
    model: ForecastModel,
    windows: np.ndarray,
    vt: dict[int, np.ndarray] | None,
) -> np.ndarray:
    """Forecast a batch of raw (B, C, L) input windows.

    vt carries (B, C, F // p) aggregates per period, or None for the
    no-retrieval variant. Returns (B, C, F) in the input's units.
    """
    b, c, l = windows.shape
    if l != model.lookback:
        raise ValueError(f"window length {l} does not match lookback {model.lookback}")
    off = windows[:, :, -1]
    xhat = (windows - off[:, :, None]).reshape(b * c, l)
    vt_rows = None
    if vt is not None:
        vt_rows = {p: vt[p].reshape(b * c, -1) for p in model.periods}
    yhat, _, _ = _forward_rows(model, xhat, vt_rows)
    return yhat.reshape(b, c, model.horizon) + off[:, :, None]


def forward(
    model: ForecastModel, x: Patch, retrieval: RetrievalResult | None = None
) -> np.ndarray:
    """Forecast one window. Pass the retrieval result for the full model
    or None for the pure-linear variant."""
    if x.period != 1 or x.width != model.lookback:
        raise ValueError("input must be a raw patch of exactly lookback width")
    vt = None
    if retrieval is not None:
        vt = {p: retrieval.aggregated[p][None, :, :] for p in model.periods}
    return predict_windows(model, x.values[None, :, :], vt)[0]


def predict(
    model: ForecastModel,
    x: Patch,
    index: PatchIndex | None = None,
    params: RetrievalParams | None = None,
    use_retrieval: bool = True,
) -> np.ndarray:
    """Retrieve (no exclusion: inference queries are outside the index)
    and forecast one window."""
    if not use_retrieval:
        return forward(model, x, None)
    if index is None or params is None:
        raise ValueError("retrieval requires an index and retrieval params")
    res = perform_retrieval(index, x, params, ExclusionRule(None))
    return forward(model, x, res)


def loss(y: np.ndarray, y0: np.ndarray) -> float:
    """Mean squared error over every entry (and the batch, if batched)."""
    y = np.asarray(y, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    if y.shape != y0.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y0.shape}")
    return float(np.mean((y - y0) ** 2))


# ---------------------------------------------------------------------------
# loss and analytic gradients


@dataclass(eq=False)
class TrainSample:
    """One training example: a raw input window, its true continuation in
    the same units, and an optional retrieval result for the window."""

    query: Patch
    target: np.ndarray
    retrieval: RetrievalResult | None = None


def _proj_forward(metric: SimilarityMetric, result: RetrievalResult, index: PatchIndex, p: int):
    """Recompute selection weights for the trainable metric at its current
    parameters. Selection positions stay frozen; only scores, weights, and
    the blended value move, which is exactly the gradient semantics."""
    sel = result.selected[p]
    qf = result.query[p].values.ravel()
    kf = index.keys[p][sel].reshape(sel.size, -1)
    vsel = index.values[p][sel]
    proj = metric.projection(qf.size)
    a = proj["q"] @ qf
    na = float(np.sqrt(a @ a))
    b = kf @ proj["k"].T
    nb = np.sqrt(np.einsum("kd,kd->k", b, b))
    rho = np.zeros(sel.size)
    if na > 0.0:
        safe = nb > 0.0
        rho[safe] = (b[safe] @ a) / (nb[safe] * na)
    if result.weighting == "softmax":
        w = softmax_weights(rho, result.tau)
    else:
        w = np.full(sel.size, 1.0 / max(sel.size, 1))
    vt = np.tensordot(w, vsel, axes=(0, 0))
    return {
        "qf": qf, "kf": kf, "vsel": vsel, "a": a, "na": na, "b": b, "nb": nb,
        "rho": rho, "w": w, "vt": vt,
    }


def _assemble(model, batch, metric, index):
    if not batch:
        raise ValueError("empty batch")
    c = batch[0].query.n_channels
    l, f = model.lookback, model.horizon
    with_retrieval = batch[0].retrieval is not None
    for s in batch:
        if (s.retrieval is not None) != with_retrieval:
            raise ValueError("batch mixes retrieval and no-retrieval samples")
        if s.query.values.shape != (c, l) or s.target.shape != (c, f):
            raise ValueError("inconsistent sample shapes in batch")
    rows = len(batch) * c
    xhat = np.empty((rows, l))
    off = np.empty(rows)
    y0 = np.empty((rows, f))
    for i, s in enumerate(batch):
        anchored = subtract_offset(s.query)
        xhat[i * c : (i + 1) * c] = anchored.values
        off[i * c : (i + 1) * c] = anchored.offset
        y0[i * c : (i + 1) * c] = s.target
    vt = None
    proj_ctx = None
    if with_retrieval:
        trainable = metric is not None and metric.trainable
        if trainable and index is None:
            raise ValueError("trainable metric needs the index to recompute weights")
        vt = {p: np.empty((rows, f // p)) for p in model.periods}
        if trainable:
            proj_ctx = [dict() for _ in batch]
        for i, s in enumerate(batch):
            for p in model.periods:
                if trainable and not s.retrieval.degenerate:
                    ctx = _proj_forward(metric, s.retrieval, index, p)
                    proj_ctx[i][p] = ctx
                    vt[p][i * c : (i + 1) * c] = ctx["vt"]
                else:
                    vt[p][i * c : (i + 1) * c] = s.retrieval.aggregated[p]
    return xhat, off, y0, vt, proj_ctx


def _rows_loss(model, xhat, off, y0, vt) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    yhat, fx, racc = _forward_rows(model, xhat, vt)
    y = yhat + off[:, None]
    resid = y - y0
    loss = float(np.mean(resid**2))
    return loss, resid, fx, racc


def _rows_gradients(model, xhat, off, y0, vt):
    """Loss plus d(loss)/d(params) for one assembled batch of rows."""
    loss, resid, fx, racc = _rows_loss(model, xhat, off, y0, vt)
    f = model.horizon
    dy = (2.0 / resid.size) * resid
    hl = model.w_h[:, :f]
    grads = {name: None for name in model.parameters()}
    grads["h.bias"] = dy.sum(axis=0)
    dfx = dy @ hl
    grads["f.weight"] = dfx.T @ xhat
    grads["f.bias"] = dfx.sum(axis=0)
    if vt is None:
        grads["h.weight"] = np.concatenate([dy.T @ fx, np.zeros((f, f))], axis=1)
        for p in model.periods:
            grads[f"g{p}.weight"] = np.zeros_like(model.w_g[p])
            grads[f"g{p}.bias"] = np.zeros_like(model.b_g[p])
        return loss, grads, dy, None
    hr = model.w_h[:, f:]
    grads["h.weight"] = np.concatenate([dy.T @ fx, dy.T @ racc], axis=1)
    dr = dy @ hr
    for p in model.periods:
        grads[f"g{p}.weight"] = dr.T @ vt[p]
        grads[f"g{p}.bias"] = dr.sum(axis=0)
    return loss, grads, dy, dr


def batch_loss(
    model: ForecastModel,
    batch: list[TrainSample],
    metric: SimilarityMetric | None = None,
    index: PatchIndex | None = None,
) -> float:
    """Mean squared error of the batch under the current parameters."""
    xhat, off, y0, vt, _ = _assemble(model, batch, metric, index)
    loss, _, _, _ = _rows_loss(model, xhat, off, y0, vt)
    return loss


def batch_gradients(
    model: ForecastModel,
    batch: list[TrainSample],
    metric: SimilarityMetric | None = None,
    index: PatchIndex | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Analytic gradients for every model parameter and, for the trainable
    metric, its projection matrices. Retrieval weights are differentiated
    through the softmax; the discrete selection is held fixed."""
    xhat, off, y0, vt, proj_ctx = _assemble(model, batch, metric, index)
    total, grads, dy, dr = _rows_gradients(model, xhat, off, y0, vt)
    if proj_ctx is not None:
        c = batch[0].query.n_channels
        for dim, proj in metric.projections.items():
            grads[f"proj.{dim}.q"] = np.zeros_like(proj["q"])
            grads[f"proj.{dim}.k"] = np.zeros_like(proj["k"])
        for i, per_p in enumerate(proj_ctx):
            dvt_rows = {p: dr[i * c : (i + 1) * c] @ model.w_g[p] for p in model.periods}
            for p, ctx in per_p.items():
                if ctx["w"].size == 0 or batch[i].retrieval.weighting != "softmax":
                    continue
                dvt = dvt_rows[p].reshape(-1)
                dw = ctx["vsel"].reshape(ctx["w"].size, -1) @ dvt
                w = ctx["w"]
                drho = (w / batch[i].retrieval.tau) * (dw - float(w @ dw))
                a, na, b, nb = ctx["a"], ctx["na"], ctx["b"], ctx["nb"]
                if na == 0.0:
                    continue
                da = np.zeros_like(a)
                dim = ctx["qf"].size
                gq = grads[f"proj.{dim}.q"]
                gk = grads[f"proj.{dim}.k"]
                for j in range(w.size):
                    if nb[j] == 0.0 or drho[j] == 0.0:
                        continue
                    bj = b[j]
                    rho_j = ctx["rho"][j]
                    da += drho[j] * (bj / (na * nb[j]) - rho_j * a / (na * na))
                    db = drho[j] * (a / (na * nb[j]) - rho_j * bj / (nb[j] * nb[j]))
                    gk += np.outer(db, ctx["kf"][j])
                gq += np.outer(da, ctx["qf"])
    return total, grads


# spec-facing name: a batch of (x, retrieval, y0) in, gradients out
gradients = batch_gradients


# ---------------------------------------------------------------------------
# optimisers


class Adam:
    """Standard Adam with bias correction, updating arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p -= self.lr * grads[k]


def make_optimizer(params: dict[str, np.ndarray], config: "TrainConfig"):
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    raise ValueError(f"unknown optimizer {config.optimizer!r}")


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    stopped_early: bool = False


def _gather_windows(series: TimeSeries, starts: np.ndarray, width: int, at: int) -> np.ndarray:
    """(B, C, width) copies of series windows beginning at starts + at."""
    view = np.lib.stride_tricks.sliding_window_view(series.values, width, axis=1)
    return np.ascontiguousarray(view[:, starts + at, :].transpose(1, 0, 2))


def _vt_rows_from_cache(cache: RetrievalCache, starts: np.ndarray, periods) -> dict[int, np.ndarray]:
    rows = cache.rows_of(starts)
    return {p: cache.aggregated[p][rows] for p in periods}


def _live_vt(index, series, starts, params, exclude_self) -> dict[int, np.ndarray]:
    out = {p: np.empty((starts.size, index.n_channels, index.horizon // p)) for p in index.periods}
    for i, q in enumerate(starts):
        patch = Patch(values=series.values[:, q : q + index.lookback], start=int(q))
        rule = ExclusionRule(int(q)) if exclude_self else ExclusionRule(None)
        res = perform_retrieval(index, patch, params, rule)
        for p in index.periods:
            out[p][i] = res.aggregated[p]
    return out


def _mean_mse(
    model, series, starts, periods, cache, live, chunk: int = 2048
) -> float:
    """Mean squared error over forecast windows, retrieval from cache or
    recomputed live, in the series' own units."""
    if starts.size == 0:
        raise ValueError("no evaluation windows")
    total = 0.0
    count = 0
    for lo in range(0, starts.size, chunk):
        part = starts[lo : lo + chunk]
        x = _gather_windows(series, part, model.lookback, 0)
        y0 = _gather_windows(series, part, model.horizon, model.lookback)
        if cache is not None:
            vt = _vt_rows_from_cache(cache, part, periods)
        elif live is not None:
            index, params, exclude_self = live
            vt = _live_vt(index, series, part, params, exclude_self)
        else:
            vt = None
        pred = predict_windows(model, x, vt)
        total += float(np.sum((pred - y0) ** 2))
        count += y0.size
    return total / count


def train(
    model: ForecastModel,
    series: TimeSeries,
    train_view: SplitView,
    val_view: SplitView,
    config: TrainConfig,
    index: PatchIndex | None = None,
    rparams: RetrievalParams | None = None,
    train_cache: RetrievalCache | None = None,
    val_cache: RetrievalCache | None = None,
    use_retrieval: bool = True,
    index_origin: int = 0,
) -> tuple[ForecastModel, TrainHistory]:
    """Mini-batch MSE training with early stopping on validation loss.

    Training queries are every stride-1 window of the train view. With a
    frozen metric, retrieval comes from the supplied caches (built here if
    missing); the trainable metric is scored live each batch so projection
    updates feed back into the weights.

    The model is updated in place and returned holding the parameters of
    its best validation epoch.
    """
    l, f = model.lookback, model.horizon
    train_starts = train_view.window_starts(l, f, 1)
    val_starts = val_view.window_starts(l, f, 1)
    if train_starts.size == 0:
        raise ValueError("train split has no forecast windows; need at least lookback+horizon steps")
    if val_starts.size == 0:
        raise ValueError("validation split has no forecast windows")

    live_metric = use_retrieval and rparams is not None and rparams.metric.trainable
    opt_params = model.parameters()
    if use_retrieval:
        if rparams is None or index is None:
            raise ValueError("retrieval training requires an index and retrieval params")
        if live_metric:
            dims = [index.n_channels * (l // p) for p in index.periods]
            rparams.metric.ensure_projections(dims, seed=config.seed)
            opt_params = dict(opt_params)
            for dim in sorted(rparams.metric.projections):
                opt_params[f"proj.{dim}.q"] = rparams.metric.projections[dim]["q"]
                opt_params[f"proj.{dim}.k"] = rparams.metric.projections[dim]["k"]
        else:
            if train_cache is None:
                train_cache = precompute(
                    index, patches_for_starts(series, train_starts, l),
                    rparams, exclude_self=True, origin=index_origin,
                )
            if val_cache is None:
                val_cache = precompute(
                    index, patches_for_starts(series, val_starts, l),
                    rparams, exclude_self=False,
                )

    # windows are gathered per batch from a strided view; materialising
    # every input window up front costs B*C*L floats and is never needed
    x_view = np.lib.stride_tricks.sliding_window_view(series.values, l, axis=1)
    y_all = _gather_windows(series, train_starts, f, l)
    c = series.n_channels
    vt_all = None
    if use_retrieval and not live_metric:
        vt_all = _vt_rows_from_cache(train_cache, train_starts, model.periods)

    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(opt_params, config)
    history = TrainHistory()
    best_params = {k: v.copy() for k, v in model.parameters().items()}

    n = train_starts.size
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            if live_metric:
                batch = []
                for i in sel:
                    q = int(train_starts[i])
                    patch = Patch(values=series.values[:, q : q + l], start=q)
                    res = perform_retrieval(
                        index, patch, rparams, ExclusionRule(q - index_origin)
                    )
                    batch.append(TrainSample(patch, y_all[i], res))
                loss, grads = batch_gradients(model, batch, rparams.metric, index)
            else:
                b = sel.size
                x = x_view[:, train_starts[sel], :].transpose(1, 0, 2)
                offs = x[:, :, -1]
                xhat = (x - offs[:, :, None]).reshape(b * c, l)
                off = offs.reshape(b * c)
                y0 = y_all[sel].reshape(b * c, f)
                vt = None
                if vt_all is not None:
                    vt = {p: vt_all[p][sel].reshape(b * c, -1) for p in model.periods}
                loss, grads, _, _ = _rows_gradients(model, xhat, off, y0, vt)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}; lower the learning rate"
                )
            optimizer.step(grads)
            if live_metric:
                rparams.metric.bump()
            epoch_loss += loss * sel.size
        for name, value in opt_params.items():
            if not np.all(np.isfinite(value)):
                raise TrainingDivergedError(
                    f"parameter {name} became non-finite at epoch {epoch}; "
                    "lower the learning rate"
                )
        val_cache_now = val_cache
        live = None
        if use_retrieval and live_metric:
            live = (index, rparams, False)
        val_mse = _mean_mse(
            model, series, val_starts, model.periods,
            val_cache_now if use_retrieval and not live_metric else None,
            live,
        )
        history.train_loss.append(epoch_loss / n)
        history.val_loss.append(val_mse)
        history.epoch_seconds.append(time.perf_counter() - t0)
        if val_mse < history.best_val:
            history.best_val = val_mse
            history.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.parameters().items()}
        elif epoch - history.best_epoch >= config.patience:
            history.stopped_early = True
            break
    model.load_state(best_params)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: str | Path,
    model: ForecastModel,
    metric: SimilarityMetric | None = None,
    extra: dict | None = None,
) -> None:
    """Single-file checkpoint: version byte, uint32 header length, JSON
    header naming every tensor, then raw float64 tensors in header order.
    Round-trips bit for bit."""
    tensors: list[tuple[str, np.ndarray]] = list(model.parameters().items())
    metric_info = None
    if metric is not None and metric.trainable:
        metric_info = {
            "kind": metric.kind,
            "channel_reduce": metric.channel_reduce,
            "embed_dim": metric.embed_dim,
            "dims": sorted(metric.projections),
        }
        for dim in sorted(metric.projections):
            tensors.append((f"proj.{dim}.q", metric.projections[dim]["q"]))
            tensors.append((f"proj.{dim}.k", metric.projections[dim]["k"]))
    header = {
        "format": CHECKPOINT_FORMAT,
        "lookback": model.lookback,
        "horizon": model.horizon,
        "periods": list(model.periods),
        "channel_shared": True,
        "metric": metric_info,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<B", CHECKPOINT_FORMAT))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype=np.float64).tobytes())


def load_checkpoint(path: str | Path):
    """Returns (model, metric or None, extra dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < 5 or raw[0] != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a recognised checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 1)
    header = json.loads(raw[5 : 5 + hlen].decode("utf-8"))
    offset = 5 + hlen
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        block = np.frombuffer(raw, dtype=np.float64, count=count, offset=offset)
        arrays[spec["name"]] = block.reshape(shape).copy()
        offset += count * 8
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor payload")
    periods = tuple(header["periods"])
    model = ForecastModel(
        lookback=header["lookback"],
        horizon=header["horizon"],
        periods=periods,
        w_f=arrays["f.weight"],
        b_f=arrays["f.bias"],
        w_g={p: arrays[f"g{p}.weight"] for p in periods},
        b_g={p: arrays[f"g{p}.bias"] for p in periods},
        w_h=arrays["h.weight"],
        b_h=arrays["h.bias"],
    )
    metric = None
    if header.get("metric"):
        mi = header["metric"]
        metric = SimilarityMetric(
            kind=mi["kind"],
            channel_reduce=mi["channel_reduce"],
            embed_dim=mi["embed_dim"],
        )
        for dim in mi["dims"]:
            metric.projections[int(dim)] = {
                "q": arrays[f"proj.{dim}.q"],
                "k": arrays[f"proj.{dim}.k"],
            }
        metric.version = len(mi["dims"])
    return model, metric, header.get("extra", {})
