"""Declarative experiment configuration.

Config files are flat INI with sections [data], [model], [retrieval],
[train], and [run]; every key maps one-to-one onto an ExperimentConfig
field. Command-line flags override file values, which override defaults.
Unknown keys are errors, not warnings: a typo that silently falls back to
a default would poison a study.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

__all__ = ["ExperimentConfig", "SECTION_FIELDS"]

SECTION_FIELDS = {
    "data": ("data_path", "dataset_name", "split", "target", "lookback_overlap"),
    "model": ("lookback", "horizon", "periods"),
    "retrieval": ("m", "tau", "metric", "channel_reduce", "embed_dim", "stride"),
    "train": (
        "learning_rate", "batch_size", "max_epochs", "patience", "optimizer",
    ),
    "run": ("seeds", "variant", "out_dir", "jobs"),
}

VARIANTS = ("full", "random_retrieval", "no_attention", "one_period", "no_retrieval")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: dataset, windows, retrieval setup, training setup."""

    # data
    data_path: str | None = None
    dataset_name: str = ""
    split: str = "auto"  # auto | etth | ettm | ratio | borders:train_end,val_end[,end]
    target: str | None = None
    lookback_overlap: bool = True
    # model
    lookback: int = 96
    horizon: int = 96
    periods: tuple[int, ...] = (1, 2, 4)
    # retrieval
    m: int = 10
    tau: float = 0.1
    metric: str = "pearson"
    channel_reduce: str = "mean"
    embed_dim: int = 64
    stride: int = 1
    # train
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    optimizer: str = "adam"
    # run
    seeds: tuple[int, ...] = (0, 1, 2)
    variant: str = "full"
    out_dir: str = "runs"
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.lookback < 1:
            raise ValueError(f"invalid lookback: {self.lookback}")
        if self.horizon < 1:
            raise ValueError(f"invalid horizon: {self.horizon}")
        if not self.periods or min(self.periods) < 1:
            raise ValueError(f"invalid periods: {self.periods}")
        if max(self.periods) > min(self.lookback, self.horizon):
            raise ValueError(
                f"invalid periods: {max(self.periods)} exceeds "
                f"min(lookback, horizon) = {min(self.lookback, self.horizon)}"
            )
        if self.m < 1:
            raise ValueError(f"invalid m: {self.m}")
        if self.tau <= 0:
            raise ValueError(f"invalid tau: {self.tau}")
        if self.metric not in ("pearson", "cosine", "cosine_projected", "neg_l2"):
            raise ValueError(f"invalid metric: {self.metric!r}")
        if self.channel_reduce not in ("mean", "flatten"):
            raise ValueError(f"invalid channel_reduce: {self.channel_reduce!r}")
        if self.embed_dim < 1:
            raise ValueError(f"invalid embed_dim: {self.embed_dim}")
        if self.stride < 1:
            raise ValueError(f"invalid stride: {self.stride}")
        if self.learning_rate < 0:
            raise ValueError(f"invalid learning_rate: {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"invalid batch_size: {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"invalid max_epochs: {self.max_epochs}")
        if self.patience < 0:
            raise ValueError(f"invalid patience: {self.patience}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"invalid optimizer: {self.optimizer!r}")
        if not self.seeds:
            raise ValueError("invalid seeds: need at least one")
        if self.variant not in VARIANTS:
            raise ValueError(f"invalid variant: {self.variant!r}; known: {VARIANTS}")
        if self.jobs < 1:
            raise ValueError(f"invalid jobs: {self.jobs}")
        if not self.split.startswith("borders:") and self.split not in (
            "auto", "etth", "ettm", "ratio",
        ):
            raise ValueError(f"invalid split: {self.split!r}")
        return self

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        by_field = {f.name: f for f in fields(cls)}
        values = {}
        for section in parser.sections():
            if section not in SECTION_FIELDS:
                raise ValueError(
                    f"{path}: unknown config section [{section}]; "
                    f"known: {sorted(SECTION_FIELDS)}"
                )
            for key, raw in parser.items(section):
                if key not in SECTION_FIELDS[section]:
                    raise ValueError(
                        f"{path}: unknown key {key!r} in section [{section}]; "
                        f"known: {SECTION_FIELDS[section]}"
                    )
                values[key] = _convert(by_field[key].name, raw)
        return replace(cls(), **values).validate()

    def override(self, **kwargs) -> "ExperimentConfig":
        """Apply non-None overrides (CLI flags beat config file values)."""
        clean = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **clean).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _convert(name: str, raw: str):
    if name in ("periods", "seeds"):
        return _parse_int_tuple(raw)
    if name in ("lookback_overlap",):
        return _parse_bool(raw)
    if name in (
        "lookback", "horizon", "m", "embed_dim", "stride",
        "batch_size", "max_epochs", "patience", "jobs",
    ):
        return int(raw)
    if name in ("tau", "learning_rate"):
        return float(raw)
    if name == "target":
        return raw or None
    return raw
