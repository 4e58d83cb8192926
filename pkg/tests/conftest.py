import os
from pathlib import Path

import numpy as np
import pytest

import retrocast as rc

# ETTh1.csv is user-supplied: place it in <repo>/data/ or point
# RETROCAST_DATA at a directory containing it. Benchmark-dependent tests
# skip cleanly when it is absent.
DATA_DIR = Path(os.environ.get("RETROCAST_DATA",
                               Path(__file__).resolve().parent.parent / "data"))
ETTH1_PATH = DATA_DIR / "ETTh1.csv"


def etth1_present() -> bool:
    return ETTH1_PATH.exists()


requires_etth1 = pytest.mark.skipif(
    not etth1_present(),
    reason=f"ETTh1.csv not found at {ETTH1_PATH}; set RETROCAST_DATA to enable",
)


@pytest.fixture(scope="session")
def etth1() -> rc.TimeSeries:
    if not etth1_present():
        pytest.skip(f"ETTh1.csv not found at {ETTH1_PATH}")
    return rc.load_csv(ETTH1_PATH)


def make_walk(seed: int, channels: int = 2, steps: int = 300) -> rc.TimeSeries:
    """Random-walk series with enough structure for retrieval to bite."""
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(channels, steps)).cumsum(axis=1)
    names = tuple(f"ch{i}" for i in range(channels))
    return rc.TimeSeries(values=values, channel_names=names)


def make_seasonal(seed: int, channels: int = 1, steps: int = 400,
                  period: float = 24.0) -> rc.TimeSeries:
    rng = np.random.default_rng(seed)
    t = np.arange(steps, dtype=np.float64)
    values = np.stack([
        np.sin(2 * np.pi * (t + rng.uniform(0, period)) / period)
        + 0.1 * rng.normal(size=steps)
        for _ in range(channels)
    ])
    names = tuple(f"ch{i}" for i in range(channels))
    return rc.TimeSeries(values=values, channel_names=names)


@pytest.fixture()
def walk2() -> rc.TimeSeries:
    return make_walk(0, channels=2, steps=300)


@pytest.fixture()
def walk1() -> rc.TimeSeries:
    return make_walk(1, channels=1, steps=300)
