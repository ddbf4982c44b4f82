from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from coco.core import Dataset
from coco.harness import ExperimentConfig
from coco.simulator import collect_dataset


def make_dataset(n_traces=10, steps=4, k=2, seed=0):
    rng = np.random.default_rng(seed)
    trace_ids = np.repeat(np.arange(n_traces), steps)
    step = np.tile(np.arange(steps), n_traces)
    monitors = rng.random((n_traces * steps, k))
    flags = rng.random((n_traces * steps, k)) < monitors
    safety = np.repeat(rng.random(n_traces) < 0.5, steps)
    return Dataset(trace_ids, step, monitors, flags, safety, {"scenario": "unit"})


@pytest.fixture
def small_dataset():
    return make_dataset()


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def mountain_car_config():
    return ExperimentConfig.load(CONFIG_DIR / "mountain_car.toml")


@pytest.fixture(scope="session")
def mountain_car_500(mountain_car_config, tmp_path_factory):
    """The default 500-episode collection, shared by the simulator and acceptance tests."""
    sim = replace(mountain_car_config.simulation, n_episodes=500, cache_dir=str(tmp_path_factory.mktemp("region")))
    return collect_dataset(config=sim)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
