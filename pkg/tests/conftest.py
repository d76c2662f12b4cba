import numpy as np
import pytest

from dnnaf.gradnet import TrainConfig, init_network, train
from dnnaf.kde import build_gradient_dataset
from dnnaf.noise import PRESETS, sample

PRESET_NAMES = tuple(PRESETS)


@pytest.fixture(scope="session")
def preset_datasets():
    """KDE derivative datasets from 5000 samples per preset (seed 1)."""
    return {name: build_gradient_dataset(sample(PRESETS[name], 5000, 1)) for name in PRESET_NAMES}


@pytest.fixture(scope="session")
def trained_nets(preset_datasets):
    """Networks trained with the default configuration, with their reports."""
    return {name: train(init_network(0), data, TrainConfig())
            for name, data in preset_datasets.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
