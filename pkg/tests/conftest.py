import numpy as np
import pytest

from lane_intrusion.scenegen import SensorConfig

CLEAN_SENSOR = SensorConfig(pixel_noise_sigma=0.0, miss_rate=0.0, clutter_rate=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def clean_sensor():
    return CLEAN_SENSOR


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The default 150-sample noisy dataset (50 per class, seed 0)."""
    from lane_intrusion.scenegen import generate_dataset

    path = tmp_path_factory.mktemp("data") / "default.jsonl"
    generate_dataset(path, 50, seed=0)
    return path


@pytest.fixture(scope="session")
def default_samples(default_dataset):
    from lane_intrusion.harness import load_dataset

    return load_dataset(default_dataset)


@pytest.fixture(scope="session")
def default_series(default_samples):
    from lane_intrusion.harness import extract_series

    return extract_series(default_samples)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Five noisy samples per class for quick pipeline runs."""
    from lane_intrusion.scenegen import generate_dataset

    path = tmp_path_factory.mktemp("small") / "small.jsonl"
    generate_dataset(path, 5, seed=7)
    return path


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            for line in ACCEPTANCE_LINES[key]:
                terminalreporter.write_line(line)
