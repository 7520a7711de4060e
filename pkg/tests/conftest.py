from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from dnbcure.data_io import DesignSpec, default_melanoma_path, fetch_melanoma, read_dataset
from dnbcure.model import Dataset

DATA_DIR = Path(__file__).parent / "data"

# Lines collected by the acceptance tests, printed once at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_dataset(rng: np.random.Generator, n: int, q1: int = 2, q2: int = 1, event_frac: float = 0.5) -> Dataset:
    x_p = np.column_stack([np.ones(n), rng.normal(size=(n, q1 - 1))])
    x_eta = rng.uniform(0.0, 1.5, size=(n, q2))
    time = rng.uniform(0.05, 8.0, size=n)
    event = (rng.uniform(size=n) < event_frac).astype(float)
    return Dataset(time, event, x_p, x_eta)


def dataset_near(rng: np.random.Generator, theta: np.ndarray, n: int, q1: int = 2, q2: int = 1) -> Dataset:
    """Random covariates with times on the Weibull scale of ``theta``.

    Keeps ``(gamma2 * y) ** (1 / gamma1)`` of order one, so the likelihood
    stays well conditioned for finite-difference checks.
    """
    data = random_dataset(rng, n, q1, q2)
    time = rng.exponential(size=n) ** theta[-2] / theta[-1]
    return Dataset(np.maximum(time, 1e-8), data.event, data.x_p, data.x_eta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data() -> Dataset:
    return random_dataset(np.random.default_rng(7), 25)


@pytest.fixture
def fixture_csv() -> Path:
    return DATA_DIR / "synthetic10.csv"


@pytest.fixture
def fixture_data(fixture_csv) -> Dataset:
    return read_dataset(fixture_csv, DesignSpec(["thickness"], ["ulcer"]))


def melanoma_csv() -> Path | None:
    """Path to the converted melanoma CSV, fetching it on first use.

    Returns ``None`` when the data cannot be obtained (no network and no
    cached copy).
    """
    path = default_melanoma_path()
    if path.exists():
        return path
    if os.environ.get("DNBCURE_NO_FETCH"):
        return None
    try:
        fetch_melanoma(path)
    except Exception:  # noqa: BLE001 - any failure means "not available"
        return None
    return path


@pytest.fixture(scope="session")
def melanoma_data() -> Dataset:
    path = melanoma_csv()
    if path is None:
        pytest.skip("melanoma data unavailable; run `dnbcure fetch-melanoma`")
    return read_dataset(path, DesignSpec(["thickness"], ["ulcer"], ["ulcer"]))
