from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from casma import effects
from casma.agreement import GradeSheet

DATA = Path(str(resources.files("casma") / "data"))


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def trials():
    return effects.load_trial_table(DATA / "trials.csv")


@pytest.fixture(scope="session")
def estimates(trials):
    return [effects.study_effect(s) for s in trials]


@pytest.fixture(scope="session")
def five_study(trials):
    return [effects.study_effect(s) for s in trials if "high-rob" not in s.tags]


@pytest.fixture(scope="session")
def round1_sheet() -> GradeSheet:
    return GradeSheet.from_long_csv(DATA / "grades_round1.csv")


@pytest.fixture(scope="session")
def s2_titles() -> list[str]:
    with (DATA / "table_s2_titles.csv").open(encoding="utf-8", newline="") as fh:
        return [row["title"] for row in csv.DictReader(fh)]


@pytest.fixture(scope="session")
def s2_matrix() -> np.ndarray:
    return np.loadtxt(DATA / "table_s2_matrix.csv", delimiter=",", dtype=int)
