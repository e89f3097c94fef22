import time

import pytest

from helpers import CRITERIA

from detattack.data import generate_shapes_dataset
from detattack.models import build_model, train

TRAIN_COUNT, TEST_COUNT = 500, 100


@pytest.fixture(scope="session")
def shapes_split():
    full = generate_shapes_dataset(0, TRAIN_COUNT + TEST_COUNT, (64, 64), 3)
    return full.subset(0, TRAIN_COUNT), full.subset(TRAIN_COUNT, TRAIN_COUNT + TEST_COUNT)


class ModelZoo:
    """Trains each (family, depth) detector once per session, on first request."""

    def __init__(self, trainset):
        self.trainset = trainset
        self.models = {}
        self.train_seconds = {}

    def get(self, family="one-phase", depth=3):
        key = (family, depth)
        if key not in self.models:
            model = build_model(family, 3, (64, 64), depth, seed=0)
            start = time.perf_counter()
            train(model, self.trainset, epochs=40, learning_rate=1.0, seed=0)
            self.train_seconds[key] = time.perf_counter() - start
            self.models[key] = model
        return self.models[key]


@pytest.fixture(scope="session")
def zoo(shapes_split):
    return ModelZoo(shapes_split[0])


@pytest.fixture(scope="session")
def tiny_models():
    """Briefly trained small models for fast structural tests."""
    data = generate_shapes_dataset(7, 48, (64, 64), 3)
    out = {}
    for family in ("one-phase", "two-phase"):
        m = build_model(family, 3, (64, 64), 3, seed=1)
        train(m, data, epochs=3, learning_rate=0.5, seed=1)
        out[family] = m
    return out, data


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
