import numpy as np
import pytest
import torch

from mlmsal.data import SyntheticSpec, generate_synthetic, load_dataset

torch.set_num_threads(1)

# (criterion, passed, detail) rows collected by the acceptance suite
ACCEPTANCE_RESULTS = []


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    generate_synthetic(SyntheticSpec(count=4, seed=3), root)
    return root


@pytest.fixture(scope="session")
def synthetic_records(synthetic_root):
    sal = load_dataset(synthetic_root / "saliency", "saliency", 64)
    edge = load_dataset(synthetic_root / "edge", "edge", 64)
    return sal, edge


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
