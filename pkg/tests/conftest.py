import numpy as np
import pytest

from shap_ptdf import builtin_case9, fit_gbt, fit_linear, sample_scenarios, split

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")


@pytest.fixture(scope="session")
def net():
    return builtin_case9()


@pytest.fixture(scope="session")
def dataset(net):
    return sample_scenarios(net, 1001, 0.0, 500.0, seed=0)


@pytest.fixture(scope="session")
def train_test(dataset):
    return split(dataset, 0.75, seed=0)


@pytest.fixture(scope="session")
def gbt_models(net, train_test):
    train, _ = train_test
    return {lbl: fit_gbt(train, f"F{lbl}") for lbl in net.branch_labels}


@pytest.fixture(scope="session")
def linear_models(net, train_test):
    train, _ = train_test
    return {lbl: fit_linear(train, f"F{lbl}") for lbl in net.branch_labels}


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
