import collections
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mqsim.netgraph import HybridConfig, build_efficientvit, build_hybrid
from mqsim.netgraph.manifest import synthesize_weights
from mqsim.quant.plan import assign_m2q

settings.register_profile(
    "mqsim",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    print_blob=True,
)
settings.load_profile("mqsim")

# property-test executions, per test name; summed at session end
PROPERTY_CASES = collections.Counter()

TINY = HybridConfig(widths=(8, 8, 16, 16, 16), depths=(1, 1, 1, 1, 1), head_dim=8, head_widths=(32, 32), num_classes=10)


# acceptance outcomes: (criterion number, passed, detail)
ACCEPTANCE = []


def count_case(name: str) -> None:
    PROPERTY_CASES[name] += 1


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    props = dict(report.user_properties)
    ACCEPTANCE.append((props.get("criterion", "?"), report.passed, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n, ok, detail in sorted(ACCEPTANCE, key=lambda t: int(t[0]) if str(t[0]).isdigit() else 99):
            terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    total = sum(PROPERTY_CASES.values())
    if not total:
        return
    terminalreporter.write_sep("-", "property cases")
    for name, n in sorted(PROPERTY_CASES.items()):
        terminalreporter.write_line(f"{name:<48} {n:>7}")
    terminalreporter.write_line(f"{'TOTAL':<48} {total:>7}")


def pytest_sessionfinish(session):
    path = os.environ.get("MQSIM_PROPERTY_COUNT_FILE")
    if path:
        Path(path).write_text(str(sum(PROPERTY_CASES.values())))


@pytest.fixture(scope="session")
def tiny_graph():
    return build_hybrid(TINY, 64, name="tiny")


@pytest.fixture(scope="session")
def tiny_weights(tiny_graph):
    return synthesize_weights(tiny_graph, 0)


@pytest.fixture(scope="session")
def tiny_plan(tiny_graph, tiny_weights):
    return assign_m2q(tiny_graph, tiny_weights, 0.5, 4, seed=0)


@pytest.fixture(scope="session")
def b1():
    return build_efficientvit("B1", 224)


@pytest.fixture(scope="session")
def b1_weights(b1):
    return synthesize_weights(b1, 0)


@pytest.fixture(scope="session")
def b1_plan(b1, b1_weights):
    return assign_m2q(b1, b1_weights, 0.5, 4, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
