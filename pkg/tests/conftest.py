import numpy as np
import pytest

from prefiqs import synthlab
from prefiqs.model import mlp_model

_criteria = {}


def random_mlp(rng, widths, scale=1.0):
    """Dense/ReLU chain with gaussian weights; ``widths`` includes the input width."""
    weights = [(rng.standard_normal((o, i)) * scale / np.sqrt(i), rng.standard_normal(o) * 0.1)
               for i, o in zip(widths[:-1], widths[1:])]
    return mlp_model(weights, input_dim=widths[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_bundle():
    """The standard fixture: (dataset, training result, pairs, config)."""
    cfg = synthlab.fixture_config()
    data, result, pairs = synthlab.build_fixture(cfg)
    return data, result, pairs, cfg


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = (report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        outcome, dur = _criteria[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  ({dur:.2f}s)")
