import numpy as np
import pytest

from eamlab.nn import MlpVelocity
from eamlab.training import TrainConfig, pretrain_flow
from eamlab.worlds import World


@pytest.fixture(scope="session")
def std_world():
    return World.gaussian([0.0], [[1.0]])


@pytest.fixture(scope="session")
def pretrained(std_world):
    """v_pt on N(0,1) with the default budget (5k iterations, batch 256, seed 0)."""
    net = MlpVelocity.init(1, np.random.default_rng(0))
    net, report = pretrain_flow(std_world, net, TrainConfig(method="pretrain", iterations=5000,
                                                            batch_size=256, seed=0))
    return net, report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary: one line per criterion, aggregated over its parts ---

_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry = _CRITERIA.setdefault(props["criterion"], {"title": props.get("title", ""), "parts": []})
        entry["parts"].append((report.outcome == "passed", props.get("detail", report.nodeid.split("::")[-1])))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(_CRITERIA):
        e = _CRITERIA[k]
        ok = all(p for p, _ in e["parts"])
        detail = "; ".join(d for _, d in e["parts"])
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {e['title']}: {detail}")
