import numpy as np
import pytest

from jumpldp.model import Model, load_model


def make_model(name, compartments, transitions, params=None):
    return Model.from_dict({
        "name": name,
        "compartments": list(compartments),
        "params": dict(params or {}),
        "transitions": [{"name": n, "jump": list(h), "rate": r} for n, h, r in transitions],
    })


@pytest.fixture(scope="session")
def sis():
    return load_model("sis")


@pytest.fixture(scope="session")
def sir():
    return load_model("sir")


@pytest.fixture(scope="session")
def walk():
    """Symmetric +-1 walk with constant rates 1/2; only valid away from the boundary."""
    return make_model("walk", ["x"], [("up", [1], "0.5"), ("down", [-1], "0.5")])


@pytest.fixture(scope="session")
def three_jump():
    """d = 1 with jumps +1, -1, +1 (k > d), strictly positive inside (0, 1)."""
    return make_model("three", ["x"], [
        ("birth", [1], "a * x * (1 - x)"),
        ("death", [-1], "b * x"),
        ("influx", [1], "c * (1 - x)"),
    ], {"a": 2.0, "b": 1.0, "c": 0.3})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, collected from the reports' user properties."""
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) != "call":
                continue
            lines.extend(v for k, v in getattr(rep, "user_properties", ()) if k == "acceptance")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
