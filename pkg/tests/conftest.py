import numpy as np
import pytest

from insalign.earth import DEG, DEG_PER_HOUR, MICRO_G, EarthParams
from insalign.scenario import Scenario, ScenarioSegment, SegmentKind, simulate

BG = np.full(3, 0.01 * DEG_PER_HOUR)
BA = np.full(3, 50.0 * MICRO_G)
TILTED = tuple(np.radians([20.0, 30.0, 10.0]))


@pytest.fixture(scope="session")
def earth():
    return EarthParams.from_degrees()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def const_scenario(earth, axis, t0=100.0, t1=500.0, duration=600.0, rate=10.0 * DEG, euler=(0.0, 0.0, 0.0),
                   frame="body"):
    seg = ScenarioSegment(SegmentKind.CONST_ROTATION, t0, t1, axis=axis, rate=rate, frame=frame)
    return Scenario(earth, euler, (seg,), duration=duration, true_bg=BG, true_ba=BA)


@pytest.fixture(scope="session")
def updown(earth):
    return simulate(const_scenario(earth, (0, 1, 0)))


@pytest.fixture(scope="session")
def northsouth(earth):
    return simulate(const_scenario(earth, (1, 0, 0)))


@pytest.fixture(scope="session")
def eastwest(earth):
    return simulate(const_scenario(earth, (0, 0, 1)))


@pytest.fixture(scope="session")
def static_300(earth):
    return simulate(Scenario(earth, TILTED, (), duration=300.0, true_bg=BG, true_ba=BA), derivatives="none")


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in __import__("sys").modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
