import numpy as np
import pytest

from cfbench import classical
from cfbench.trajectory import LeaderProfile, Trajectory, synthesize

IDM_EXAMPLE = classical.EXAMPLE_PARAMS["IDM"]
SINUS_LEADER = LeaderProfile(base_speed=10.0, amplitude=2.0, omega=0.1)


def make_traj(v_follower, v_leader=None, gap=20.0, dt=0.1, leader_length=5.0):
    """Trajectory whose positions are integrated from the given speeds."""
    vf = np.asarray(v_follower, dtype=float)
    vl = vf.copy() if v_leader is None else np.asarray(v_leader, dtype=float)
    xf = np.concatenate([[0.0], np.cumsum((vf[1:] + vf[:-1]) / 2 * dt)])
    xl = gap + leader_length + np.concatenate([[0.0], np.cumsum((vl[1:] + vl[:-1]) / 2 * dt)])
    return Trajectory(dt=dt, t0=0.0, x_leader=xl, v_leader=vl, x_follower=xf, v_follower=vf,
                      leader_length=leader_length)


@pytest.fixture(scope="session")
def idm_sinus():
    """60 s of an IDM follower behind a 10 + 2 sin(0.1 t) leader, dt = 0.1."""
    return synthesize(SINUS_LEADER, "IDM", IDM_EXAMPLE, initial_gap=15.0, duration=60.0, dt=0.1)


@pytest.fixture(scope="session")
def idm_short():
    return synthesize(SINUS_LEADER, "IDM", IDM_EXAMPLE, initial_gap=15.0, duration=20.0, dt=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion (printed at session end)."""

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
