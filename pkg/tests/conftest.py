import math

import numpy as np
import pytest

from meolink.geometry import EphemerisTable, synthetic_pass
from meolink.linkbudget import LinkParams
from meolink.montecarlo import DETECTOR_PRESETS, MuPolicy, PointingModel, simulate_pass
from meolink.timing import reconstruct_tref

PRESET_POINTING = PointingModel(30e-6, 25e-6, 60.0, ((1020.0, 1620.0), 80e-6))
PRESET_BACKGROUND = 7.1


def static_table(R=7e6, duration=200.0, dt=1.0, h_s=5620e3, h_t=537.0):
    t = np.arange(0.0, duration + dt / 2, dt)
    return EphemerisTable(t, np.full(t.shape, R), np.zeros(t.shape), h_s=h_s, h_t=h_t)


def linear_table(R0=7e6, v=2000.0, duration=200.0, dt=1.0):
    t = np.arange(0.0, duration + dt / 2, dt)
    return EphemerisTable(t, R0 + v * t, np.full(t.shape, v), h_s=5620e3, h_t=537.0)


def quadratic_table(R0=6e6, v0=-1500.0, a=2.0, duration=60.0, dt=0.5):
    t = np.arange(0.0, duration + dt / 2, dt)
    return EphemerisTable(t, R0 + v0 * t + 0.5 * a * t**2, v0 + a * t, h_s=5620e3, h_t=537.0)


@pytest.fixture(scope="session")
def params():
    return LinkParams()


@pytest.fixture(scope="session")
def lageos_pass():
    return synthetic_pass()


@pytest.fixture(scope="session")
def preset_run(lageos_pass, params):
    """One simulated LAGEOS-2 pass with the shipped pointing and background."""
    stream, truth = simulate_pass(lageos_pass, params, DETECTOR_PRESETS["pmt"], PRESET_POINTING,
                                  MuPolicy.physical(), seed=11, background_rate=PRESET_BACKGROUND,
                                  return_truth=True)
    grid = reconstruct_tref(stream.slr_pairs(), params.f_rep)
    return stream, truth, grid


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
