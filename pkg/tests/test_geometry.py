import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from meolink.errors import ParameterError, ParseError, RangeError, ValidationError
from meolink.geometry import (EphemerisTable, PassModel, horizon_slant_range, load_ephemeris,
                              mean_slant_range, radial_velocity_at, slant_range_at,
                              synthetic_pass, write_ephemeris, zenith_slant_range)


def _law_of_cosines_range(h_s, elevation, R_e=6371e3, h_t=537.0):
    """Independent oracle: solve r_s^2 = r_t^2 + R^2 + 2 r_t R sin(el) by bisection."""
    r_s, r_t = R_e + h_s, R_e + h_t
    lo, hi = 0.0, 2 * r_s
    for _ in range(200):
        mid = (lo + hi) / 2
        if r_t**2 + mid**2 + 2 * r_t * mid * math.sin(elevation) < r_s**2:
            lo = mid
        else:
            hi = mid
    return lo


def test_zenith_pass_minimum_is_altitude_difference():
    tb = synthetic_pass(h_s=5620e3, max_elevation=math.pi / 2, duration=2580, dt=1.0)
    i = int(np.argmin(tb.R))
    assert tb.t[i] == pytest.approx(1290.0)
    assert tb.R[i] == pytest.approx(5619.463e3, abs=1e-3)


def test_mid_pass_radial_velocity_is_zero(lageos_pass):
    mid = lageos_pass.t[len(lageos_pass) // 2]
    assert abs(radial_velocity_at(lageos_pass, mid)) <= 1e-6 * np.max(np.abs(lageos_pass.v_R))


def test_horizon_slant_range_matches_geometry():
    # sqrt((6371+5620)^2 - (6371+0.537)^2) km; the often-quoted 9858 km is an arithmetic slip
    R = horizon_slant_range(5620e3, 6371e3, 537.0)
    assert R == pytest.approx(math.sqrt(11991e3**2 - 6371.537e3**2))
    assert R == pytest.approx(10158.0e3, abs=1e3)
    assert zenith_slant_range(5620e3, 0.0) == pytest.approx(R)
    assert _law_of_cosines_range(5620e3, 0.0) == pytest.approx(R, rel=1e-9)


@pytest.mark.parametrize("el_deg", [5, 20, 45, 80, 90])
def test_slant_range_vs_elevation_oracle(el_deg):
    el = math.radians(el_deg)
    assert zenith_slant_range(5620e3, el) == pytest.approx(_law_of_cosines_range(5620e3, el), rel=1e-9)


@pytest.mark.parametrize("el_deg", [30, 60, 80])
def test_minimum_range_matches_requested_elevation(el_deg):
    tb = synthetic_pass(max_elevation=math.radians(el_deg), duration=1200, dt=1.0)
    assert tb.R.min() == pytest.approx(zenith_slant_range(5620e3, math.radians(el_deg)), abs=1.0)


def test_lageos_pass_profile(lageos_pass):
    # 43-minute pass at 80 degrees peak elevation
    assert lageos_pass.t_end - lageos_pass.t_start == 2580
    assert 5.6e6 < lageos_pass.R.min() < 5.7e6
    assert 7.5e6 < lageos_pass.R.max() < 8.0e6
    assert np.max(np.abs(lageos_pass.v_R)) < 3000


def test_velocity_consistent_with_range(lageos_pass):
    tb = lageos_pass
    fd = (tb.R[2:] - tb.R[:-2]) / (tb.t[2:] - tb.t[:-2])
    assert np.max(np.abs(fd - tb.v_R[1:-1])) < 0.01 * np.max(np.abs(tb.v_R))


def test_receding_has_positive_velocity(lageos_pass):
    tb = lageos_pass
    assert np.all(tb.v_R[tb.t > 1300] > 0)
    assert np.all(tb.v_R[tb.t < 1280] < 0)


def test_interpolation_exact_at_samples(lageos_pass):
    assert np.array_equal(slant_range_at(lageos_pass, lageos_pass.t), lageos_pass.R)
    for i in (0, 17, 1290, 2580):
        assert slant_range_at(lageos_pass, float(lageos_pass.t[i])) == lageos_pass.R[i]


def test_interpolation_matches_analytic_model():
    tb = synthetic_pass(dt=1.0)
    model = PassModel.build(5620e3, math.radians(80), 2580)
    t = np.random.default_rng(3).uniform(0, 2580, 500)
    assert np.max(np.abs(slant_range_at(tb, t) - model.range(t))) < 1.0
    v = radial_velocity_at(tb, t)
    vt = model.radial_velocity(t)
    assert np.max(np.abs(v - vt)) < 1e-3 * np.max(np.abs(tb.v_R))


def test_interpolation_continuous(lageos_pass):
    t = 1000.5
    diffs = [abs(slant_range_at(lageos_pass, t + e) - slant_range_at(lageos_pass, t)) for e in (1e-1, 1e-3, 1e-5)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 0.1


def test_no_extrapolation(lageos_pass):
    with pytest.raises(RangeError):
        slant_range_at(lageos_pass, 2580.001)
    with pytest.raises(RangeError):
        radial_velocity_at(lageos_pass, -1.0)


def test_mean_slant_range_is_time_average(lageos_pass):
    a, b = 100.0, 160.0
    dense = np.linspace(a, b, 6001)
    assert mean_slant_range(lageos_pass, a, b) == pytest.approx(trapezoid(slant_range_at(lageos_pass, dense), dense) / 60, rel=1e-9)


@pytest.mark.parametrize("kw", [dict(h_s=-1.0), dict(duration=0.0), dict(dt=0.0),
                                dict(max_elevation=0.0), dict(max_elevation=2.0)])
def test_synthetic_pass_rejects_bad_input(kw):
    with pytest.raises(ParameterError):
        synthetic_pass(**kw)


def test_table_invariants():
    with pytest.raises(ValidationError):
        EphemerisTable([0, 1, 1], [6e6] * 3, [0] * 3)
    with pytest.raises(ValidationError):
        EphemerisTable([0, 1], [1e6, 6e6], [0, 0])


def test_tables_are_immutable(lageos_pass):
    with pytest.raises(ValueError):
        lageos_pass.R[0] = 1.0


def test_ephemeris_round_trip(tmp_path, lageos_pass):
    path = tmp_path / "eph.csv"
    write_ephemeris(lageos_pass, path)
    back = load_ephemeris(path)
    assert np.array_equal(back.t, lageos_pass.t)
    assert np.array_equal(back.R, lageos_pass.R)
    assert np.array_equal(back.v_R, lageos_pass.v_R)
    assert path.read_text().splitlines()[0] == "t_s,R_m,vR_mps"


def test_load_three_rows(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("t_s,R_m,vR_mps\n0,6000000,10\n1,6000010,10\n2,6000020,10\n")
    assert len(load_ephemeris(p)) == 3


def test_load_decreasing_time(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("t_s,R_m,vR_mps\n0,6000000,10\n2,6000010,10\n1,6000020,10\n")
    with pytest.raises(ValidationError):
        load_ephemeris(p)


def test_load_malformed_row_reports_line(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("t_s,R_m,vR_mps\n0,6000000,10\n1,abc,10\n")
    with pytest.raises(ParseError) as exc:
        load_ephemeris(p)
    assert exc.value.line == 3


def test_range_noise_needs_seed():
    with pytest.raises(ParameterError):
        synthetic_pass(range_noise=1.0)
    a = synthetic_pass(range_noise=1.0, seed=4)
    b = synthetic_pass(range_noise=1.0, seed=4)
    assert np.array_equal(a.R, b.R)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=math.radians(20), max_value=math.pi / 2),
       st.floats(min_value=400e3, max_value=25000e3))
def test_pass_minimum_property(el, h_s):
    tb = synthetic_pass(h_s=h_s, max_elevation=el, duration=120, dt=1.0)
    assert tb.R.min() == pytest.approx(zenith_slant_range(h_s, el), abs=1.0)
    assert np.all(tb.R >= h_s - 537.0 - 1e-3)
