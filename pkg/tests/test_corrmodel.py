import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import j0

from linksig.corrmodel import (
    correlation,
    correlation_curve,
    indoor_correlation,
    outdoor_correlation,
    path_length_difference,
    received_power,
    write_curve_csv,
)
from linksig.geometry import GeometryError, indoor_default, outdoor_default


@pytest.mark.parametrize("ratio", [0.0, 0.5, 1.3, 2.0, 5.0, 9.7])
def test_outdoor_equals_bessel_j0(ratio):
    cfg = outdoor_default(separation_d=ratio * 0.125)
    res = outdoor_correlation(cfg, tol=1e-8)
    assert res.rho_complex.real == pytest.approx(j0(2 * math.pi * ratio), abs=1e-7)
    assert abs(res.rho_complex.imag) < 1e-7


@pytest.mark.parametrize("n", [1.0, 2.0, 3.5])
def test_outdoor_received_power_closed_form(n):
    cfg = outdoor_default(path_loss_exponent=n)
    x0, big_r = cfg.exclusion_radius, cfg.ring_radius_R
    if n == 1.0:
        expected = math.log(big_r / x0) / big_r
    else:
        expected = (x0 ** (1 - n) - big_r ** (1 - n)) / ((n - 1) * big_r)
    assert received_power(cfg) == pytest.approx(expected, rel=1e-9)


def _indoor_reference(cfg):
    """Independent scipy dblquad over the same keep-out-regularized ring."""
    big_d, n, x0 = cfg.big_distance_D, cfg.path_loss_exponent, cfg.exclusion_radius
    half = big_d / 2

    def weight(g, r):
        return big_d**n * ((r * r + half * half) ** 2 - big_d**2 * r * r * math.cos(g) ** 2) ** (-n / 2)

    def phase(g, r):
        xi = math.sqrt(r * r + half * half - big_d * r * math.cos(g))
        path = cfg.separation_d * (r * math.cos(g - cfg.angle_theta_R) - half * math.cos(cfg.angle_theta_R)) / xi
        return -2 * math.pi * path / cfg.wavelength

    def gap(r):
        c = (r * r + half * half - x0 * x0) / (2 * half * r)
        return math.acos(max(-1.0, min(1.0, c)))

    breaks = sorted({x0, cfg.ring_radius_R, half - x0, half + x0})
    tot = {"re": 0.0, "im": 0.0, "w": 0.0}
    for lo, hi in [(gap, lambda r: math.pi - gap(r)), (lambda r: -(math.pi - gap(r)), lambda r: -gap(r))]:
        for r0, r1 in zip(breaks[:-1], breaks[1:]):
            kw = dict(epsabs=1e-11, epsrel=1e-10)
            tot["re"] += integrate.dblquad(lambda g, r: weight(g, r) * math.cos(phase(g, r)), r0, r1, lo, hi, **kw)[0]
            tot["im"] += integrate.dblquad(lambda g, r: weight(g, r) * math.sin(phase(g, r)), r0, r1, lo, hi, **kw)[0]
            tot["w"] += integrate.dblquad(weight, r0, r1, lo, hi, **kw)[0]
    return complex(tot["re"], tot["im"]) / tot["w"]


@pytest.mark.parametrize("ratio,theta", [(0.5, 1.2), (1.0, 0.3), (2.0, 2.0)])
def test_indoor_matches_independent_dblquad(ratio, theta):
    cfg = indoor_default(separation_d=ratio * 0.125, angle_theta_R=theta)
    ours = indoor_correlation(cfg, tol=1e-7).rho_complex
    assert abs(ours - _indoor_reference(cfg)) < 1e-4


def test_zero_separation_is_exactly_one():
    for cfg in (outdoor_default(), indoor_default()):
        res = correlation(cfg)
        assert res.rho_magnitude == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15)
@given(ratio=st.floats(0.0, 10.0), theta=st.floats(0.0, math.pi), indoor=st.booleans())
def test_magnitude_bounded_by_one(ratio, theta, indoor):
    base = indoor_default if indoor else outdoor_default
    res = correlation(base(separation_d=ratio * 0.125, angle_theta_R=theta))
    assert res.rho_magnitude <= 1 + 1e-6
    assert res.estimated_abs_error < 1e-3


def test_wrong_environment_rejected():
    with pytest.raises(GeometryError):
        outdoor_correlation(indoor_default())
    with pytest.raises(GeometryError):
        indoor_correlation(outdoor_default())


def test_path_difference_approximation_is_far_field_accurate():
    cfg = outdoor_default(separation_d=0.5)
    r = np.full(64, 25.0)
    t = np.linspace(-math.pi, math.pi, 64)
    exact, approx = path_length_difference(cfg, (r, t))
    assert np.max(np.abs(exact - approx)) < 0.01 * 0.5
    ind = indoor_default(separation_d=0.05)
    exact, approx = path_length_difference(ind, (np.full(64, 8.0), t))
    assert np.max(np.abs(exact - approx)) < 1e-3


def test_curve_csv(tmp_path):
    rows = correlation_curve(outdoor_default(), [1.0, 0.0], [1.0, 0.5])
    assert [(r, t) for r, t, _ in rows] == [(0.0, 0.5), (1.0, 0.5), (0.0, 1.0), (1.0, 1.0)]
    path = tmp_path / "c.csv"
    write_curve_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "d_over_lambda,theta_R,rho_magnitude,rho_real,rho_imag,abs_error"
    assert lines[1].startswith("0,0.5,1,")
    assert len(lines) == 5


def test_indoor_is_more_sensitive_to_axis_angle():
    thetas = np.linspace(0.0, math.pi, 9)
    spread = {}
    for make in (outdoor_default, indoor_default):
        vals = [correlation(make(separation_d=3 * 0.125, angle_theta_R=t)).rho_magnitude for t in thetas]
        spread[make] = max(vals) - min(vals)
    assert spread[indoor_default] > spread[outdoor_default] + 0.01
