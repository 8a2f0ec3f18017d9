import math
import warnings

import numpy as np
import pytest

from linksig.geometry import (
    ApplicabilityWarning,
    Environment,
    GeometryConfig,
    GeometryError,
    default_for,
    indoor_default,
    outdoor_default,
)


def test_defaults_build_without_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert outdoor_default().environment is Environment.OUTDOOR
        assert indoor_default().environment is Environment.INDOOR


@pytest.mark.parametrize("field,value", [
    ("big_distance_D", 0.0), ("ring_radius_R", -1.0), ("wavelength", float("nan")),
    ("separation_d", -0.1), ("path_loss_exponent", 0.5), ("angle_theta_R", float("inf")),
])
def test_invalid_values_rejected(field, value):
    with pytest.raises(GeometryError):
        indoor_default(**{field: value})


def test_exclusion_radius_must_fit_inside_ring():
    with pytest.raises(GeometryError):
        indoor_default(exclusion_radius=10.0)


def test_outdoor_far_field_violation_warns():
    with pytest.warns(ApplicabilityWarning):
        outdoor_default(big_distance_D=100.0)


def test_receiver_pair_is_symmetric_about_center():
    for cfg in (outdoor_default(separation_d=0.5), indoor_default(separation_d=0.5)):
        mid = 0.5 * (cfg.legitimate_receiver() + cfg.attack_node())
        np.testing.assert_allclose(mid, cfg.pair_center(), atol=1e-15)
        assert np.linalg.norm(cfg.attack_node() - cfg.legitimate_receiver()) == pytest.approx(0.5)


def test_placements():
    out = outdoor_default()
    np.testing.assert_array_equal(out.transmitter(), [-500.0, 0.0])
    ind = indoor_default()
    np.testing.assert_array_equal(ind.transmitter(), [-3.0, 0.0])
    np.testing.assert_array_equal(ind.pair_center(), [3.0, 0.0])
    assert ind.singular_points().shape == (2, 2)
    assert out.singular_points().shape == (0, 2)


def test_default_for_and_with():
    cfg = default_for("indoor", wavelength=0.25)
    assert cfg.wavenumber == pytest.approx(2 * math.pi / 0.25)
    assert cfg.exclusion_radius == 0.25
    assert cfg.with_(separation_d=1.0).separation_d == 1.0
    assert isinstance(cfg, GeometryConfig)
