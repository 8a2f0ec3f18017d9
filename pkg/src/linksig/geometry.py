"""Scatterer-ring geometry shared by the correlation model and the channel synthesizer.

Coordinates are 2-D, in meters, with the scatterer ring centred on the origin.

Outdoor: the base station sits at ``(-D, 0)``; the user and the attack node sit
at ``-(d/2)e`` and ``+(d/2)e`` where ``e = (cos theta_R, sin theta_R)``.

Indoor: the transmitter sits at ``(-D/2, 0)`` and the receiver-pair midpoint at
``(+D/2, 0)``; the receiver is at ``mid - (d/2)e`` and the attack node at
``mid + (d/2)e``.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

SPEED_OF_LIGHT = 2.998e8


class Environment(str, enum.Enum):
    OUTDOOR = "outdoor"
    INDOOR = "indoor"


class GeometryError(ValueError):
    """Raised for geometrically invalid configurations."""


class ApplicabilityWarning(UserWarning):
    """The far-field ordering D >> R >> d does not hold for an outdoor config."""


@dataclass(frozen=True)
class GeometryConfig:
    environment: Environment
    big_distance_D: float
    ring_radius_R: float
    separation_d: float = 0.0
    angle_theta_R: float = 0.0
    wavelength: float = 0.125
    path_loss_exponent: float = 2.0
    exclusion_radius: float | None = None

    def __post_init__(self):
        env = Environment(self.environment)
        object.__setattr__(self, "environment", env)
        if self.exclusion_radius is None:
            object.__setattr__(self, "exclusion_radius", float(self.wavelength))
        for name in ("big_distance_D", "ring_radius_R", "wavelength", "exclusion_radius"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise GeometryError(f"{name} must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.separation_d) and self.separation_d >= 0):
            raise GeometryError(f"separation_d must be finite and >= 0, got {self.separation_d!r}")
        if not math.isfinite(self.angle_theta_R):
            raise GeometryError("angle_theta_R must be finite")
        if not (math.isfinite(self.path_loss_exponent) and self.path_loss_exponent >= 1):
            raise GeometryError(f"path_loss_exponent must be >= 1, got {self.path_loss_exponent!r}")
        if self.exclusion_radius >= self.ring_radius_R:
            raise GeometryError("exclusion_radius must be smaller than ring_radius_R")
        if env is Environment.OUTDOOR and (
            self.big_distance_D < 10 * self.ring_radius_R
            or self.ring_radius_R < 10 * self.separation_d
        ):
            warnings.warn(
                "outdoor model assumes D >= 10 R and R >= 10 d; results may be inaccurate",
                ApplicabilityWarning,
                stacklevel=3,
            )

    def with_(self, **changes) -> "GeometryConfig":
        return replace(self, **changes)

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def axis(self) -> np.ndarray:
        """Unit vector along the user/attacker (receiver/attacker) axis."""
        return np.array([math.cos(self.angle_theta_R), math.sin(self.angle_theta_R)])

    def transmitter(self) -> np.ndarray:
        if self.environment is Environment.OUTDOOR:
            return np.array([-self.big_distance_D, 0.0])
        return np.array([-self.big_distance_D / 2.0, 0.0])

    def pair_center(self) -> np.ndarray:
        """Midpoint of the legitimate receiver and the attack node."""
        if self.environment is Environment.OUTDOOR:
            return np.zeros(2)
        return np.array([self.big_distance_D / 2.0, 0.0])

    def legitimate_receiver(self, separation: float | None = None) -> np.ndarray:
        d = self.separation_d if separation is None else separation
        return self.pair_center() - 0.5 * d * self.axis

    def attack_node(self, separation: float | None = None) -> np.ndarray:
        d = self.separation_d if separation is None else separation
        return self.pair_center() + 0.5 * d * self.axis

    def singular_points(self) -> np.ndarray:
        """Points where the path-loss factor of the far-field integrand diverges.

        The ring centre is handled by the radial lower bound; these are the
        extra keep-out disks (indoor only: transmitter and receiver-pair midpoint).
        """
        if self.environment is Environment.OUTDOOR:
            return np.zeros((0, 2))
        return np.stack([self.transmitter(), self.pair_center()])


def outdoor_default(**overrides) -> GeometryConfig:
    """Outdoor geometry used to reproduce the distance-ratio curves (D=500 m, R=30 m)."""
    params = dict(
        environment=Environment.OUTDOOR,
        big_distance_D=500.0,
        ring_radius_R=30.0,
        separation_d=0.0,
        angle_theta_R=1.0,
        wavelength=0.125,
        path_loss_exponent=2.0,
    )
    params.update(overrides)
    return GeometryConfig(**params)


def indoor_default(**overrides) -> GeometryConfig:
    """Indoor geometry used to reproduce the distance-ratio curves (D=6 m, R=10 m)."""
    params = dict(
        environment=Environment.INDOOR,
        big_distance_D=6.0,
        ring_radius_R=10.0,
        separation_d=0.0,
        angle_theta_R=1.2,
        wavelength=0.125,
        path_loss_exponent=2.0,
    )
    params.update(overrides)
    return GeometryConfig(**params)


def default_for(environment: Environment | str, **overrides) -> GeometryConfig:
    if Environment(environment) is Environment.OUTDOOR:
        return outdoor_default(**overrides)
    return indoor_default(**overrides)
