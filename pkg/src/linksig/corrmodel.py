"""Normalized cross-correlation between a legitimate link and an attacker link.

Both models integrate a far-field scatterer-ring integrand over scatterer
polar coordinates with the density ``1/(2 pi R)`` in (radius, angle):

* outdoor: ``xi^-n exp(-j 2 pi (d/lambda) cos(theta_S - theta_R))``
* indoor: ``D^n ((d_S^2 + D^2/4)^2 - D^2 d_S^2 cos^2 gamma)^(-n/2)`` times the
  phase of the approximated path difference seen from the receiver-pair midpoint.

The path-loss factor diverges at the ring centre (outdoor) and at the
transmitter and receiver-pair midpoint (indoor).  Scatterers closer than
``exclusion_radius`` to those points are removed from both the correlation
numerator and the received-power normalization, so rho(d=0) == 1 exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Environment, GeometryConfig, GeometryError
from .quadrature import AngularPiece, CubatureResult, integrate_polar

CURVE_HEADER = ["d_over_lambda", "theta_R", "rho_magnitude", "rho_real", "rho_imag", "abs_error"]


@dataclass(frozen=True)
class CorrelationResult:
    rho_complex: complex
    rho_magnitude: float
    quadrature_nodes: int
    estimated_abs_error: float
    received_power: float


def _require(cfg: GeometryConfig, env: Environment) -> None:
    if cfg.environment is not env:
        raise GeometryError(f"expected a {env.value} configuration, got {cfg.environment.value}")


def _outdoor_integrand(cfg: GeometryConfig, with_phase: bool):
    n = cfg.path_loss_exponent
    ratio = cfg.separation_d / cfg.wavelength
    norm = 1.0 / (2.0 * math.pi * cfg.ring_radius_R)

    def f(xi, theta):
        w = xi ** (-n) * norm
        if not with_phase:
            return w[None]
        phase = np.exp(-2j * math.pi * ratio * np.cos(theta - cfg.angle_theta_R))
        return np.stack([w * phase, w.astype(complex)])

    return f


def _indoor_factor(cfg: GeometryConfig, d_s, gamma):
    big_d = cfg.big_distance_D
    return (d_s**2 + big_d**2 / 4.0) ** 2 - big_d**2 * d_s**2 * np.cos(gamma) ** 2


def _indoor_integrand(cfg: GeometryConfig, with_phase: bool):
    n = cfg.path_loss_exponent
    big_d = cfg.big_distance_D
    norm = big_d**n / (2.0 * math.pi * cfg.ring_radius_R)
    theta_r = cfg.angle_theta_R

    def f(d_s, gamma):
        w = _indoor_factor(cfg, d_s, gamma) ** (-n / 2.0) * norm
        if not with_phase:
            return w[None]
        xi = np.sqrt(d_s**2 + big_d**2 / 4.0 - big_d * d_s * np.cos(gamma))
        path = cfg.separation_d * (d_s * np.cos(gamma - theta_r) - 0.5 * big_d * math.cos(theta_r)) / xi
        phase = np.exp(-2j * math.pi * path / cfg.wavelength)
        return np.stack([w * phase, w.astype(complex)])

    return f


def _domain(cfg: GeometryConfig):
    """Radial breakpoints and angular pieces of the exclusion-regularized ring."""
    x0, big_r = cfg.exclusion_radius, cfg.ring_radius_R
    if cfg.environment is Environment.OUTDOOR:
        full = AngularPiece(lambda r: np.full_like(r, -math.pi), lambda r: np.full_like(r, math.pi))
        return [x0, big_r], [full]

    half_d = cfg.big_distance_D / 2.0

    def gap(r):
        # Half-width of the arc of radius r that falls inside a keep-out disk
        # centred at distance D/2 from the origin.
        c = (r**2 + half_d**2 - x0**2) / (2.0 * half_d * r)
        return np.arccos(np.clip(c, -1.0, 1.0))

    upper = AngularPiece(lambda r: gap(r), lambda r: math.pi - gap(r))
    lower = AngularPiece(lambda r: -(math.pi - gap(r)), lambda r: -gap(r))
    breaks = sorted({x0, big_r} | {b for b in (half_d - x0, half_d + x0) if x0 < b < big_r})
    return breaks, [upper, lower]


def _integrand(cfg: GeometryConfig, with_phase: bool):
    if cfg.environment is Environment.OUTDOOR:
        return _outdoor_integrand(cfg, with_phase)
    return _indoor_integrand(cfg, with_phase)


def _cubature(cfg, with_phase, tol, max_cells) -> CubatureResult:
    breaks, pieces = _domain(cfg)
    return integrate_polar(
        _integrand(cfg, with_phase),
        breaks,
        pieces,
        ncomp=2 if with_phase else 1,
        scale_component=1 if with_phase else 0,
        tol=tol,
        max_cells=max_cells,
        initial_angle_cells=4 + int(4 * cfg.separation_d / cfg.wavelength),
    )


def _correlation(cfg, tol, max_cells) -> CorrelationResult:
    res = _cubature(cfg, True, tol, max_cells)
    numerator, omega = res.values[0], res.values[1].real
    rho = complex(numerator / omega)
    err = (res.abs_errors[0] + abs(rho) * res.abs_errors[1]) / omega
    return CorrelationResult(rho, abs(rho), res.evaluations, float(err), float(omega))


def outdoor_correlation(cfg: GeometryConfig, *, tol: float = 1e-4, max_cells: int = 20000) -> CorrelationResult:
    """Correlation between the BS->user and BS->attacker links (outdoor ring model)."""
    _require(cfg, Environment.OUTDOOR)
    return _correlation(cfg, tol, max_cells)


def indoor_correlation(cfg: GeometryConfig, *, tol: float = 1e-4, max_cells: int = 20000) -> CorrelationResult:
    """Correlation between the Tx->Rx and Tx->attacker links (indoor ring model)."""
    _require(cfg, Environment.INDOOR)
    return _correlation(cfg, tol, max_cells)


def correlation(cfg: GeometryConfig, **kw) -> CorrelationResult:
    if cfg.environment is Environment.OUTDOOR:
        return outdoor_correlation(cfg, **kw)
    return indoor_correlation(cfg, **kw)


def received_power(cfg: GeometryConfig, *, tol: float = 1e-10, max_cells: int = 20000) -> float:
    """Normalizing power integral (the correlation integrand without its phase)."""
    return float(_cubature(cfg, False, tol, max_cells).values[0].real)


def path_length_difference(cfg: GeometryConfig, scatterer_polar, separation: float | None = None):
    """Exact and approximated ``-(d_as - d_us)`` for scatterers at ``(radius, angle)``.

    Outdoor polar coordinates are taken about the user/attacker midpoint;
    indoor ones about the ring centre (the Tx/receiver-pair midpoint).
    Accepts scalars or arrays; returns ``(exact, approximate)``.
    """
    radius, angle = (np.asarray(a, dtype=float) for a in scatterer_polar)
    d = cfg.separation_d if separation is None else float(separation)
    theta_r = cfg.angle_theta_R
    sx, sy = radius * np.cos(angle), radius * np.sin(angle)
    rx = cfg.legitimate_receiver(d)
    an = cfg.attack_node(d)
    d_us = np.hypot(sx - rx[0], sy - rx[1])
    d_as = np.hypot(sx - an[0], sy - an[1])
    exact = -(d_as - d_us)
    if cfg.environment is Environment.OUTDOOR:
        approx = d * np.cos(angle - theta_r)
    else:
        big_d = cfg.big_distance_D
        xi = np.sqrt(radius**2 + big_d**2 / 4.0 - big_d * radius * np.cos(angle))
        approx = d * (radius * np.cos(angle - theta_r) - 0.5 * big_d * math.cos(theta_r)) / xi
    if exact.ndim == 0:
        return float(exact), float(approx)
    return exact, approx


def correlation_curve(
    cfg: GeometryConfig,
    ratios: Iterable[float],
    thetas: Iterable[float],
    **kw,
) -> list[tuple[float, float, CorrelationResult]]:
    """Sweep separation/wavelength ratios at several axis angles, sorted by (theta, ratio)."""
    rows = []
    for theta in sorted(thetas):
        for ratio in sorted(ratios):
            point = cfg.with_(separation_d=ratio * cfg.wavelength, angle_theta_R=theta)
            rows.append((float(ratio), float(theta), correlation(point, **kw)))
    return rows


def _g9(x: float) -> str:
    return f"{x:.9g}"


def write_curve_csv(rows: Sequence[tuple[float, float, CorrelationResult]], path) -> None:
    rows = sorted(rows, key=lambda row: (row[1], row[0]))
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for ratio, theta, res in rows:
            writer.writerow([
                _g9(ratio), _g9(theta), _g9(res.rho_magnitude),
                _g9(res.rho_complex.real), _g9(res.rho_complex.imag), _g9(res.estimated_abs_error),
            ])
