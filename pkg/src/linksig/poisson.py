"""Probability that Poisson-placed attackers sit close to every legitimate node."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class PoissonPlacement:
    attacker_density: float  # lambda_A, nodes per m^2
    close_radius: float = 0.0625  # half of the default 0.125 m wavelength
    legit_count: int = 1

    def __post_init__(self):
        if not self.attacker_density >= 0 or not math.isfinite(self.attacker_density):
            raise PlacementError("attacker_density must be finite and >= 0")
        if not self.close_radius > 0:
            raise PlacementError("close_radius must be > 0")
        if self.legit_count < 1:
            raise PlacementError("legit_count must be >= 1")

    @property
    def disk_mean(self) -> float:
        return self.attacker_density * math.pi * self.close_radius**2


def poisson_count_pmf(placement: PoissonPlacement, area: float, k: int) -> float:
    """Probability of exactly k attackers in a region of the given area."""
    if not area > 0:
        raise PlacementError("area must be > 0")
    if k < 0 or int(k) != k:
        raise PlacementError("k must be a non-negative integer")
    mu = placement.attacker_density * area
    if mu == 0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(mu) - mu - math.lgamma(k + 1))


def close_attack_probability(placement: PoissonPlacement) -> float:
    """(1 - exp(-lambda_A pi r^2))^N, evaluated without cancellation for small disks."""
    per_node = -math.expm1(-placement.disk_mean)
    if per_node == 0.0:
        return 0.0
    return math.exp(placement.legit_count * math.log(per_node))


def place_nodes(count: int, side: float, min_separation: float, rng, max_tries: int = 10000) -> np.ndarray:
    """Sequentially place nodes uniformly in a square with pairwise distance > min_separation."""
    pts = np.empty((0, 2))
    tries = 0
    while len(pts) < count:
        tries += 1
        if tries > max_tries:
            raise PlacementError(f"could not place {count} nodes {min_separation:g} m apart in a {side:g} m square")
        p = rng.uniform(0.0, side, 2)
        if len(pts) == 0 or np.min(np.hypot(*(pts - p).T)) > min_separation:
            pts = np.vstack([pts, p])
    return pts


def monte_carlo_close_attack(
    placement: PoissonPlacement,
    region_area: float,
    trials: int,
    seed: int,
    chunk: int = 20000,
) -> float:
    """Fraction of trials where every legitimate node has an attacker within ``close_radius``.

    The region is a square of the given area.  Legitimate nodes are placed
    once (seeded) more than 2r apart and at least r from the border, so the
    disks are disjoint and lie inside the region.
    """
    if trials < 1000:
        raise PlacementError("need at least 1000 trials")
    if not region_area > 0:
        raise PlacementError("region_area must be > 0")
    side = math.sqrt(region_area)
    r = placement.close_radius
    if side <= 2 * r:
        raise PlacementError("region too small for the close radius")
    rng = np.random.default_rng(seed)
    nodes = place_nodes(placement.legit_count, side - 2 * r, 2 * r, rng) + r
    mean_count = placement.attacker_density * region_area
    hits = 0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        counts = rng.poisson(mean_count, n)
        total = int(counts.sum())
        px = rng.uniform(0.0, side, total)
        py = rng.uniform(0.0, side, total)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        hits += kernels.coverage_hits(px, py, offsets, nodes[:, 0], nodes[:, 1], r)
        done += n
    return hits / trials


def probability_table(densities, radii, node_counts) -> list[tuple[float, float, int, float]]:
    rows = []
    for lam in densities:
        for r in radii:
            for n in node_counts:
                rows.append((float(lam), float(r), int(n), close_attack_probability(PoissonPlacement(lam, r, n))))
    return rows
