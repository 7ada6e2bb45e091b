"""
lqdim/services/measure_service.py

Atomic approximations of a self-conformal measure and the quantities read off them:
ball masses with shell-error bookkeeping, the generalized-dimension integrand,
doubling-constant estimates and pushforwards through charts.

Every atom sits within `resolution` of the cylinder it stands for, so the target
measure of a closed ball B_r(x) lies between the atomic masses of B_{r−res}(x)
and B_{r+res}(x). Estimators report that shell as their error bound.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError
from lqdim.domain.models import DoublingConstantEstimate
from lqdim.services.geometry_service import (
    Chart,
    Space,
    SpatialIndex,
    point_set_diameter,
    probe_ids,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShellBound:
    value: float
    error: float


class AtomicMeasure:
    """Finite weighted point set standing in for μ at cylinder resolution.

    Args:
        positions:  (N, ambient_dim) atom coordinates.
        masses:     (N,) positive masses.
        space:      Metric space of the atoms.
        resolution: Max distance from an atom to any point of its cylinder.
        words:      Optional word (symbol tuple) behind each atom.
    """

    def __init__(
        self,
        positions,
        masses,
        space: Space,
        resolution: float,
        words: Sequence[tuple[int, ...]] | None = None,
        name: str = "",
    ):
        pts = space.validate(positions)
        m = np.asarray(masses, dtype=float).reshape(-1)
        if len(pts) != len(m):
            raise DomainError(f"{len(pts)} positions but {len(m)} masses")
        if len(m) == 0:
            raise DomainError("an atomic measure needs at least one atom")
        if np.any(m <= 0):
            raise DomainError(f"atom {int(np.argmin(m))} has non-positive mass")
        if not resolution > 0:
            raise DomainError(f"resolution must be positive, got {resolution}")
        if words is not None and len(words) != len(m):
            raise DomainError("words must align with atoms")
        pts.setflags(write=False)
        m.setflags(write=False)
        self.positions = pts
        self.masses = m
        self.space = space
        self.resolution = float(resolution)
        self.words = tuple(tuple(w) for w in words) if words is not None else None
        self.name = name
        self._indexes: dict[float, SpatialIndex] = {}

    @classmethod
    def from_atoms(
        cls,
        positions,
        masses,
        space: Space,
        resolution: float,
        words: Sequence[tuple[int, ...]] | None = None,
        name: str = "",
    ) -> "AtomicMeasure":
        """Build a measure, accumulating the mass of atoms at identical positions."""
        pts = space.validate(positions)
        m = np.asarray(masses, dtype=float)
        _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.reshape(-1)
        if len(first) == len(pts):
            return cls(pts, m, space, resolution, words=words, name=name)
        # keep first-occurrence order of the merged atoms
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        merged = np.bincount(rank[inverse], weights=m, minlength=len(first))
        logger.info("Merged %d coincident atoms into %d", len(pts), len(first))
        return cls(pts[np.sort(first)], merged, space, resolution, words=None, name=name)

    def __len__(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @cached_property
    def diameter(self) -> float:
        return point_set_diameter(self.space, self.positions)

    def index(self, radius: float) -> SpatialIndex:
        """Spatial index bucketed at the power of two just above `radius`."""
        width = 2.0 ** math.ceil(math.log2(radius))
        if width not in self._indexes:
            self._indexes[width] = SpatialIndex(self.space, self.positions, width)
        return self._indexes[width]

    def ids_within(self, x, r: float) -> np.ndarray:
        return self.index(r).query(x, r)


def require_scale(mu: AtomicMeasure, delta: float) -> None:
    """Reject analysis scales below the atom-resolution floor."""
    floor = get_settings().scale_floor_factor * mu.resolution
    if delta < floor * (1 - 1e-12):
        raise DomainError(
            f"scale {delta:.4g} is below the floor {floor:.4g} "
            f"({get_settings().scale_floor_factor:g} x atom resolution)"
        )


def ball_mass(mu: AtomicMeasure, x, r: float) -> float:
    """Atomic mass of the closed ball B_r(x)."""
    return float(mu.masses[mu.ids_within(x, r)].sum())


def ball_mass_bounds(mu: AtomicMeasure, x, r: float) -> ShellBound:
    """Ball mass plus the shell mass within one resolution of the boundary."""
    value = ball_mass(mu, x, r)
    outer = ball_mass(mu, x, r + mu.resolution)
    inner = ball_mass(mu, x, r - mu.resolution) if r > mu.resolution else 0.0
    return ShellBound(value=value, error=outer - inner)


def ball_masses(mu: AtomicMeasure, r: float, centers=None) -> np.ndarray:
    """Ball masses μ(B_r(c)) for every centre (default: every atom)."""
    pts = mu.positions if centers is None else mu.space.validate(centers)
    index = mu.index(r)
    return np.array([mu.masses[index.query(c, r)].sum() for c in pts])


def ball_masses_shell(mu: AtomicMeasure, r: float, centers=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ball masses at r − res, r and r + res for every centre."""
    inner_r = max(r - mu.resolution, mu.resolution * 1e-6)
    return (
        ball_masses(mu, inner_r, centers),
        ball_masses(mu, r, centers),
        ball_masses(mu, r + mu.resolution, centers),
    )


def _lq_from(masses: np.ndarray, balls: np.ndarray, q: float) -> float:
    return float(np.sum(masses * balls ** (q - 1.0)))


def lq_sum_bounds(mu: AtomicMeasure, delta: float, q: float) -> ShellBound:
    """The discretized ∫ μ(B_δ(x))^{q−1} dμ with its shell-error bound."""
    if q == 1:
        raise DomainError("q = 1 has no generalized-dimension integral; use the entropy module")
    require_scale(mu, delta)
    inner, mid, outer = ball_masses_shell(mu, delta)
    value = _lq_from(mu.masses, mid, q)
    error = max(abs(_lq_from(mu.masses, inner, q) - value), abs(_lq_from(mu.masses, outer, q) - value))
    return ShellBound(value=value, error=error)


def lq_sum(mu: AtomicMeasure, delta: float, q: float) -> float:
    """Σ_a m_a · μ(B_δ(a))^{q−1}."""
    if q == 1:
        raise DomainError("q = 1 has no generalized-dimension integral; use the entropy module")
    require_scale(mu, delta)
    return _lq_from(mu.masses, ball_masses(mu, delta), q)


def doubling_constant(
    mu: AtomicMeasure,
    scales: Sequence[float],
    probes: int | None = None,
) -> DoublingConstantEstimate:
    """Max of μ(B_2r(x))/μ(B_r(x)) over probe atoms x and scales r."""
    if not scales:
        raise DomainError("doubling estimate needs at least one scale")
    for r in scales:
        require_scale(mu, r)
    ids = probe_ids(len(mu), probes)
    centers = mu.positions[ids]
    per_scale: list[float] = []
    best, worst, worst_r = 1.0, int(ids[0]), float(scales[0])
    for r in scales:
        ratio = ball_masses(mu, 2 * r, centers) / ball_masses(mu, r, centers)
        k = int(np.argmax(ratio))
        per_scale.append(float(ratio[k]))
        if ratio[k] > best:
            best, worst, worst_r = float(ratio[k]), int(ids[k]), float(r)
    shell = ball_mass_bounds(mu, mu.positions[worst], 2 * worst_r).error
    logger.debug("doubling constant: C=%.3f at atom %d (r=%.3g)", best, worst, worst_r)
    return DoublingConstantEstimate(
        c_hat=best,
        scales=[float(s) for s in scales],
        per_scale=per_scale,
        worst_center=[float(v) for v in mu.positions[worst]],
        error_bound=float(shell),
    )


def doubling_space_check(
    mu: AtomicMeasure,
    r: float,
    c_hat: float,
    probes: int | None = None,
) -> tuple[int, float]:
    """Largest maximal (r/2)-packing of a 2r-ball vs. the bound C^9.

    A doubling measure with constant C forces every maximal (r/2)-packing of a
    2r-ball to have at most C^9 balls. Returns (observed max count, C^9).
    """
    require_scale(mu, r / 2)
    best = 0
    for cid in probe_ids(len(mu), probes):
        inside = mu.ids_within(mu.positions[cid], 2 * r)
        sub = mu.positions[inside]
        covered = np.zeros(len(inside), dtype=bool)
        count = 0
        for k in range(len(inside)):
            if covered[k]:
                continue
            covered |= mu.space.distances(sub[k], sub) <= r
            count += 1
        best = max(best, count)
    return best, c_hat ** 9


def pushforward(mu: AtomicMeasure, chart: Chart) -> AtomicMeasure:
    """Transport atoms through a chart; masses are unchanged.

    Atoms on the chart's coordinate side are lifted with chart.inverse, atoms on
    the manifold side are projected with chart.forward.
    """
    if mu.space == chart.coordinates:
        domain, mapper, target = chart.inverse_domain, chart.inverse, chart.manifold
        lip = chart.inverse_lipschitz()
    elif mu.space == chart.manifold:
        domain, mapper, target = chart.forward_domain, chart.forward, chart.coordinates
        lip = chart.forward_lipschitz()
    else:
        raise DomainError(f"chart '{chart.name}' does not act on the measure's space")
    inside = domain(mu.positions)
    if not np.all(inside):
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(
            f"atom {bad} at {mu.positions[bad].tolist()} lies outside the domain of chart '{chart.name}'"
        )
    return AtomicMeasure(
        mapper(mu.positions),
        mu.masses.copy(),
        target,
        resolution=mu.resolution * lip,
        words=mu.words,
        name=mu.name,
    )
