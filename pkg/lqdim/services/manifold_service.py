"""
lqdim/services/manifold_service.py

Self-conformal measures on the sphere by chart conjugation.

The stereographic chart φ sends the open lower hemisphere of S^n onto the open
unit disk of R^n (south pole ↦ origin):
    φ(x)    = x' / (1 − x_{n+1})
    φ⁻¹(u)  = (2u, |u|² − 1) / (|u|² + 1)
A planar similarity system f_i lifts to S_i = φ⁻¹ ∘ f_i ∘ φ, and the planar
self-similar measure μ₀ lifts to μ = μ₀ ∘ φ. Supports are kept below the
equator by a margin so the distortion band of φ stays finite.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError
from lqdim.domain.models import DistortionBand, TransferReport
from lqdim.services.geometry_service import Ball, EuclideanSpace, IdentityChart, SphereSpace, probe_ids
from lqdim.services.ifs_service import Conjugated, IFSSpec, Similarity
from lqdim.services.measure_service import AtomicMeasure, doubling_constant, pushforward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StereographicChart:
    """Stereographic chart of the lower hemisphere of S^n."""

    n: int
    name: str = "stereographic"

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"sphere dimension must be positive, got {self.n}")

    @property
    def manifold(self) -> SphereSpace:
        return SphereSpace(self.n)

    @property
    def coordinates(self) -> EuclideanSpace:
        return EuclideanSpace(self.n)

    def forward(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return pts[:, :-1] / (1.0 - pts[:, -1:])

    def inverse(self, points: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(points)
        sq = np.sum(u * u, axis=1, keepdims=True)
        return np.hstack([2.0 * u, sq - 1.0]) / (sq + 1.0)

    def forward_domain(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points)[:, -1] < 0.0

    def inverse_domain(self, points: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(points)
        return np.sum(u * u, axis=1) < 1.0

    def forward_factor(self, points: np.ndarray) -> np.ndarray:
        """|dφ| at sphere points."""
        return 1.0 / (1.0 - np.atleast_2d(points)[:, -1])

    def inverse_factor(self, points: np.ndarray) -> np.ndarray:
        """|dφ⁻¹| at disk points."""
        u = np.atleast_2d(points)
        return 2.0 / (1.0 + np.sum(u * u, axis=1))

    def inverse_lipschitz(self, region: Ball | None = None) -> float:
        if region is None:
            return 2.0
        rho = max(0.0, float(np.linalg.norm(region.center)) - region.radius)
        return 2.0 / (1.0 + rho * rho)

    def forward_lipschitz(self) -> float:
        return 1.0


def _first_outside(mask: np.ndarray) -> int | None:
    bad = np.flatnonzero(~mask)
    return int(bad[0]) if bad.size else None


def chart_forward(chart: StereographicChart, points) -> np.ndarray:
    """φ on points of the open lower hemisphere."""
    pts = chart.manifold.validate(points)
    bad = _first_outside(chart.forward_domain(pts))
    if bad is not None:
        raise DomainError(f"point {bad} is not in the open lower hemisphere (x_{{n+1}} = {pts[bad, -1]:.3g})")
    return chart.forward(pts)


def chart_inverse(chart: StereographicChart, points) -> np.ndarray:
    """φ⁻¹ on points of the open unit disk."""
    u = chart.coordinates.validate(points)
    bad = _first_outside(chart.inverse_domain(u))
    if bad is not None:
        raise DomainError(f"point {bad} is not in the open unit disk (|u| = {np.linalg.norm(u[bad]):.3g})")
    return chart.inverse(u)


def _margin_radius(margin: float) -> float:
    # |u| at which φ⁻¹(u) reaches height x_{n+1} = −margin
    return math.sqrt((1.0 - margin) / (1.0 + margin))


def conjugate_ifs(planar: IFSSpec, chart: StereographicChart) -> IFSSpec:
    """Lift a planar similarity system to the hemisphere: S_i = φ⁻¹ ∘ f_i ∘ φ."""
    if planar.space != chart.coordinates:
        raise DomainError(f"chart '{chart.name}' expects planar maps in R^{chart.n}")
    if not all(isinstance(m, Similarity) for m in planar.maps):
        raise DomainError("only similarity systems can be conjugated")
    seed = planar.seed_ball
    reach = float(np.linalg.norm(seed.center)) + seed.radius
    if reach >= 1.0:
        raise DomainError(f"seed ball reaches |u| = {reach:.4g}; it must stay inside the open unit disk")
    margin = get_settings().equator_margin
    if reach > _margin_radius(margin):
        raise DomainError(
            f"seed ball reaches |u| = {reach:.4g}; its lift would come within {margin:g} of the equator"
        )

    centre = chart.inverse(np.asarray(seed.center, dtype=float).reshape(1, -1))[0]
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(256, chart.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rim = chart.inverse(seed.center + seed.radius * dirs)
    radius = float(chart.manifold.distances(centre, rim).max()) * (1 + 1e-9)
    lifted_seed = Ball(center=centre, radius=radius)

    maps = tuple(Conjugated(base=m, chart=chart) for m in planar.maps)
    logger.info("Lifted '%s' onto S^%d through the %s chart", planar.name, chart.n, chart.name)
    return IFSSpec(
        maps=maps,
        probs=planar.probs,
        space=chart.manifold,
        seed_ball=lifted_seed,
        name=f"{planar.name}-lift",
        chart_seed=seed,
    )


def lift_measure(mu_plane: AtomicMeasure, chart: StereographicChart) -> AtomicMeasure:
    """μ₀ ∘ φ: planar atoms moved onto the hemisphere, masses unchanged."""
    limit = _margin_radius(get_settings().equator_margin)
    radii = np.linalg.norm(mu_plane.positions, axis=1)
    bad = _first_outside(radii <= limit)
    if bad is not None:
        raise DomainError(
            f"atom {bad} at {mu_plane.positions[bad].tolist()} lifts within the equator margin"
        )
    return pushforward(mu_plane, chart)


def _tangent_directions(centre: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.normal(size=(count, centre.size))
    dirs -= np.outer(dirs @ centre, centre)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def distortion_probe(chart, region: Sequence[Ball], samples: int = 64, seed: int | None = None) -> DistortionBand:
    """Band (d1, d2) with B_{d1·r}(φ(c)) ⊆ φ(B_r(c)) ⊆ B_{d2·r}(φ(c)) on the probed balls.

    Each geodesic ball is sampled on its boundary p = cos(r)·c + sin(r)·v; the
    smallest and largest planar distances |φ(p) − φ(c)| give r1 and r2.
    """
    if isinstance(chart, IdentityChart):
        return DistortionBand(d1=1.0, d2=1.0, probes=len(region))
    if not region:
        raise DomainError("distortion probe needs at least one ball")
    margin = get_settings().equator_margin
    rng = np.random.default_rng(get_settings().seed if seed is None else seed)
    d1, d2 = math.inf, 0.0
    for k, ball in enumerate(region):
        c = chart.manifold.point(ball.center)
        v = _tangent_directions(c, samples, rng)
        rim = np.cos(ball.radius) * c + np.sin(ball.radius) * v
        if c[-1] > -margin or rim[:, -1].max() > -margin:
            raise DomainError(f"probe ball {k} comes within {margin:g} of the equator")
        planar = np.linalg.norm(chart.forward(rim) - chart.forward(c.reshape(1, -1)), axis=1)
        d1 = min(d1, float(planar.min()) / ball.radius)
        d2 = max(d2, float(planar.max()) / ball.radius)
    logger.debug("distortion band over %d balls: [%.4f, %.4f]", len(region), d1, d2)
    return DistortionBand(d1=d1, d2=d2, probes=len(region))


def jacobian_probe(chart: StereographicChart, x, h: float = 1e-6) -> float:
    """Finite-difference conformal factor of φ at a sphere point (mean over tangent axes)."""
    c = chart.manifold.point(x)
    if not chart.forward_domain(c.reshape(1, -1))[0]:
        raise DomainError("jacobian probe point is not in the open lower hemisphere")
    basis = np.linalg.svd(np.eye(c.size) - np.outer(c, c))[0][:, : chart.n].T
    image = chart.forward(c.reshape(1, -1))
    moved = np.cos(h) * c + np.sin(h) * basis
    stretch = np.linalg.norm(chart.forward(moved) - image, axis=1) / h
    return float(stretch.mean())


def doubling_transfer_check(
    mu_plane: AtomicMeasure,
    chart,
    scales: Sequence[float],
    probes: int | None = None,
) -> TransferReport:
    """Doubling constant of the lifted measure against C_plane^{m+1}, 2^m ≥ d2/d1.

    The planar constant is measured over the scales r·2^k that the distortion
    band can reach (k from ⌊log2 d1⌋ to ⌈log2 d2⌉).
    """
    if not scales:
        raise DomainError("transfer check needs at least one scale")
    probes = get_settings().probe_count if probes is None else probes
    if isinstance(chart, IdentityChart):
        mu_sphere = pushforward(mu_plane, chart)
    else:
        mu_sphere = lift_measure(mu_plane, chart)

    ids = probe_ids(len(mu_sphere), probes)
    balls = [Ball(center=mu_sphere.positions[i], radius=float(r)) for r in scales for i in ids[:: max(1, len(ids) // 16)]]
    band = distortion_probe(chart, balls)
    ratio = band.d2 / band.d1
    m = 0 if ratio <= 1.0 + 1e-12 else math.ceil(math.log2(ratio))

    floor = get_settings().scale_floor_factor * mu_plane.resolution
    ks = range(math.floor(math.log2(band.d1) + 1e-12), math.ceil(math.log2(band.d2) - 1e-12) + 1)
    plane_scales = sorted({float(r) * 2.0 ** k for r in scales for k in ks if float(r) * 2.0 ** k >= floor})
    if not plane_scales:
        raise DomainError("no planar scale above the resolution floor for the transfer check")

    c_sphere = doubling_constant(mu_sphere, list(scales), probes=probes).c_hat
    c_plane = doubling_constant(mu_plane, plane_scales, probes=probes).c_hat
    bound = c_plane ** (m + 1)
    holds = c_sphere <= bound * (1 + 1e-9)
    logger.info("Doubling transfer: C_sphere=%.3f, C_plane=%.3f, m=%d, bound %.3f", c_sphere, c_plane, m, bound)
    return TransferReport(c_plane=c_plane, c_sphere=c_sphere, m=m, bound=bound, holds=holds, band=band)
