"""
lqdim/services/geometry_service.py

Metric spaces, closed balls, and a bucket-grid spatial index.

Spaces store points as rows of ambient coordinates:
  - EuclideanSpace(n)   points in R^n, Euclidean distance
  - SphereSpace(n)      points on S^n ⊂ R^{n+1}, great-circle distance

The index buckets points on a uniform grid over ambient coordinates and
filters candidates by the exact distance. Chordal distance never exceeds geodesic distance, so the
ambient prefilter is sound on the sphere.
"""
from __future__ import annotations

import itertools
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError
from lqdim.domain.models import DoublingProbe
from lqdim.utils.fitting import fit_line

logger = logging.getLogger(__name__)

_PAIRWISE_CHUNK = 256


# ── Charts ────────────────────────────────────────────────────────────────────

class Chart(Protocol):
    """A diffeomorphism handle between a manifold region and a coordinate region."""

    name: str

    def forward(self, points: np.ndarray) -> np.ndarray: ...

    def inverse(self, points: np.ndarray) -> np.ndarray: ...

    def forward_domain(self, points: np.ndarray) -> np.ndarray: ...

    def inverse_domain(self, points: np.ndarray) -> np.ndarray: ...

    def forward_factor(self, points: np.ndarray) -> np.ndarray: ...

    def inverse_factor(self, points: np.ndarray) -> np.ndarray: ...

    def inverse_lipschitz(self, region: "Ball | None" = None) -> float: ...

    def forward_lipschitz(self) -> float: ...

    @property
    def manifold(self) -> "Space": ...

    @property
    def coordinates(self) -> "Space": ...


@dataclass(frozen=True)
class IdentityChart:
    """The identity map of a space onto itself."""

    space: "Space"
    name: str = "identity"

    def forward(self, points: np.ndarray) -> np.ndarray:
        return np.array(points, dtype=float, copy=True)

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return np.array(points, dtype=float, copy=True)

    def forward_domain(self, points: np.ndarray) -> np.ndarray:
        return np.ones(len(points), dtype=bool)

    def inverse_domain(self, points: np.ndarray) -> np.ndarray:
        return np.ones(len(points), dtype=bool)

    def forward_factor(self, points: np.ndarray) -> np.ndarray:
        return np.ones(len(points))

    def inverse_factor(self, points: np.ndarray) -> np.ndarray:
        return np.ones(len(points))

    def inverse_lipschitz(self, region: "Ball | None" = None) -> float:
        return 1.0

    def forward_lipschitz(self) -> float:
        return 1.0

    @property
    def manifold(self) -> "Space":
        return self.space

    @property
    def coordinates(self) -> "Space":
        return self.space


# ── Spaces ────────────────────────────────────────────────────────────────────

class Space(ABC):
    """A metric space whose points are rows of ambient coordinates."""

    @property
    @abstractmethod
    def ambient_dim(self) -> int: ...

    @property
    @abstractmethod
    def manifold_dim(self) -> int: ...

    @abstractmethod
    def distances(self, x: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Distances from one point to each row of `points`."""

    @abstractmethod
    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distance matrix between the rows of `a` and the rows of `b`."""

    def validate(self, points) -> np.ndarray:
        """Coerce to an (N, ambient_dim) float array, rejecting invalid points."""
        arr = np.asarray(points, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1) if self.ambient_dim == 1 else arr.reshape(1, -1)
        if arr.ndim != 2 or (arr.shape[0] and arr.shape[1] != self.ambient_dim):
            raise DomainError(
                f"points must have {self.ambient_dim} ambient coordinates, got shape {arr.shape}"
            )
        return arr

    def point(self, x) -> np.ndarray:
        """Coerce a single point to a flat array of ambient coordinates."""
        arr = np.asarray(x, dtype=float).reshape(-1)
        if arr.size != self.ambient_dim:
            raise DomainError(f"point must have {self.ambient_dim} coordinates, got {arr.size}")
        self.validate(arr.reshape(1, -1))
        return arr

    def distance(self, x, y) -> float:
        return float(self.distances(self.point(x), self.point(y).reshape(1, -1))[0])


@dataclass(frozen=True)
class EuclideanSpace(Space):
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"dimension must be positive, got {self.n}")

    @property
    def ambient_dim(self) -> int:
        return self.n

    @property
    def manifold_dim(self) -> int:
        return self.n

    def distances(self, x: np.ndarray, points: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum((points - x) ** 2, axis=1))

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))


@dataclass(frozen=True)
class SphereSpace(Space):
    """The unit sphere S^n in R^{n+1} with its great-circle metric."""

    n: int
    tolerance: float = field(default_factory=lambda: get_settings().sphere_tolerance)

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f"dimension must be positive, got {self.n}")

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    @property
    def manifold_dim(self) -> int:
        return self.n

    def validate(self, points) -> np.ndarray:
        arr = super().validate(points)
        if arr.size:
            err = np.abs(np.linalg.norm(arr, axis=1) - 1.0)
            bad = int(np.argmax(err))
            if err[bad] > self.tolerance:
                raise DomainError(
                    f"point {bad} is off the unit sphere (| |x| - 1 | = {err[bad]:.3e})"
                )
        return arr

    def distances(self, x: np.ndarray, points: np.ndarray) -> np.ndarray:
        return _great_circle(points - x, points + x)

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = a[:, None, :] - b[None, :, :]
        summ = a[:, None, :] + b[None, :, :]
        return _great_circle(diff, summ)


def _great_circle(diff: np.ndarray, summ: np.ndarray) -> np.ndarray:
    # arccos(x·y) rewritten through chord lengths: exact zero on equal points,
    # no loss of precision near antipodes.
    chord = np.clip(np.sqrt(np.sum(diff * diff, axis=-1)) / 2.0, 0.0, 1.0)
    cochord = np.clip(np.sqrt(np.sum(summ * summ, axis=-1)) / 2.0, 0.0, 1.0)
    near = 2.0 * np.arcsin(chord)
    far = math.pi - 2.0 * np.arcsin(cochord)
    return np.where(chord <= cochord, near, far)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"ball radius must be positive, got {self.radius}")


def distance(space: Space, x, y) -> float:
    """Distance between two points of `space`."""
    return space.distance(x, y)


def point_set_diameter(space: Space, points: np.ndarray) -> float:
    """Exact diameter of a finite point set (chunked pairwise maximum)."""
    pts = space.validate(points)
    if len(pts) < 2:
        return 0.0
    best = 0.0
    for start in range(0, len(pts), _PAIRWISE_CHUNK):
        block = space.pairwise(pts[start:start + _PAIRWISE_CHUNK], pts)
        best = max(best, float(block.max()))
    return best


# ── Spatial index ─────────────────────────────────────────────────────────────

class SpatialIndex:
    """Uniform bucket grid over the index coordinates of an immutable point set.

    Args:
        space:  Metric space the points live in.
        points: (N, ambient_dim) array; ids are row numbers.
        width:  Bucket edge length in ambient coordinates.
    """

    def __init__(self, space: Space, points, width: float):
        if not width > 0:
            raise DomainError(f"bucket width must be positive, got {width}")
        self.space = space
        self.points = space.validate(points)
        self.points.setflags(write=False)
        self.width = float(width)
        coords = self.points
        self._origin = coords.min(axis=0) if len(coords) else np.zeros(coords.shape[1])
        keys = np.floor((coords - self._origin) / self.width).astype(np.int64)
        buckets: dict[tuple, list[int]] = {}
        for i, key in enumerate(map(tuple, keys.tolist())):
            buckets.setdefault(key, []).append(i)
        self._buckets = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}
        logger.debug(
            "SpatialIndex: %d points in %d buckets (width=%.3g)",
            len(self.points), len(self._buckets), self.width,
        )

    def __len__(self) -> int:
        return len(self.points)

    def _candidates(self, x: np.ndarray, r: float) -> np.ndarray:
        centre = x
        reach = r * (1 + 1e-12) + 1e-15
        lo = np.floor((centre - reach - self._origin) / self.width).astype(np.int64)
        hi = np.floor((centre + reach - self._origin) / self.width).astype(np.int64)
        cells = int(np.prod(hi - lo + 1))
        if cells > len(self._buckets):
            return np.arange(len(self.points))
        found = [
            self._buckets[key]
            for key in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi)))
            if key in self._buckets
        ]
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)

    def query(self, x, r: float) -> np.ndarray:
        """Ids of the points within closed distance r of x, ascending."""
        if not r > 0:
            raise DomainError(f"query radius must be positive, got {r}")
        x = self.space.point(x)
        ids = self._candidates(x, r)
        if ids.size == 0:
            return ids
        keep = self.space.distances(x, self.points[ids]) <= r
        return np.sort(ids[keep])


def range_query(index: SpatialIndex, x, r: float) -> list[int]:
    """Ids of indexed points within closed distance r of x, in ascending order."""
    return [int(i) for i in index.query(x, r)]


# ── Doubling probes ───────────────────────────────────────────────────────────

def probe_ids(n: int, probes: int | None) -> np.ndarray:
    if probes is None or probes >= n:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, probes).round().astype(np.int64))


def _greedy_net_size(space: Space, points: np.ndarray, ids: np.ndarray, r: float, first: int) -> int:
    """Size of a greedy r-net of points[ids], seeded at `first`."""
    subset = points[ids]
    covered = np.zeros(len(ids), dtype=bool)
    pick = int(np.searchsorted(ids, first))
    count = 0
    while True:
        covered |= space.distances(subset[pick], subset) <= r
        count += 1
        remaining = np.flatnonzero(~covered)
        if remaining.size == 0:
            return count
        pick = int(remaining[0])


def covering_probe(
    space: Space,
    sample,
    R: float,
    r: float,
    probes: int | None = None,
    index: SpatialIndex | None = None,
) -> int:
    """Greedy-net upper bound on the r-balls needed to cover sample ∩ B_R(x).

    Maximized over probe centres x drawn from the sample (all of them unless
    `probes` caps the count, in which case evenly spaced ids are used).
    """
    pts = space.validate(sample)
    if len(pts) == 0:
        raise DomainError("covering probe needs a nonempty sample")
    if not (R >= r > 0):
        raise DomainError(f"covering probe needs R >= r > 0, got R={R}, r={r}")
    index = index or SpatialIndex(space, pts, width=r)
    best = 0
    for cid in probe_ids(len(pts), probes):
        ids = index.query(pts[cid], R)
        best = max(best, _greedy_net_size(space, pts, ids, r, first=int(cid)))
    return best


def doubling_probe(
    space: Space,
    sample,
    scales: Sequence[float],
    ratios: Sequence[float] = (2.0, 4.0, 8.0),
    probes: int | None = None,
) -> DoublingProbe:
    """Estimate N0 (2r-balls by r-balls) and fit N(R, r) ≤ D0 (R/r)^p."""
    if not scales:
        raise DomainError("doubling probe needs at least one scale")
    pts = space.validate(sample)
    counts: dict[float, int] = {}
    n0 = 1
    for r in scales:
        index = SpatialIndex(space, pts, width=r)
        for k in ratios:
            c = covering_probe(space, pts, k * r, r, probes=probes, index=index)
            counts[k] = max(counts.get(k, 1), c)
            if k == 2.0:
                n0 = max(n0, c)
        if 2.0 not in ratios:
            n0 = max(n0, covering_probe(space, pts, 2 * r, r, probes=probes, index=index))

    ks = sorted(counts)
    if len(ks) >= 2:
        p_hat = fit_line(np.log(ks), np.log([counts[k] for k in ks])).slope
    else:
        p_hat = math.log2(max(n0, 2))
    p_hat = max(p_hat, 1e-6)
    d0_hat = max(1.0, max(counts[k] / k ** p_hat for k in ks)) if ks else float(n0)
    logger.debug("doubling probe: N0=%d D0=%.3f p=%.3f", n0, d0_hat, p_hat)
    return DoublingProbe(n0_hat=n0, d0_hat=d0_hat, p_hat=p_hat, scales=[float(s) for s in scales])
