"""
lqdim/services/ifs_service.py

Conformal iterated function systems: maps, words, cut sets W_t, distortion
constants, and atomic approximations of the self-conformal measure
μ = Σ p_i μ∘S_i⁻¹.

Words use 1-based symbols. S_u = S_{u_1}∘…∘S_{u_k}, p_u = p_{u_1}…p_{u_k}, and
every word carries an upper bound on diam(K_u). The empty word stands for K
itself and never belongs to a cut set.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError, ResourceError
from lqdim.domain.models import DistortionConstants
from lqdim.domain.schemas import IFSSpecFile
from lqdim.services.geometry_service import (
    Ball,
    Chart,
    EuclideanSpace,
    SphereSpace,
    Space,
    point_set_diameter,
)
from lqdim.services.measure_service import AtomicMeasure

logger = logging.getLogger(__name__)

_CUT_SLACK = 1e-12        # relative slack in the diameter-vs-threshold comparison
_CLOUD_POINTS = 4096      # cap on the diameter-estimation cloud


# ── Conformal maps ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Similarity:
    """x ↦ ratio · rotation @ x + translation."""

    ratio:       float
    rotation:    np.ndarray
    translation: np.ndarray
    gamma:       float = 1.0

    def __post_init__(self):
        rot = np.atleast_2d(np.asarray(self.rotation, dtype=float))
        b = np.asarray(self.translation, dtype=float).reshape(-1)
        if not 0 < self.ratio < 1:
            raise DomainError(f"similarity ratio must lie in (0, 1), got {self.ratio}")
        if rot.shape != (b.size, b.size):
            raise DomainError(f"rotation shape {rot.shape} does not match translation of size {b.size}")
        if not np.allclose(rot @ rot.T, np.eye(b.size), atol=1e-9):
            raise DomainError("rotation part of a similarity must be orthogonal")
        if not 0 < self.gamma <= 1:
            raise DomainError(f"Hölder exponent must lie in (0, 1], got {self.gamma}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", b)

    @property
    def dim(self) -> int:
        return self.translation.size

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ (self.ratio * self.rotation).T + self.translation

    def invert(self, points: np.ndarray) -> np.ndarray:
        return ((points - self.translation) @ self.rotation) / self.ratio

    def then(self, inner: "Similarity") -> "Similarity":
        """self ∘ inner."""
        return _compose_similarity(self, inner)

    def factor(self, points: np.ndarray) -> np.ndarray:
        return np.full(len(points), self.ratio)

    def fixed_point(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.dim) - self.ratio * self.rotation, self.translation)


def _compose_similarity(outer: Similarity, inner: Similarity) -> Similarity:
    # ratios of long words underflow the (0, 1) check only past ~700 levels
    composed = object.__new__(Similarity)
    object.__setattr__(composed, "ratio", outer.ratio * inner.ratio)
    object.__setattr__(composed, "rotation", outer.rotation @ inner.rotation)
    object.__setattr__(
        composed, "translation",
        outer.ratio * (outer.rotation @ inner.translation) + outer.translation,
    )
    object.__setattr__(composed, "gamma", min(outer.gamma, inner.gamma))
    return composed


@dataclass(frozen=True, eq=False)
class Conjugated:
    """S = φ⁻¹ ∘ f ∘ φ for a similarity f acting in chart coordinates."""

    base:  Similarity
    chart: Chart

    @property
    def ratio(self) -> float:
        return self.base.ratio

    @property
    def gamma(self) -> float:
        return self.base.gamma

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.chart.inverse(self.base.apply(self.chart.forward(points)))

    def invert(self, points: np.ndarray) -> np.ndarray:
        return self.chart.inverse(self.base.invert(self.chart.forward(points)))

    def then(self, inner: "Conjugated") -> "Conjugated":
        return Conjugated(base=self.base.then(inner.base), chart=self.chart)

    def factor(self, points: np.ndarray) -> np.ndarray:
        """Conformal factor |S'(x)| through the chain rule."""
        coords = self.chart.forward(points)
        image = self.base.apply(coords)
        return self.chart.inverse_factor(image) * self.base.ratio * self.chart.forward_factor(points)

    def fixed_point(self) -> np.ndarray:
        return self.chart.inverse(self.base.fixed_point().reshape(1, -1))[0]


ConformalMap = Union[Similarity, Conjugated]


# ── Specs and words ───────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class IFSSpec:
    """A CIFS with its probability vector.

    `diameter` estimates diam(K); `word_scale` is the factor turning a word's
    contraction ratio into its cylinder-diameter bound. For conjugated systems
    `chart_seed` is the seed ball in chart coordinates.
    """

    maps:       tuple[ConformalMap, ...]
    probs:      np.ndarray
    space:      Space
    seed_ball:  Ball
    name:       str = "ifs"
    chart_seed: Ball | None = None
    diameter:   float = field(default=0.0)
    word_scale: float = field(default=0.0)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(self.maps) < 2:
            raise DomainError(f"a CIFS needs at least two maps, got {len(self.maps)}")
        if p.size != len(self.maps):
            raise DomainError(f"{p.size} probabilities for {len(self.maps)} maps")
        if np.any(p <= 0):
            raise DomainError("all probabilities must be positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DomainError(f"probabilities sum to {p.sum():.12g}, not 1")
        object.__setattr__(self, "probs", p / p.sum())
        object.__setattr__(self, "maps", tuple(self.maps))
        _check_seed_invariance(self)
        if self.diameter <= 0:
            object.__setattr__(self, "diameter", _estimate_diameter(self.space, self.maps))
        if self.word_scale <= 0:
            object.__setattr__(self, "word_scale", _word_scale(self))
        logger.debug(
            "IFS '%s': %d maps, diam(K)≈%.6g, word scale %.6g",
            self.name, len(self.maps), self.diameter, self.word_scale,
        )

    @property
    def size(self) -> int:
        return len(self.maps)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([m.ratio for m in self.maps])

    def anchor(self) -> np.ndarray:
        """Fixed point of S_1, always a point of K."""
        return self.maps[0].fixed_point()


@dataclass(frozen=True, eq=False)
class Word:
    symbols:  tuple[int, ...]
    weight:   float
    ratio:    float
    map:      ConformalMap | None
    diameter: float
    parent_diameter: float = math.inf   # diam(K_{u⁻}); unbounded for the root and its children

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def parent(self) -> tuple[int, ...]:
        return self.symbols[:-1]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points if self.map is None else self.map.apply(points)


@dataclass(frozen=True)
class CutSet:
    t:     int
    words: tuple[Word, ...]

    def __len__(self) -> int:
        return len(self.words)

    @property
    def total_weight(self) -> float:
        return math.fsum(w.weight for w in self.words)


def root_word(spec: IFSSpec) -> Word:
    return Word(symbols=(), weight=1.0, ratio=1.0, map=None, diameter=spec.diameter)


def compose(spec: IFSSpec, u: Word, i: int) -> Word:
    """Append symbol i to u: S_{ui} = S_u ∘ S_i, p_{ui} = p_u p_i."""
    if not 1 <= i <= spec.size:
        raise DomainError(f"symbol {i} outside 1..{spec.size}")
    s = spec.maps[i - 1]
    ratio = u.ratio * s.ratio
    return Word(
        symbols=u.symbols + (i,),
        weight=u.weight * float(spec.probs[i - 1]),
        ratio=ratio,
        map=s if u.map is None else u.map.then(s),
        diameter=ratio * spec.word_scale,
        parent_diameter=u.diameter if u.symbols else math.inf,
    )


def word(spec: IFSSpec, symbols) -> Word:
    """Build the word for an explicit symbol sequence."""
    w = root_word(spec)
    for i in symbols:
        w = compose(spec, w, int(i))
    return w


def cut_size(spec: IFSSpec, threshold: float, limit: int) -> int | None:
    """Number of words in the cut at `threshold` (ratios only), or None past `limit`."""
    ratios = spec.ratios
    bound = threshold * (1 + _CUT_SLACK)
    stack = [float(r) for r in ratios]
    count = 0
    while stack:
        r = stack.pop()
        if r * spec.word_scale <= bound:
            count += 1
            if count > limit:
                return None
        else:
            stack.extend(r * ratios)
            if count + len(stack) > limit:
                return None
    return count


def _fitting_level(spec: IFSSpec, t: int, budget: int) -> int | None:
    for level in range(t - 1, -1, -1):
        if cut_size(spec, 2.0 ** -level, budget) is not None:
            return level
    return None


def cut_words(spec: IFSSpec, threshold: float, budget: int | None = None) -> tuple[Word, ...]:
    """Words u with diam(K_u) ≤ threshold < diam(K_{u⁻}), in lexicographic order."""
    if not threshold > 0:
        raise DomainError(f"cut threshold must be positive, got {threshold}")
    budget = budget or get_settings().word_budget
    bound = threshold * (1 + _CUT_SLACK)
    root = root_word(spec)
    stack = [compose(spec, root, i) for i in range(spec.size, 0, -1)]
    accepted: list[Word] = []
    while stack:
        w = stack.pop()
        if w.diameter <= bound:
            accepted.append(w)
        else:
            stack.extend(compose(spec, w, i) for i in range(spec.size, 0, -1))
        if len(accepted) + len(stack) > budget:
            level = max(0, math.floor(-math.log2(threshold)))
            fits = _fitting_level(spec, level, budget)
            raise ResourceError(
                f"cut at threshold {threshold:.4g} exceeds the word budget of {budget}"
                + (f"; level t={fits} fits" if fits is not None else ""),
                fitting_level=fits,
            )
    return tuple(accepted)


def in_cut_set(u: Word, t: int) -> bool:
    """u ∈ W_t: diam(K_u) ≤ 2^{-t} < diam(K_{u⁻}), every first-level word passing the parent test."""
    if not u.symbols or t < 0:
        return False
    bound = 2.0 ** -t * (1 + _CUT_SLACK)
    return u.diameter <= bound < u.parent_diameter


def cut_level(u: Word) -> int:
    """Smallest t with u ∈ W_t."""
    if not u.symbols:
        raise DomainError("the empty word is not a cut word")
    t = 0
    while u.parent_diameter <= 2.0 ** -t * (1 + _CUT_SLACK):
        t += 1
    if not in_cut_set(u, t):
        raise DomainError(f"word {u.symbols} (diameter {u.diameter:.4g}) belongs to no cut set")
    return t


def cut_set(spec: IFSSpec, t: int, budget: int | None = None) -> CutSet:
    """W_t: the words whose cylinder diameter first drops to ≤ 2^{-t}."""
    if t < 0:
        raise DomainError(f"level must be nonnegative, got {t}")
    words = cut_words(spec, 2.0 ** -t, budget)
    logger.debug("W_%d has %d words", t, len(words))
    return CutSet(t=t, words=words)


def _atoms_from_words(spec: IFSSpec, words, resolution: float) -> AtomicMeasure:
    x0 = spec.anchor().reshape(1, -1)
    positions = np.vstack([w.apply(x0) for w in words])
    masses = np.array([w.weight for w in words])
    return AtomicMeasure.from_atoms(
        positions, masses, spec.space, resolution,
        words=[w.symbols for w in words], name=spec.name,
    )


def attractor_atoms(spec: IFSSpec, resolution: float, budget: int | None = None) -> AtomicMeasure:
    """One atom S_u(x₀) of mass p_u per word of the cut at `resolution`."""
    words = cut_words(spec, resolution, budget)
    logger.info("Atomized '%s': %d atoms at resolution %.3g", spec.name, len(words), resolution)
    return _atoms_from_words(spec, words, resolution)


def cylinder_atoms(spec: IFSSpec, depth: int, budget: int | None = None) -> AtomicMeasure:
    """One atom per word of length `depth` (a uniform-depth section of the word tree)."""
    if depth < 1:
        raise DomainError(f"depth must be at least 1, got {depth}")
    budget = budget or get_settings().word_budget
    if spec.size ** depth > budget:
        raise ResourceError(f"{spec.size}^{depth} words exceed the word budget of {budget}")
    words = [word(spec, s) for s in itertools.product(range(1, spec.size + 1), repeat=depth)]
    resolution = max(w.diameter for w in words)
    return _atoms_from_words(spec, words, resolution)


# ── Seed, diameter and distortion ─────────────────────────────────────────────

def _ball_samples(space: Space, ball: Ball, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points of a closed ball: its centre, boundary points and interior points."""
    c = np.asarray(ball.center, dtype=float).reshape(-1)
    if isinstance(space, SphereSpace):
        dirs = rng.normal(size=(count, c.size))
        dirs -= np.outer(dirs @ c, c)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        angles = ball.radius * np.concatenate([np.ones(count // 2), rng.random(count - count // 2)])
        pts = np.cos(angles)[:, None] * c + np.sin(angles)[:, None] * dirs
        return np.vstack([c, pts / np.linalg.norm(pts, axis=1, keepdims=True)])
    dirs = rng.normal(size=(count, c.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = ball.radius * np.concatenate([np.ones(count // 2), rng.random(count - count // 2)])
    axes = np.vstack([np.eye(c.size), -np.eye(c.size)]) * ball.radius
    return np.vstack([c, c + axes, c + radii[:, None] * dirs])


def _check_seed_invariance(spec: IFSSpec, count: int = 64) -> None:
    """Sampled check that every map sends the seed ball into itself."""
    rng = np.random.default_rng(0)
    if spec.chart_seed is not None:
        ball, space = spec.chart_seed, EuclideanSpace(spec.chart_seed.center.size)
        maps = [m.base if isinstance(m, Conjugated) else m for m in spec.maps]
    else:
        ball, space, maps = spec.seed_ball, spec.space, list(spec.maps)
    samples = _ball_samples(space, ball, count, rng)
    centre = np.asarray(ball.center, dtype=float).reshape(-1)
    for i, m in enumerate(maps, start=1):
        reach = space.distances(centre, m.apply(samples))
        if reach.max() > ball.radius * (1 + 1e-9):
            raise DomainError(
                f"map {i} sends part of the seed ball outside itself "
                f"(reach {reach.max():.6g} > radius {ball.radius:.6g})"
            )


def _estimate_diameter(space: Space, maps) -> float:
    """Diameter of the images of all fixed points under the words of one depth."""
    size = len(maps)
    depth = max(1, min(get_settings().diameter_depth, int(math.log(_CLOUD_POINTS / size) / math.log(size))))
    cloud = np.vstack([m.fixed_point().reshape(1, -1) for m in maps])
    for _ in range(depth):
        cloud = np.vstack([m.apply(cloud) for m in maps])
    return point_set_diameter(space, cloud)


def _word_scale(spec: IFSSpec) -> float:
    if not any(isinstance(m, Conjugated) for m in spec.maps):
        return spec.diameter
    base_maps = [m.base for m in spec.maps]
    planar = _estimate_diameter(EuclideanSpace(base_maps[0].dim), base_maps)
    chart = spec.maps[0].chart
    return chart.inverse_lipschitz(spec.chart_seed) * planar


def _attractor_cloud(spec: IFSSpec, size: int = 256) -> np.ndarray:
    depth = max(1, int(math.log(size) / math.log(spec.size)))
    cloud = spec.anchor().reshape(1, -1)
    for _ in range(depth):
        cloud = np.vstack([m.apply(cloud) for m in spec.maps])
    return cloud


def distortion_constants(spec: IFSSpec, probe_count: int, seed: int | None = None) -> DistortionConstants:
    """Empirical bounded-distortion constants (lower bounds on the true ones)."""
    if probe_count < 2:
        raise DomainError(f"probe_count must be at least 2, got {probe_count}")
    n = spec.space.manifold_dim
    diam = spec.diameter
    if isinstance(spec.space, EuclideanSpace) and all(isinstance(m, Similarity) for m in spec.maps):
        lam = float(min(m.ratio for m in spec.maps) ** n)
        return DistortionConstants(d1=1.0, d2=1.0, d3=max(1.0, diam, 1.0 / diam), lambda_min=lam, exact=True)

    rng = np.random.default_rng(get_settings().seed if seed is None else seed)
    cloud = _attractor_cloud(spec)
    d1 = d2 = d3 = 1.0
    for _ in range(probe_count):
        length = int(rng.integers(1, 5))
        w = word(spec, rng.integers(1, spec.size + 1, size=length))
        factors = w.map.factor(cloud)
        sup = float(factors.max())
        d1 = max(d1, sup / float(factors.min()))
        a, b = rng.integers(0, len(cloud), size=2)
        if a != b:
            before = spec.space.distance(cloud[a], cloud[b])
            after = spec.space.distance(w.apply(cloud[a:a + 1])[0], w.apply(cloud[b:b + 1])[0])
            if before > 0 and after > 0:
                ratio = after / (sup * before)
                d2 = max(d2, ratio, 1.0 / ratio)
        diam_u = point_set_diameter(spec.space, w.apply(cloud))
        if diam_u > 0:
            d3 = max(d3, sup / diam_u, diam_u / sup)
    d3 = max(d3, d2 * diam, d2 / diam)
    seed_pts = _ball_samples(spec.space, spec.seed_ball, 64, rng)
    if isinstance(spec.space, SphereSpace):
        inside = spec.maps[0].chart.forward_domain(seed_pts)
        seed_pts = seed_pts[inside]
    lam = min(float(np.min(m.factor(seed_pts) ** n)) for m in spec.maps)
    logger.debug("distortion constants: D1=%.4f D2=%.4f D3=%.4f λ=%.4g", d1, d2, d3, lam)
    return DistortionConstants(d1=d1, d2=d2, d3=d3, lambda_min=lam, exact=False)


# ── Construction from spec files ──────────────────────────────────────────────

def spec_from_schema(schema: IFSSpecFile) -> IFSSpec:
    """Build the IFS described by a validated spec file (before any chart lift)."""
    dim = schema.space.dim
    space = EuclideanSpace(dim)
    maps = []
    for m in schema.maps:
        rotation = np.asarray(m.rotation, dtype=float) if m.rotation is not None else np.eye(dim)
        maps.append(Similarity(ratio=m.ratio, rotation=rotation, translation=np.asarray(m.translation), gamma=schema.gamma))
    seed = Ball(center=np.asarray(schema.seed_ball.center, dtype=float), radius=schema.seed_ball.radius)
    return IFSSpec(maps=tuple(maps), probs=np.asarray(schema.probs), space=space, seed_ball=seed, name=schema.name)


def default_resolution(spec: IFSSpec, t_max: int, target: int | None = None) -> float:
    """Finest dyadic atom resolution whose cut stays within `target` atoms.

    Never coarser than 2^{-(t_max+2)}, so every level up to t_max clears the
    4 × resolution floor.
    """
    target = target or get_settings().atom_target
    level = t_max + 2
    while level < t_max + 24 and cut_size(spec, 2.0 ** -(level + 1), target) is not None:
        level += 1
    return 2.0 ** -level
