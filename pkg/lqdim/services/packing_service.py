"""
lqdim/services/packing_service.py

δ-packings of atom clouds and the partitions built from them:
  - heavy maximal packings (greedy, exact argmax of δ-ball mass)
  - random maximal packings (greedy in random order)
  - maximal partitions (cell j = B_δ(x_j) plus the unclaimed part of B_2δ(x_j))
  - (λ, δ)-grid partitions (nearest centre of a maximal λδ-packing)
  - good covers pulled back through a cylinder map S_u
and `verify`, which re-checks each object's invariants and reports witnesses.

All balls are closed. Ties always break towards the lowest atom id.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError, InvariantViolationError
from lqdim.domain.models import DoublingProbe, VerificationReport
from lqdim.services.geometry_service import point_set_diameter
from lqdim.services.ifs_service import Word, cut_level, in_cut_set
from lqdim.services.measure_service import AtomicMeasure, ball_masses, require_scale

logger = logging.getLogger(__name__)

_REL = 1e-12


# ── Objects ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Packing:
    """Centres in greedy order; `ids` are atom ids (−1 for off-atom centres)."""

    ids:       np.ndarray
    positions: np.ndarray
    radius:    float
    maximal:   bool = True
    heavy:     bool = False

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class MaximalPartition:
    """Cells ℰ_j over the atoms, one per packing centre.

    `core[a]` is True when atom a lies in the δ-ball of its own centre (the
    B_δ(x_j) part of E_j); the remaining atoms of a cell came in through the
    F-cell rule B_2δ(x_j) minus the earlier double balls.
    """

    labels:  np.ndarray
    core:    np.ndarray
    packing: Packing
    space:   object

    @property
    def delta(self) -> float:
        return self.packing.radius

    def __len__(self) -> int:
        return len(self.packing)

    def cells(self) -> list[np.ndarray]:
        return _cells(self.labels, len(self))

    def cell_masses(self, mu: AtomicMeasure) -> np.ndarray:
        return np.bincount(self.labels, weights=mu.masses, minlength=len(self))

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Cell of arbitrary points under the same rule that built the cells.

        Points farther than 2δ from every centre fall back to the nearest centre.
        """
        pts = self.space.validate(points)
        centres = self.packing.positions
        dist = self.space.pairwise(pts, centres)
        bound = self.delta * (1 + _REL)
        inner = dist <= bound
        outer = dist <= 2 * bound
        labels = np.where(
            inner.any(axis=1),
            np.argmax(inner, axis=1),
            np.where(outer.any(axis=1), np.argmax(outer, axis=1), np.argmin(dist, axis=1)),
        )
        stray = int(np.sum(~outer.any(axis=1)))
        if stray:
            logger.warning("%d point(s) lie beyond 2δ of every centre; assigned to the nearest", stray)
        return labels


@dataclass(frozen=True, eq=False)
class GridPartition:
    labels:     np.ndarray
    center_ids: np.ndarray
    positions:  np.ndarray
    lam:        float
    delta:      float

    def __len__(self) -> int:
        return len(self.center_ids)

    def cells(self) -> list[np.ndarray]:
        return _cells(self.labels, len(self))

    def cell_masses(self, mu: AtomicMeasure) -> np.ndarray:
        return np.bincount(self.labels, weights=mu.masses, minlength=len(self))


@dataclass(frozen=True, eq=False)
class GoodCover:
    """Atom cells {a : S_u(a) ∈ ℰ_j}; certified (Q, δ, D) constants."""

    labels: np.ndarray
    q:      float
    delta:  float
    d:      int
    word:   tuple[int, ...]

    def __len__(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def cells(self) -> list[np.ndarray]:
        return _cells(self.labels, len(self))


Partition = Union[MaximalPartition, GridPartition]


def _cells(labels: np.ndarray, count: int) -> list[np.ndarray]:
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(count + 1))
    return [order[bounds[k]:bounds[k + 1]] for k in range(count)]


# ── Packings ──────────────────────────────────────────────────────────────────

def heavy_maximal_packing(
    mu: AtomicMeasure,
    delta: float,
    rng: np.random.Generator | None = None,
    masses: np.ndarray | None = None,
) -> Packing:
    """Greedy heavy maximal δ-packing.

    Without `rng` each step takes the exact argmax of μ(B_δ(x)) over atoms not
    yet inside a chosen 2δ-ball (lowest id on ties). With `rng` the pick is
    uniform among the atoms whose ball mass is at least half that maximum.
    """
    require_scale(mu, delta)
    bm = ball_masses(mu, delta) if masses is None else masses
    remaining = np.ones(len(mu), dtype=bool)
    chosen: list[int] = []

    if rng is None:
        # descending mass, ascending id
        for a in np.lexsort((np.arange(len(mu)), -bm)):
            if remaining[a]:
                chosen.append(int(a))
                remaining[mu.ids_within(mu.positions[a], 2 * delta)] = False
    else:
        while remaining.any():
            open_ids = np.flatnonzero(remaining)
            top = bm[open_ids].max()
            candidates = open_ids[bm[open_ids] >= 0.5 * top]
            a = int(rng.choice(candidates))
            chosen.append(a)
            remaining[mu.ids_within(mu.positions[a], 2 * delta)] = False

    ids = np.asarray(chosen, dtype=np.int64)
    logger.debug("heavy packing at δ=%.4g: %d centres", delta, len(ids))
    return Packing(ids=ids, positions=mu.positions[ids], radius=delta, maximal=True, heavy=True)


def random_maximal_packing(mu: AtomicMeasure, delta: float, rng: np.random.Generator) -> Packing:
    """Greedy maximal δ-packing visiting the atoms in a random order."""
    require_scale(mu, delta)
    remaining = np.ones(len(mu), dtype=bool)
    chosen: list[int] = []
    for a in rng.permutation(len(mu)):
        if remaining[a]:
            chosen.append(int(a))
            remaining[mu.ids_within(mu.positions[a], 2 * delta)] = False
    ids = np.asarray(chosen, dtype=np.int64)
    return Packing(ids=ids, positions=mu.positions[ids], radius=delta, maximal=True, heavy=False)


# ── Partitions ────────────────────────────────────────────────────────────────

def maximal_partition(packing: Packing, mu: AtomicMeasure) -> MaximalPartition:
    """Assign every atom to one cell.

    An atom inside some B_δ(x_j) belongs to cell j (the δ-balls are disjoint);
    any other atom joins the first centre in packing order within 2δ.
    """
    delta = packing.radius
    labels = np.full(len(mu), -1, dtype=np.int64)
    for j, x in enumerate(packing.positions):
        labels[mu.ids_within(x, delta)] = j
    core = labels >= 0
    for j, x in enumerate(packing.positions):
        near = mu.ids_within(x, 2 * delta)
        labels[near[labels[near] < 0]] = j
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise InvariantViolationError(
            f"{missing.size} atom(s) lie beyond 2δ of every centre; the packing is not maximal",
            witnesses=[int(a) for a in missing[:10]],
        )
    return MaximalPartition(labels=labels, core=core, packing=packing, space=mu.space)


def grid_partition(mu: AtomicMeasure, lam: float, delta: float) -> GridPartition:
    """(λ, δ)-grid: a maximal λδ-packing in id order, cells by nearest centre."""
    if not 0 < lam <= 0.5:
        raise DomainError(f"lambda must lie in (0, 1/2], got {lam}")
    require_scale(mu, delta)
    r = lam * delta
    remaining = np.ones(len(mu), dtype=bool)
    centres: list[int] = []
    for a in range(len(mu)):
        if remaining[a]:
            centres.append(a)
            remaining[mu.ids_within(mu.positions[a], 2 * r)] = False

    labels = np.full(len(mu), -1, dtype=np.int64)
    best = np.full(len(mu), np.inf)
    for j, c in enumerate(centres):
        near = mu.ids_within(mu.positions[c], 2 * r)
        d = mu.space.distances(mu.positions[c], mu.positions[near])
        closer = d < best[near]
        labels[near[closer]] = j
        best[near[closer]] = d[closer]
    ids = np.asarray(centres, dtype=np.int64)
    logger.debug("grid partition λ=%.3g δ=%.4g: %d cells", lam, delta, len(ids))
    return GridPartition(labels=labels, center_ids=ids, positions=mu.positions[ids], lam=lam, delta=delta)


def partition_constant(
    partition: MaximalPartition,
    mu: AtomicMeasure,
    probe: DoublingProbe | None = None,
) -> tuple[float, float | None]:
    """max_j μ(ℰ_j)/μ(B_δ(x_j)) and, given a doubling probe, the bound 1 + D0·2^{2p+1}."""
    cells = partition.cell_masses(mu)
    balls = ball_masses(mu, partition.delta, partition.packing.positions)
    c1 = float(np.max(cells / balls))
    bound = None if probe is None else 1.0 + probe.d0_hat * 2.0 ** (2 * probe.p_hat + 1)
    return c1, bound


# ── Good covers ───────────────────────────────────────────────────────────────

def pullback_good_cover(
    partition: MaximalPartition,
    u: Word,
    mu: AtomicMeasure,
    t: int | None = None,
) -> GoodCover:
    """Pull a maximal partition at scale 2^{-s-t} back through S_u, u ∈ W_t.

    Atom a joins cell j when S_u(a) ∈ ℰ_j. The result is certified as a
    (Q, 2^{-s}, D)-good cover by measuring the largest cell diameter and the
    largest number of cells met by a 2^{-s}-ball centred at an atom. `t`
    defaults to the first level whose cut set holds u.
    """
    if t is None:
        t = cut_level(u)
    elif not in_cut_set(u, t):
        raise DomainError(f"word {u.symbols} is not in W_{t}")
    settings = get_settings()
    scale = partition.delta * 2.0 ** t
    raw = partition.locate(u.apply(mu.positions))
    _, labels = np.unique(raw, return_inverse=True)
    labels = labels.reshape(-1).astype(np.int64)
    cells = _cells(labels, int(labels.max()) + 1)

    diam = max((point_set_diameter(mu.space, mu.positions[c]) for c in cells), default=0.0)
    q_hat = diam / scale
    d_hat, worst = _max_cells_met(mu, labels, scale)
    logger.debug("pullback cover for u=%s: Q=%.3f D=%d at scale %.4g", u.symbols, q_hat, d_hat, scale)

    witnesses: list = []
    if q_hat > settings.good_cover_q_cap:
        witnesses.append({"Q": q_hat, "cap": settings.good_cover_q_cap})
    if d_hat > settings.good_cover_d_cap:
        witnesses.append({"D": d_hat, "cap": settings.good_cover_d_cap, "atom": worst})
    if witnesses:
        raise InvariantViolationError(f"pullback cover for word {u.symbols} fails certification", witnesses=witnesses)
    return GoodCover(labels=labels, q=max(q_hat, 1e-300), delta=scale, d=d_hat, word=u.symbols)


def _max_cells_met(mu: AtomicMeasure, labels: np.ndarray, r: float) -> tuple[int, int]:
    best, worst = 0, 0
    for a in range(len(mu)):
        met = np.unique(labels[mu.ids_within(mu.positions[a], r)]).size
        if met > best:
            best, worst = met, a
    return best, worst


# ── Verification ──────────────────────────────────────────────────────────────

def verify(obj, mu: AtomicMeasure) -> VerificationReport:
    """Re-check the invariants of a packing, partition or cover against μ."""
    if isinstance(obj, Packing):
        return _verify_packing(obj, mu)
    if isinstance(obj, MaximalPartition):
        return _verify_maximal_partition(obj, mu)
    if isinstance(obj, GridPartition):
        return _verify_grid_partition(obj, mu)
    if isinstance(obj, GoodCover):
        return _verify_good_cover(obj, mu)
    raise DomainError(f"cannot verify objects of type {type(obj).__name__}")


def _verify_packing(p: Packing, mu: AtomicMeasure) -> VerificationReport:
    report = VerificationReport(subject=f"packing(δ={p.radius:.4g}, {len(p)} centres)")
    delta = p.radius
    dist = mu.space.pairwise(p.positions, p.positions)
    close = np.argwhere(np.triu(dist <= 2 * delta, k=1))
    report.add(
        "disjoint",
        close.size == 0,
        "centres pairwise farther than 2δ" if close.size == 0
        else f"{len(close)} centre pair(s) within 2δ (closest {dist[tuple(close[0])]:.4g})",
        [tuple(int(v) for v in pair) for pair in close[:10]],
    )

    # first centre (in order) whose 2δ-ball holds each atom; len(p) = none
    first = np.full(len(mu), len(p), dtype=np.int64)
    for j in range(len(p) - 1, -1, -1):
        first[mu.ids_within(p.positions[j], 2 * delta)] = j

    if p.maximal:
        uncovered = np.flatnonzero(first == len(p))
        report.add(
            "maximal",
            uncovered.size == 0,
            "every atom within 2δ of a centre" if uncovered.size == 0
            else f"{uncovered.size} atom(s) farther than 2δ from all centres",
            [int(a) for a in uncovered[:10]],
        )

    if p.heavy:
        bm = ball_masses(mu, delta)
        centre_mass = ball_masses(mu, delta, p.positions)
        top = np.full(len(p) + 1, 0.0)
        np.maximum.at(top, first, bm)
        suffix = np.maximum.accumulate(top[::-1])[::-1][:len(p)]
        bad = np.flatnonzero(suffix > 2 * centre_mass * (1 + _REL))
        report.add(
            "heavy",
            bad.size == 0,
            "every pick within factor 2 of the heaviest open atom" if bad.size == 0
            else f"{bad.size} centre(s) lighter than half the heaviest open atom",
            [int(j) for j in bad[:10]],
        )
    return report


def _verify_maximal_partition(part: MaximalPartition, mu: AtomicMeasure) -> VerificationReport:
    report = VerificationReport(subject=f"maximal partition(δ={part.delta:.4g}, {len(part)} cells)")
    delta = part.delta
    labels = part.labels
    report.add("exhaustive", bool(np.all(labels >= 0)), "every atom in exactly one cell",
               [int(a) for a in np.flatnonzero(labels < 0)[:10]])
    inner_bad, outer_bad, diam_bad = [], [], []
    for j, (x, cell) in enumerate(zip(part.packing.positions, part.cells())):
        inner = mu.ids_within(x, delta)
        if np.any(labels[inner] != j):
            inner_bad.append(j)
        d = mu.space.distances(x, mu.positions[cell]) if cell.size else np.zeros(0)
        if d.size and d.max() > 2 * delta * (1 + _REL):
            outer_bad.append(j)
        if cell.size > 1 and point_set_diameter(mu.space, mu.positions[cell]) > 4 * delta * (1 + _REL):
            diam_bad.append(j)
    report.add("contains_inner_ball", not inner_bad, "B_δ(x_j) ⊆ cell_j", inner_bad[:10])
    report.add("inside_double_ball", not outer_bad, "cell_j ⊆ B_2δ(x_j)", outer_bad[:10])
    report.add("diameter", not diam_bad, "diam(cell_j) ≤ 4δ", diam_bad[:10])
    return report


def _verify_grid_partition(grid: GridPartition, mu: AtomicMeasure) -> VerificationReport:
    report = VerificationReport(subject=f"grid partition(λ={grid.lam:g}, δ={grid.delta:.4g}, {len(grid)} cells)")
    labels = grid.labels
    report.add("exhaustive", bool(np.all(labels >= 0)), "every atom in exactly one cell",
               [int(a) for a in np.flatnonzero(labels < 0)[:10]])
    inner_bad, outer_bad = [], []
    for j, (x, cell) in enumerate(zip(grid.positions, grid.cells())):
        inner = mu.ids_within(x, grid.lam * grid.delta)
        if np.any(labels[inner] != j):
            inner_bad.append(j)
        if cell.size and mu.space.distances(x, mu.positions[cell]).max() > grid.delta * (1 + _REL):
            outer_bad.append(j)
    report.add("contains_lambda_ball", not inner_bad, "B_λδ(x_i) ⊆ P_i", inner_bad[:10])
    report.add("inside_delta_ball", not outer_bad, "P_i ⊆ B_δ(x_i)", outer_bad[:10])
    return report


def _verify_good_cover(cover: GoodCover, mu: AtomicMeasure) -> VerificationReport:
    report = VerificationReport(subject=f"good cover(u={cover.word}, δ={cover.delta:.4g})")
    cells = cover.cells()
    empty = [j for j, c in enumerate(cells) if c.size == 0]
    report.add("meets_support", not empty, "every cell holds an atom", empty[:10])
    too_wide = [
        j for j, c in enumerate(cells)
        if c.size > 1 and point_set_diameter(mu.space, mu.positions[c]) > cover.q * cover.delta * (1 + _REL)
    ]
    report.add("diameter", not too_wide, f"diam ≤ Q·δ with Q={cover.q:.4g}", too_wide[:10])
    met, worst = _max_cells_met(mu, cover.labels, cover.delta)
    report.add("bounded_overlap", met <= cover.d, f"δ-balls meet at most {met} cells (D={cover.d})",
               [] if met <= cover.d else [worst])
    return report
