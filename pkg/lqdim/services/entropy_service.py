"""
lqdim/services/entropy_service.py

Partition entropy and the entropy dimension.

h*_t is the smallest entropy found among maximal partitions built from heavy
packings at δ = 2^{-t} (cells of diameter ≤ 4·2^{-t}); restart 0 is the
deterministic heavy packing, later restarts pick among near-argmax candidates.
Every reported h* is therefore an upper bound on the infimum over all maximal
partitions. Natural logarithms throughout.
"""
from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError, NonDoublingError
from lqdim.domain.models import (
    DoublingConstantEstimate,
    EntropyLevel,
    EntropyTrace,
    SuperadditivityReport,
)
from lqdim.services.measure_service import (
    AtomicMeasure,
    ball_masses,
    doubling_constant,
    require_scale,
)
from lqdim.services.packing_service import grid_partition, heavy_maximal_packing, maximal_partition
from lqdim.utils.fitting import fit_line

logger = logging.getLogger(__name__)

_LOG2 = math.log(2.0)


def _entropy(masses: np.ndarray) -> float:
    m = masses[masses > 0]
    return float(max(0.0, -np.sum(m * np.log(m))))


def partition_entropy(mu: AtomicMeasure, cells) -> float:
    """−Σ μ(P) log μ(P) over a partition of the atoms.

    `cells` is a partition object with per-atom `labels`, or a sequence of
    atom-id collections.
    """
    labels = getattr(cells, "labels", None)
    if labels is None:
        counts = np.zeros(len(mu), dtype=np.int64)
        labels = np.full(len(mu), -1, dtype=np.int64)
        for j, cell in enumerate(cells):
            ids = np.asarray(list(cell), dtype=np.int64)
            if ids.size and (ids.min() < 0 or ids.max() >= len(mu)):
                raise DomainError(f"cell {j} names an atom outside 0..{len(mu) - 1}")
            np.add.at(counts, ids, 1)
            labels[ids] = j
        overlap = np.flatnonzero(counts > 1)
        if overlap.size:
            raise DomainError(f"cells overlap at atom {int(overlap[0])}")
    missing = np.flatnonzero(np.asarray(labels) < 0)
    if missing.size:
        raise DomainError(f"atom {int(missing[0])} belongs to no cell")
    return _entropy(np.bincount(labels, weights=mu.masses))


def _candidates(mu: AtomicMeasure, t: int, restarts: int, seed: int | None):
    """Entropies and cell counts of the maximal partitions tried at level t."""
    if restarts < 1:
        raise DomainError(f"restarts must be at least 1, got {restarts}")
    delta = 2.0 ** -t
    require_scale(mu, delta)
    bm = ball_masses(mu, delta)
    rng = np.random.default_rng(get_settings().seed if seed is None else seed)
    for k in range(restarts):
        packing = heavy_maximal_packing(mu, delta, rng=None if k == 0 else rng, masses=bm)
        part = maximal_partition(packing, mu)
        yield _entropy(part.cell_masses(mu)), len(part)


def _h_star(mu: AtomicMeasure, t: int, restarts: int, seed: int | None) -> tuple[float, int]:
    return min(_candidates(mu, t, restarts, seed), key=lambda c: c[0])


def h_star_t(mu: AtomicMeasure, t: int, restarts: int | None = None, seed: int | None = None) -> float:
    """Minimum entropy over `restarts` maximal 2^{-t}-partitions."""
    restarts = get_settings().restarts if restarts is None else restarts
    return _h_star(mu, t, restarts, seed)[0]


def ball_log_integral(mu: AtomicMeasure, t: int) -> float:
    """−Σ_a m_a log μ(B_{2^{-t}}(a))."""
    delta = 2.0 ** -t
    require_scale(mu, delta)
    return float(-np.sum(mu.masses * np.log(ball_masses(mu, delta))))


def entropy_at_scale(
    mu: AtomicMeasure,
    eps: float,
    restarts: int | None = None,
    seed: int | None = None,
) -> float:
    """Upper bound on h(μ, ε): least entropy among generated ε-partitions.

    Candidates: the maximal partitions of the deepest level t with 4·2^{-t} ≤ ε
    (same restarts and seed as h*_t), a maximal partition at δ = ε/4 and the
    (1/2, ε/2)-grid partition.
    """
    restarts = get_settings().restarts if restarts is None else restarts
    require_scale(mu, eps / 4)
    best = partition_entropy(mu, maximal_partition(heavy_maximal_packing(mu, eps / 4), mu))
    best = min(best, partition_entropy(mu, grid_partition(mu, 0.5, eps / 2)))
    t = math.ceil(math.log2(4.0 / eps) - 1e-12)
    try:
        best = min(best, _h_star(mu, t, restarts, seed)[0])
    except DomainError:
        logger.debug("dyadic family at t=%d is below the scale floor; skipped", t)
    return best


def entropy_trace(
    mu: AtomicMeasure,
    t_grid: Sequence[int],
    restarts: int | None = None,
    seed: int | None = None,
    doubling: DoublingConstantEstimate | None = None,
    forced: bool = False,
) -> EntropyTrace:
    """h*_t and the log-ball integral at each level, with the fitted dim_e."""
    restarts = get_settings().restarts if restarts is None else restarts
    ts = sorted(int(t) for t in t_grid)
    if not ts:
        raise DomainError("entropy trace needs at least one level")
    levels = []
    for t in ts:
        h, cells = _h_star(mu, t, restarts, seed)
        levels.append(EntropyLevel(t=t, h_star=h, ball_log_integral=ball_log_integral(mu, t), cells=cells))
        logger.debug("t=%d: h*=%.5f over %d cells", t, h, cells)
    if len(ts) >= 2:
        dim_e = fit_line([t * _LOG2 for t in ts], [lv.h_star for lv in levels]).slope
    else:
        dim_e = levels[0].h_star / (ts[0] * _LOG2) if ts[0] else 0.0
    return EntropyTrace(
        t_grid=ts,
        levels=levels,
        dim_e_hat=dim_e,
        restarts=restarts,
        doubling_c_hat=None if doubling is None else doubling.c_hat,
        forced=forced,
    )


def entropy_dimension(
    mu: AtomicMeasure,
    t_grid: Sequence[int],
    restarts: int | None = None,
    seed: int | None = None,
) -> float:
    """Least-squares slope of h*_t against t·log 2."""
    if len(set(t_grid)) < 3:
        raise DomainError(f"entropy dimension needs at least 3 levels, got {len(set(t_grid))}")
    return entropy_trace(mu, t_grid, restarts, seed).dim_e_hat


def allowance_check(trace: EntropyTrace, c_hat: float) -> tuple[bool, list[int]]:
    """h*_{t+1} ≤ h*_t + C^{log2 10} at consecutive traced levels; returns failing t."""
    allowance = c_hat ** math.log2(10.0)
    by_t = {lv.t: lv.h_star for lv in trace.levels}
    bad = [t for t in by_t if t + 1 in by_t and by_t[t + 1] > by_t[t] + allowance]
    return not bad, bad


# ── Superadditivity ───────────────────────────────────────────────────────────

def _pairs(levels: Sequence[int]) -> list[tuple[int, int]]:
    ls = sorted(set(int(t) for t in levels))
    return [(s, t) for i, s in enumerate(ls) for t in ls[i:]]


def superadditivity_constant(series: dict[int, float], levels: Sequence[int]) -> float:
    """Least L ≥ 0 with h_{s+t} ≥ h_s + h_t − L over pairs s ≤ t of `levels`."""
    return max(0.0, max(series[s] + series[t] - series[s + t] for s, t in _pairs(levels)))


def superadditivity_check(
    mu: AtomicMeasure,
    levels: Sequence[int],
    restarts: int | None = None,
    seed: int | None = None,
    shift: bool = True,
) -> SuperadditivityReport:
    """L̂ for superadditivity of h*_t, plus the same window one level deeper."""
    restarts = get_settings().restarts if restarts is None else restarts
    if not levels:
        raise DomainError("superadditivity check needs at least one level")
    pairs = _pairs(levels)
    needed = {t for pair in pairs for t in pair} | {s + t for s, t in pairs}
    for t in needed:
        require_scale(mu, 2.0 ** -t)
    cache = {t: h_star_t(mu, t, restarts, seed) for t in sorted(needed)}
    l_hat = superadditivity_constant(cache, levels)

    shifted = None
    if shift:
        deeper = [t + 1 for t in levels]
        deep_pairs = _pairs(deeper)
        extra = ({t for pair in deep_pairs for t in pair} | {s + t for s, t in deep_pairs}) - set(cache)
        try:
            for t in sorted(extra):
                cache[t] = h_star_t(mu, t, restarts, seed)
            shifted = superadditivity_constant(cache, deeper)
        except DomainError as exc:
            logger.debug("shifted superadditivity window skipped: %s", exc)
    return SuperadditivityReport(levels=sorted(set(levels)), pairs=pairs, l_hat=l_hat, shifted_l_hat=shifted)


# ── Doubling gate ─────────────────────────────────────────────────────────────

def upward_drift(per_scale: Sequence[float]) -> float:
    """Largest growth of the per-scale doubling ratio from coarse to fine scales."""
    drift, low = 1.0, math.inf
    for c in per_scale:
        if low < math.inf:
            drift = max(drift, c / low)
        low = min(low, c)
    return drift


def doubling_gate(
    mu: AtomicMeasure,
    scales: Sequence[float],
    force: bool = False,
    probes: int | None = None,
) -> DoublingConstantEstimate:
    """Check the doubling hypothesis before an entropy run.

    Refuses (NonDoublingError) when the per-scale constant grows by more than
    the configured drift factor from coarse to fine scales; `force` downgrades
    the refusal to a warning.
    """
    settings = get_settings()
    ordered = sorted(scales, reverse=True)
    estimate = doubling_constant(mu, ordered, probes=settings.probe_count if probes is None else probes)
    drift = upward_drift(estimate.per_scale)
    if drift > settings.doubling_drift_factor:
        message = (
            f"doubling ratio grows by a factor {drift:.3g} towards fine scales "
            f"(limit {settings.doubling_drift_factor:g}); the entropy results assume a "
            "self-conformal doubling measure"
        )
        if not force:
            raise NonDoublingError(message, witnesses=[estimate.worst_center])
        logger.warning("Forced past the doubling gate: %s", message)
    logger.info("Doubling gate: C≈%.3f, drift %.3f", estimate.c_hat, drift)
    return estimate
