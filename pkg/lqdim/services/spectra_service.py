"""
lqdim/services/spectra_service.py

L^q spectra of atomic measures.

Per dyadic scale δ = 2^{-t} the table holds
  - S_heavy  Σ μ(B_δ(x_j))^q over a heavy maximal packing (the S* proxy for the supremum)
  - S_grid   Σ μ(P_i)^q over a (λ, δ)-grid partition (Renyi sums)
  - I_gd     Σ_a m_a μ(B_δ(a))^{q−1} (discretized generalized-dimension integral)
and τ(q) is read off as the slope of log S against −t·log 2. Greedy packings
at dyadic radii alias against the cylinder scales of the attractor, so the
fits run on geometric means of S_heavy and I_gd over `scale_offsets`
log-spaced radii in the octave [δ, 2δ). Also here: the
Legendre transform, sub/super-multiplicativity diagnostics, cut-mass profiles,
and the closed-form Moran oracle for self-similar systems.
"""
from __future__ import annotations

import logging
import math
from typing import Literal, Sequence

import numpy as np

from lqdim.core.config import get_settings
from lqdim.core.exceptions import DomainError
from lqdim.domain.models import (
    CutMassProfile,
    LegendreResult,
    MultiplicativityReport,
    SandwichReport,
    SpectrumEntry,
    SpectrumTable,
    TauEstimate,
)
from lqdim.services.ifs_service import IFSSpec, cut_set
from lqdim.services.measure_service import (
    AtomicMeasure,
    ball_masses,
    ball_masses_shell,
    lq_sum,
    require_scale,
)
from lqdim.services.packing_service import (
    Packing,
    grid_partition,
    heavy_maximal_packing,
    maximal_partition,
    random_maximal_packing,
)
from lqdim.utils.fitting import fit_line, tail_window

logger = logging.getLogger(__name__)

_LOG2 = math.log(2.0)

FitMethod = Literal["endpoint", "least_squares"]


def _is_one(q: float) -> bool:
    return abs(q - 1.0) < 1e-12


def _power_sum(values: np.ndarray, q: float) -> float:
    return float(np.sum(values ** q))


# ── Sums ──────────────────────────────────────────────────────────────────────

def packing_sum(mu: AtomicMeasure, delta: float, q: float, packing: Packing | None = None) -> float:
    """S*_δ(q) = Σ μ(B_δ(x_j))^q over the heavy maximal δ-packing."""
    require_scale(mu, delta)
    bm = ball_masses(mu, delta)
    packing = packing or heavy_maximal_packing(mu, delta, masses=bm)
    if packing.ids.size and np.all(packing.ids >= 0):
        centre_mass = bm[packing.ids]
    else:
        centre_mass = ball_masses(mu, delta, packing.positions)
    return _power_sum(centre_mass, q)


def renyi_sum(mu: AtomicMeasure, lam: float, delta: float, q: float) -> float:
    """Σ μ(P_i)^q over the (λ, δ)-grid partition."""
    grid = grid_partition(mu, lam, delta)
    return _power_sum(grid.cell_masses(mu), q)


def build_spectrum_table(
    mu: AtomicMeasure,
    q_grid: Sequence[float],
    t_grid: Sequence[int],
    lam: float | None = None,
    fit_window: int | None = None,
    method: FitMethod = "least_squares",
    offsets: int | None = None,
) -> SpectrumTable:
    """Evaluate every (q, t) entry and fit τ̂ per q.

    Ball masses, the heavy packing and the grid partition are built once per
    scale and shared across q. `error_bound` is the larger deviation of S_heavy
    when every ball is shrunk or grown by one atom resolution. With `offsets`
    m > 1 each entry also carries the octave means used by the least-squares
    fits; m = 1 fits the dyadic sums alone.
    """
    settings = get_settings()
    lam = settings.grid_lambda if lam is None else lam
    offsets = settings.scale_offsets if offsets is None else int(offsets)
    if offsets < 1:
        raise DomainError(f"offsets must be at least 1, got {offsets}")
    q_grid = [float(q) for q in q_grid]
    t_grid = sorted(int(t) for t in t_grid)
    for t in t_grid:
        require_scale(mu, 2.0 ** -t)

    entries: list[SpectrumEntry] = []
    for t in t_grid:
        delta = 2.0 ** -t
        inner, mid, outer = ball_masses_shell(mu, delta)
        packing = heavy_maximal_packing(mu, delta, masses=mid)
        cells = grid_partition(mu, lam, delta).cell_masses(mu)
        ids = packing.ids
        logger.debug("t=%d: %d packing centres, %d grid cells", t, len(ids), cells.size)
        band_s, band_i = _octave_means(mu, delta, q_grid, offsets, mid, ids)
        for k, q in enumerate(q_grid):
            s_heavy = _power_sum(mid[ids], q)
            error = max(abs(_power_sum(outer[ids], q) - s_heavy), abs(_power_sum(inner[ids], q) - s_heavy))
            entries.append(SpectrumEntry(
                q=q,
                t=t,
                s_heavy=s_heavy,
                s_grid=_power_sum(cells, q),
                i_gd=None if _is_one(q) else float(np.sum(mu.masses * mid ** (q - 1.0))),
                error_bound=float(error),
                s_heavy_band=band_s[k] if offsets > 1 else None,
                i_gd_band=None if _is_one(q) or offsets == 1 else band_i[k],
            ))

    table = SpectrumTable(q_grid=q_grid, t_grid=t_grid, lam=lam, entries=entries)
    if len(t_grid) >= 3:
        window = settings.fit_window if fit_window is None else fit_window
        table.fitted = [_estimate(table, q, method, window) for q in q_grid]
    return table


def _octave_means(
    mu: AtomicMeasure,
    delta: float,
    q_grid: list[float],
    offsets: int,
    masses: np.ndarray,
    ids: np.ndarray,
) -> tuple[list[float], list[float]]:
    """Geometric means of S_heavy and I_gd over the radii δ·2^{j/m}, j < m."""
    log_s = np.zeros(len(q_grid))
    log_i = np.zeros(len(q_grid))
    for j in range(offsets):
        if j:
            r = delta * 2.0 ** (j / offsets)
            masses = ball_masses(mu, r)
            ids = heavy_maximal_packing(mu, r, masses=masses).ids
        for k, q in enumerate(q_grid):
            log_s[k] += math.log(_power_sum(masses[ids], q))
            if not _is_one(q):
                log_i[k] += math.log(float(np.sum(mu.masses * masses ** (q - 1.0))))
    return np.exp(log_s / offsets).tolist(), np.exp(log_i / offsets).tolist()


def _estimate(table: SpectrumTable, q: float, method: FitMethod, window: int) -> TauEstimate:
    tau_hat, residual = tau_fit(table, q, method, window)
    lower, upper = tau_bounds(table, q, window)
    ts = tail_window(table.t_grid, window)
    error = 0.0
    for t in ts:
        e = table.entry(q, t)
        if e.s_heavy > 0 and e.error_bound > 0:
            error = max(error, math.log1p(e.error_bound / e.s_heavy) / (t * _LOG2) if t else 0.0)
    dim_hat = gd = renyi = None
    if not _is_one(q):
        dim_hat = dimension_q(tau_hat, q)
        column = _fit_column(table, q, "i_gd")
        gd = _gd_slope([(t, getattr(table.entry(q, t), column)) for t in ts], q)
        renyi = renyi_dimension(table, q, window)
        error /= abs(q - 1.0)
    return TauEstimate(
        q=q, method=method, tau_hat=tau_hat, residual=residual,
        tau_lower=lower, tau_upper=upper,
        dim_hat=dim_hat, gd_dim=gd, renyi_dim=renyi, error_bound=error,
    )


# ── Fits ──────────────────────────────────────────────────────────────────────

def _fit_column(table: SpectrumTable, q: float, column: str) -> str:
    band = f"{column}_band"
    if all(getattr(table.entry(q, t), band) is not None for t in table.t_grid):
        return band
    return column


def _slope_series(table: SpectrumTable, q: float, column: str, window: int) -> tuple[np.ndarray, np.ndarray]:
    series = tail_window(table.series(q, column), window)
    ts = np.array([t for t, _ in series], dtype=float)
    values = np.array([v for _, v in series], dtype=float)
    if np.any(values <= 0):
        raise DomainError(f"non-positive {column} entries for q={q}; cannot take logarithms")
    return -ts * _LOG2, np.log(values)


def tau_fit(
    table: SpectrumTable,
    q: float,
    method: FitMethod = "least_squares",
    window: int | None = None,
) -> tuple[float, float]:
    """τ̂(q) and the largest deviation of the per-scale slopes from it.

    `least_squares` fits log S against −t·log 2, on the octave means when the
    table carries them; `endpoint` takes the per-scale slope of the dyadic sum
    at the deepest level.
    """
    window = get_settings().fit_window if window is None else window
    if len(tail_window(table.t_grid, window)) < 3:
        raise DomainError(f"τ fit needs at least 3 scales, got {len(tail_window(table.t_grid, window))}")
    if method == "endpoint":
        x, y = _slope_series(table, q, "s_heavy", window)
        per_scale = y / x
        tau = float(per_scale[-1])
        return tau, float(np.max(np.abs(per_scale - tau)))
    if method != "least_squares":
        raise DomainError(f"unknown fit method '{method}'")
    fit = fit_line(*_slope_series(table, q, _fit_column(table, q, "s_heavy"), window))
    return fit.slope, fit.residual


def tau_bounds(table: SpectrumTable, q: float, window: int | None = None) -> tuple[float, float]:
    """Smallest and largest per-scale slope log S/(−t log 2) over the window."""
    window = get_settings().fit_window if window is None else window
    x, y = _slope_series(table, q, "s_heavy", window)
    nonzero = x != 0
    per_scale = y[nonzero] / x[nonzero]
    if per_scale.size == 0:
        raise DomainError("no nonzero level in the fit window")
    return float(per_scale.min()), float(per_scale.max())


def dimension_q(tau_hat: float, q: float) -> float:
    """L^q dimension τ̂/(q − 1)."""
    if _is_one(q):
        raise DomainError("dim_q is undefined at q = 1; use the entropy module")
    return tau_hat / (q - 1.0)


def _gd_slope(series: list[tuple[float, float]], q: float) -> float:
    log_delta = np.array([-t * _LOG2 for t, _ in series])
    values = np.array([v for _, v in series], dtype=float)
    if len(values) < 2:
        raise DomainError("generalized dimension needs at least 2 scales")
    return fit_line((q - 1.0) * log_delta, np.log(values)).slope


def gd_dimension(mu: AtomicMeasure, q: float, scales: Sequence[float]) -> float:
    """Slope of log ∫ μ(B_δ)^{q−1} dμ against (q − 1)·log δ."""
    if _is_one(q):
        raise DomainError("the generalized dimension is undefined at q = 1; use the entropy module")
    if q <= 0:
        raise DomainError(f"the generalized dimension needs q > 0, got {q}")
    if len(scales) < 2:
        raise DomainError("generalized dimension needs at least 2 scales")
    log_delta = np.log(np.asarray(scales, dtype=float))
    values = np.array([lq_sum(mu, d, q) for d in scales])
    return fit_line((q - 1.0) * log_delta, np.log(values)).slope


def renyi_dimension(table: SpectrumTable, q: float, window: int | None = None) -> float:
    """Grid-partition (Renyi) dimension: slope of log S_grid over (q − 1)."""
    if _is_one(q):
        raise DomainError("the Renyi dimension at q = 1 is the entropy dimension; use the entropy module")
    window = get_settings().fit_window if window is None else window
    x, y = _slope_series(table, q, "s_grid", window)
    return fit_line(x, y).slope / (q - 1.0)


def sum_ratio_band(table: SpectrumTable, q: float) -> tuple[float, float]:
    """Range of S_grid/S_heavy over the table's scales."""
    ratios = [e.s_grid / e.s_heavy for e in (table.entry(q, t) for t in table.t_grid)]
    return min(ratios), max(ratios)


# ── Legendre transform ────────────────────────────────────────────────────────

def legendre(
    q_grid: Sequence[float],
    tau: Sequence[float],
    alpha: Sequence[float] | None = None,
) -> LegendreResult:
    """τ*(α) = min over the grid of α·q − τ(q).

    The default α range spans the discrete slopes of τ, padded by one unit
    when τ is linear.
    """
    qs = np.asarray(q_grid, dtype=float)
    taus = np.asarray(tau, dtype=float)
    if qs.size == 0 or qs.size != taus.size:
        raise DomainError(f"legendre needs matching non-empty grids, got {qs.size} and {taus.size}")
    if alpha is None:
        order = np.argsort(qs)
        if qs.size >= 2:
            slopes = np.diff(taus[order]) / np.diff(qs[order])
            lo, hi = float(slopes.min()), float(slopes.max())
        else:
            lo = hi = 0.0
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        alpha = np.linspace(lo, hi, get_settings().legendre_points)
    alphas = np.asarray(alpha, dtype=float)
    values = np.min(alphas[:, None] * qs[None, :] - taus[None, :], axis=1)
    return LegendreResult(alpha=alphas.tolist(), tau_star=values.tolist())


# ── Multiplicativity ──────────────────────────────────────────────────────────

def _pairs(levels: Sequence[int]) -> list[tuple[int, int]]:
    ls = sorted(set(int(t) for t in levels))
    return [(s, t) for i, s in enumerate(ls) for t in ls[i:]]


def multiplicativity_constant(series: dict[int, float], levels: Sequence[int]) -> tuple[float, float]:
    """(L_sub, L_super) for a_t = log S_t over all pairs s ≤ t of `levels`.

    L_sub is the least L ≥ 1 with S_{s+t} ≤ L·S_s·S_t, L_super the least with
    S_{s+t} ≥ S_s·S_t/L.
    """
    up = down = 0.0
    for s, t in _pairs(levels):
        gap = math.log(series[s + t]) - math.log(series[s]) - math.log(series[t])
        up, down = max(up, gap), max(down, -gap)
    return math.exp(up), math.exp(down)


def _heavy_sums(mu: AtomicMeasure, levels: set[int], q: float) -> dict[int, float]:
    for t in levels:
        require_scale(mu, 2.0 ** -t)
    return {t: packing_sum(mu, 2.0 ** -t, q) for t in sorted(levels)}


def multiplicativity_check(
    mu: AtomicMeasure,
    q: float,
    levels: Sequence[int],
    shift: bool = True,
) -> MultiplicativityReport:
    """L̂ for sub- (q ≥ 1) or super-multiplicativity (0 < q < 1) of S*_{2^{-t}}(q).

    Both directions are reported; `l_hat` is the one the theory predicts. With
    `shift` the window is also evaluated one level deeper, when the scale floor
    allows it.
    """
    if q <= 0:
        raise DomainError(f"multiplicativity is checked for q > 0, got {q}")
    if len(levels) == 0:
        raise DomainError("multiplicativity check needs at least one level")
    pairs = _pairs(levels)
    needed = {t for pair in pairs for t in pair} | {s + t for s, t in pairs}
    sums = _heavy_sums(mu, needed, q)
    l_sub, l_super = multiplicativity_constant(sums, levels)
    direction = "sub" if q >= 1 else "super"
    l_hat = l_sub if direction == "sub" else l_super

    shifted = None
    if shift:
        deeper = [t + 1 for t in levels]
        deep_pairs = _pairs(deeper)
        try:
            extra = {t for pair in deep_pairs for t in pair} | {s + t for s, t in deep_pairs}
            more = _heavy_sums(mu, extra - set(sums), q)
            sub2, super2 = multiplicativity_constant({**sums, **more}, deeper)
            shifted = sub2 if direction == "sub" else super2
        except DomainError as exc:
            logger.debug("shifted multiplicativity window skipped: %s", exc)

    logger.debug("multiplicativity q=%g: L_sub=%.4f L_super=%.4f", q, l_sub, l_super)
    return MultiplicativityReport(
        q=q, direction=direction, pairs=pairs,
        l_hat=l_hat, l_sub=l_sub, l_super=l_super, shifted_l_hat=shifted,
    )


# ── Cut-mass profiles and sandwich ────────────────────────────────────────────

def cut_mass_profile(
    mu: AtomicMeasure,
    spec: IFSSpec,
    t: int,
    packing: Packing,
    q: float = 2.0,
) -> CutMassProfile:
    """P₊ and P₋ over the doubled balls of a 2^{-t}-packing.

    P₊(B) adds p_u for every u ∈ W_t whose representative S_u(x₀) lies within
    2δ + diam(K_u) of the centre, which never misses a cylinder meeting 2B.
    P₋ hands each word to the ball maximizing w(u, B) = Σ μ(S_u⁻¹(ℰ_j))^q over
    the cells ℰ_j meeting 2B (lowest ball index on ties).
    """
    delta = 2.0 ** -t
    if abs(packing.radius - delta) > delta * 1e-12:
        raise DomainError(f"packing radius {packing.radius:.4g} does not match level t={t}")
    words = cut_set(spec, t).words
    anchor = spec.anchor().reshape(1, -1)
    reps = np.vstack([w.apply(anchor) for w in words])
    reach = np.array([2 * delta + w.diameter for w in words])
    dist = mu.space.pairwise(packing.positions, reps)                # balls × words
    weights = np.array([w.weight for w in words])
    p_plus = ((dist <= reach[None, :] * (1 + 1e-12)) * weights[None, :]).sum(axis=1)

    partition = maximal_partition(packing, mu)
    h = len(packing)
    meets = np.zeros((h, h), dtype=bool)                             # ball i meets cell j
    for i, x in enumerate(packing.positions):
        meets[i, np.unique(partition.labels[mu.ids_within(x, 2 * delta)])] = True
    p_minus = np.zeros(h)
    for w, p in zip(words, weights):
        pulled = np.bincount(partition.locate(w.apply(mu.positions)), weights=mu.masses, minlength=h)
        score = meets.astype(float) @ (pulled ** q)
        p_minus[int(np.argmax(score))] += p

    s_heavy = packing_sum(mu, delta, q, packing)
    c4 = float(np.sum(p_plus ** q) / s_heavy) if s_heavy > 0 else None
    return CutMassProfile(t=t, q=q, p_plus=p_plus.tolist(), p_minus=p_minus.tolist(), c4_hat=c4)


def sandwich_check(
    mu: AtomicMeasure,
    delta: float,
    q: float,
    samples: int | None = None,
    seed: int | None = None,
) -> SandwichReport:
    """Heavy packing sum against the best of `samples` random maximal packings."""
    settings = get_settings()
    samples = settings.random_packings if samples is None else samples
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    bm = ball_masses(mu, delta)
    require_scale(mu, delta)
    heavy = heavy_maximal_packing(mu, delta, masses=bm)
    s_heavy = _power_sum(bm[heavy.ids], q)
    s_best = s_heavy
    for _ in range(samples):
        s_best = max(s_best, _power_sum(bm[random_maximal_packing(mu, delta, rng).ids], q))
    return SandwichReport(
        q=q, t=round(-math.log2(delta)), s_heavy=s_heavy, s_best=s_best,
        c2_hat=max(1.0, s_best / s_heavy), samples=samples,
    )


# ── Closed-form oracles ───────────────────────────────────────────────────────

def _check_moran_inputs(probs, ratios) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs, dtype=float)
    r = np.asarray(ratios, dtype=float)
    if p.size == 0 or p.size != r.size:
        raise DomainError(f"need matching probability and ratio vectors, got {p.size} and {r.size}")
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"not a probability vector: {p.tolist()}")
    if np.any(r <= 0) or np.any(r >= 1):
        raise DomainError(f"ratios must lie in (0, 1), got {r.tolist()}")
    return p, r


def moran_tau(probs, ratios, q: float) -> float:
    """The τ solving Σ p_i^q r_i^{-τ} = 1, by bisection to 1e-12."""
    p, r = _check_moran_inputs(probs, ratios)
    log_p, log_r = np.log(p), np.log(r)

    def excess(tau: float) -> float:
        return float(np.logaddexp.reduce(q * log_p - tau * log_r))

    lo, hi = -1.0, 1.0
    while excess(lo) > 0:
        lo *= 2
    while excess(hi) < 0:
        hi *= 2
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cylinder_sum(probs, ratios, q: float, tau: float, depth: int) -> float:
    """Brute-force Σ_{|u|=depth} p_u^q r_u^{-τ} over all words of one length."""
    p, r = _check_moran_inputs(probs, ratios)
    if depth < 0:
        raise DomainError(f"depth must be nonnegative, got {depth}")
    term = p ** q * r ** (-tau)
    acc = np.ones(1)
    for _ in range(depth):
        acc = np.outer(acc, term).ravel()
    return float(acc.sum())


def power_sum_check(values, q: float) -> bool:
    """(Σ a_i)^q ≤ max{k^{q−1}, 1} · Σ a_i^q for nonnegative a."""
    a = np.asarray(values, dtype=float).reshape(-1)
    if q <= 0:
        raise DomainError(f"the power-sum inequality needs q > 0, got {q}")
    if np.any(a < 0):
        raise DomainError(f"entry {int(np.argmin(a))} is negative")
    if a.size == 0:
        return True
    lhs = a.sum() ** q
    rhs = max(a.size ** (q - 1.0), 1.0) * np.sum(a ** q)
    return bool(lhs <= rhs * (1 + 1e-12) + 1e-300)
