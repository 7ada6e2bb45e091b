import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqdim.core.exceptions import DomainError
from lqdim.domain.models import SpectrumEntry, SpectrumTable
from lqdim.services.ifs_service import attractor_atoms
from lqdim.services.packing_service import heavy_maximal_packing
from lqdim.services.spectra_service import (
    build_spectrum_table,
    cut_mass_profile,
    cylinder_sum,
    dimension_q,
    gd_dimension,
    legendre,
    power_sum_check,
    moran_tau,
    multiplicativity_check,
    multiplicativity_constant,
    packing_sum,
    renyi_sum,
    sandwich_check,
    sum_ratio_band,
    tau_bounds,
    tau_fit,
)

CANTOR_DIM = math.log(2) / math.log(3)


def _power_law_table(tau: float, ts=range(2, 8), q: float = 2.0, scale: float = 1.0) -> SpectrumTable:
    entries = [
        SpectrumEntry(q=q, t=t, s_heavy=scale * 2.0 ** (-tau * t), s_grid=2.0 ** (-tau * t))
        for t in ts
    ]
    return SpectrumTable(q_grid=[q], t_grid=list(ts), lam=0.5, entries=entries)


# ── Closed-form oracles ───────────────────────────────────────────────────────

def test_moran_tau_for_the_fair_cantor_measure():
    assert moran_tau([0.5, 0.5], [1 / 3, 1 / 3], 2.0) == pytest.approx(0.630930, abs=1e-6)
    assert moran_tau([0.5, 0.5], [1 / 3, 1 / 3], 0.0) == pytest.approx(-CANTOR_DIM, abs=1e-9)
    assert moran_tau([0.5, 0.5], [1 / 3, 1 / 3], 1.0) == pytest.approx(0.0, abs=1e-9)


def test_moran_tau_for_the_biased_cantor_measure():
    assert moran_tau([0.25, 0.75], [1 / 3, 1 / 3], 2.0) == pytest.approx(0.4278, abs=1e-4)
    tau_half = moran_tau([0.25, 0.75], [1 / 3, 1 / 3], 0.5)
    assert tau_half == pytest.approx(-0.2839, abs=1e-4)
    assert dimension_q(tau_half, 0.5) == pytest.approx(0.568, abs=1e-3)


def test_moran_tau_rejects_bad_inputs():
    with pytest.raises(DomainError):
        moran_tau([0.5, 0.6], [1 / 3, 1 / 3], 2.0)
    with pytest.raises(DomainError):
        moran_tau([0.5, 0.5], [1 / 3, 1.0], 2.0)


@pytest.mark.parametrize("q", [0.5, 2.0, 3.0])
@pytest.mark.parametrize("depth", [1, 4, 8])
def test_cylinder_sums_at_the_moran_tau_equal_one(q, depth):
    probs, ratios = [0.2, 0.3, 0.5], [0.25, 0.3, 0.4]
    tau = moran_tau(probs, ratios, q)
    assert cylinder_sum(probs, ratios, q, tau, depth) == pytest.approx(1.0, rel=1e-9)


def test_cylinder_sum_grows_geometrically_off_the_moran_tau():
    probs, ratios = [0.5, 0.5], [1 / 3, 1 / 3]
    tau = moran_tau(probs, ratios, 2.0)
    s1 = cylinder_sum(probs, ratios, 2.0, tau + 0.1, 1)
    s4 = cylinder_sum(probs, ratios, 2.0, tau + 0.1, 4)
    assert math.log(s4) == pytest.approx(4 * math.log(s1))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=0, max_value=1, allow_subnormal=False), min_size=1, max_size=20),
    st.floats(min_value=1e-3, max_value=5.0),
)
def test_power_sum_inequality(values, q):
    """Property: (Σa)^q ≤ max(k^(q−1), 1)·Σa^q for every nonnegative vector."""
    assert power_sum_check(values, q)


def test_power_sum_inequality_rejects_negative_entries():
    with pytest.raises(DomainError):
        power_sum_check([0.5, -0.1], 2.0)


# ── Fits ──────────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("method", ["least_squares", "endpoint"])
def test_tau_fit_recovers_a_power_law(method):
    tau, residual = tau_fit(_power_law_table(0.7), 2.0, method=method, window=0)
    assert tau == pytest.approx(0.7)
    assert residual == pytest.approx(0.0, abs=1e-9)


def test_tau_bounds_of_a_scaled_power_law():
    table = _power_law_table(0.7, scale=2.0)
    lower, upper = tau_bounds(table, 2.0, window=0)
    tau, _ = tau_fit(table, 2.0, window=0)
    # per-scale slopes are 0.7 - 1/t for t = 2..7
    assert lower == pytest.approx(0.7 - 1 / 2)
    assert upper == pytest.approx(0.7 - 1 / 7)
    assert tau == pytest.approx(0.7)


def test_tau_fit_needs_three_scales():
    with pytest.raises(DomainError, match="3 scales"):
        tau_fit(_power_law_table(0.7, ts=[2, 3]), 2.0, window=0)


def test_dimension_at_q_one_is_refused():
    with pytest.raises(DomainError, match="entropy"):
        dimension_q(0.0, 1.0)


def test_fair_cantor_spectrum(fair_atoms):
    table = build_spectrum_table(fair_atoms, [0.5, 2.0], range(2, 11), fit_window=0)
    for q in (0.5, 2.0):
        est = table.estimate(q)
        assert est.dim_hat == pytest.approx(CANTOR_DIM, abs=0.05)
        assert est.tau_lower <= est.tau_upper
        assert est.gd_dim is not None and est.renyi_dim is not None


def test_biased_cantor_correlation_dimension(biased_atoms):
    table = build_spectrum_table(biased_atoms, [2.0], range(2, 11), fit_window=0)
    expected = moran_tau([0.25, 0.75], [1 / 3, 1 / 3], 2.0)
    assert table.estimate(2.0).dim_hat == pytest.approx(expected, abs=0.05)


@pytest.fixture(scope="module")
def cantor_table(cantor_depth12) -> SpectrumTable:
    return build_spectrum_table(cantor_depth12, [0.5, 2.0, 3.0], range(4, 11), fit_window=0)


@pytest.mark.parametrize("q", [0.5, 2.0, 3.0])
def test_cantor_dimensions_at_4096_atoms(cantor_table, q):
    est = cantor_table.estimate(q)
    assert est.dim_hat == pytest.approx(CANTOR_DIM, abs=0.05)
    assert est.gd_dim == pytest.approx(CANTOR_DIM, abs=0.05)
    assert est.dim_hat == pytest.approx(est.gd_dim, abs=0.05)


@pytest.mark.parametrize("q", [0.5, 2.0])
def test_packing_and_ball_integral_dimensions_agree_on_the_biased_measure(biased_atoms, q):
    est = build_spectrum_table(biased_atoms, [q], range(4, 11), fit_window=0).estimate(q)
    expected = dimension_q(moran_tau([0.25, 0.75], [1 / 3, 1 / 3], q), q)
    assert est.dim_hat == pytest.approx(expected, abs=0.05)
    assert est.dim_hat == pytest.approx(est.gd_dim, abs=0.05)


def test_three_deepest_scales_misread_the_low_q_dimension(cantor_table):
    tau_short, _ = tau_fit(cantor_table, 0.5, window=3)
    # measured near 0.74 on this table
    assert abs(dimension_q(tau_short, 0.5) - CANTOR_DIM) > 0.05
    assert cantor_table.estimate(0.5).dim_hat == pytest.approx(CANTOR_DIM, abs=0.05)


def test_octave_means_sit_beside_the_dyadic_sums(fair_atoms):
    table = build_spectrum_table(fair_atoms, [0.5, 1.0, 2.0], [4, 5, 6], offsets=4)
    for e in table.entries:
        assert e.s_heavy_band is not None and e.s_heavy_band > 0
        assert (e.i_gd_band is None) == (e.q == 1.0)


def test_single_offset_fits_the_dyadic_sums_alone(fair_atoms):
    table = build_spectrum_table(fair_atoms, [2.0], range(4, 9), fit_window=0, offsets=1)
    assert all(e.s_heavy_band is None and e.i_gd_band is None for e in table.entries)
    ts = np.array(table.t_grid, dtype=float)
    logs = np.log([table.entry(2.0, t).s_heavy for t in table.t_grid])
    slope = np.polyfit(-ts * math.log(2), logs, 1)[0]
    assert table.estimate(2.0).tau_hat == pytest.approx(slope)


def test_offsets_must_be_positive(fair_atoms):
    with pytest.raises(DomainError, match="offsets"):
        build_spectrum_table(fair_atoms, [2.0], [4, 5, 6], offsets=0)


def test_spectrum_table_shapes(fair_atoms):
    table = build_spectrum_table(fair_atoms, [1.0, 2.0], [3, 4])
    assert len(table.entries) == 4
    assert table.fitted == []
    # disjoint balls carry at most the whole mass
    assert all(table.entry(1.0, t).s_heavy <= 1.0 + 1e-12 for t in (3, 4))
    assert table.entry(1.0, 3).i_gd is None


def test_gd_dimension_of_the_cantor_measure(fair_atoms):
    dim = gd_dimension(fair_atoms, 2.0, [2.0 ** -t for t in range(2, 11)])
    assert dim == pytest.approx(CANTOR_DIM, abs=0.05)


def test_packing_and_renyi_sums_are_positive(fair_atoms):
    assert 0 < packing_sum(fair_atoms, 2.0 ** -4, 2.0) <= 1.0
    assert 0 < renyi_sum(fair_atoms, 0.5, 2.0 ** -4, 2.0) <= 1.0


# ── Legendre transform ────────────────────────────────────────────────────────

def test_legendre_of_a_linear_spectrum():
    qs = [0.5, 1.0, 2.0, 3.0]
    d = 0.63
    result = legendre(qs, [d * (q - 1) for q in qs], alpha=[d])
    assert result.tau_star == pytest.approx([d])


def test_legendre_default_range_pads_linear_spectra():
    qs = [0.5, 2.0]
    result = legendre(qs, [0.3 * (q - 1) for q in qs])
    assert result.alpha[0] == pytest.approx(-0.7)
    assert result.alpha[-1] == pytest.approx(1.3)


def test_legendre_of_a_moran_spectrum_peaks_at_the_support_dimension():
    qs = np.linspace(-4, 6, 201)
    taus = [moran_tau([0.25, 0.75], [1 / 3, 1 / 3], q) for q in qs]
    result = legendre(qs, taus)
    # τ(0) = −dim K, so τ* never exceeds dim K
    assert max(result.tau_star) == pytest.approx(CANTOR_DIM, abs=1e-3)
    assert all(v <= CANTOR_DIM + 1e-9 for v in result.tau_star)


def test_legendre_with_a_single_q():
    result = legendre([2.0], [0.5], alpha=[0.0, 1.0])
    assert result.tau_star == pytest.approx([-0.5, 1.5])


def test_legendre_needs_matching_grids():
    with pytest.raises(DomainError):
        legendre([1.0, 2.0], [0.0])


def test_log_heavy_sums_are_convex_in_q(fair_atoms):
    qs = [0.25, 0.5, 0.75, 1.5, 2.0, 3.0, 4.0]
    table = build_spectrum_table(fair_atoms, qs, [5, 7])
    for t in (5, 7):
        for column in ("s_heavy", "s_heavy_band"):
            logs = np.log([getattr(table.entry(q, t), column) for q in qs])
            slopes = np.diff(logs) / np.diff(qs)
            assert np.all(np.diff(slopes) >= -1e-9)


def test_legendre_of_a_fitted_spectrum_is_concave(fair_atoms):
    qs = [0.5, 2.0, 3.0]
    table = build_spectrum_table(fair_atoms, qs, range(4, 10), fit_window=0)
    result = legendre(qs, [table.estimate(q).tau_hat for q in qs])
    assert np.all(np.diff(result.tau_star, 2) <= 1e-9)


# ── Multiplicativity, cut masses, sandwich ────────────────────────────────────

def test_multiplicativity_constant_of_an_exact_power_law():
    series = {t: 2.0 ** (-0.5 * t) for t in range(1, 9)}
    l_sub, l_super = multiplicativity_constant(series, [1, 2, 3, 4])
    assert l_sub == pytest.approx(1.0)
    assert l_super == pytest.approx(1.0)


def test_multiplicativity_constant_sees_a_prefactor():
    series = {t: 0.5 * 2.0 ** (-t) for t in range(1, 9)}
    l_sub, l_super = multiplicativity_constant(series, [1, 2])
    # S_{s+t} = 2·S_s·S_t
    assert l_sub == pytest.approx(2.0)
    assert l_super == pytest.approx(1.0)


@pytest.mark.parametrize("q, direction", [(2.0, "sub"), (0.5, "super")])
def test_multiplicativity_check_on_the_cantor_measure(fair_atoms, q, direction):
    report = multiplicativity_check(fair_atoms, q, [2, 3, 4], shift=True)
    assert report.direction == direction
    assert 1.0 <= report.l_hat < 10.0
    assert report.shifted_l_hat is not None
    assert (2, 4) in report.pairs
    # one level deeper the constant barely moves
    assert report.shifted_l_hat == pytest.approx(report.l_hat, rel=0.25)


def test_multiplicativity_check_rejects_nonpositive_q(fair_atoms):
    with pytest.raises(DomainError):
        multiplicativity_check(fair_atoms, 0.0, [2, 3])


def test_cut_mass_profile_of_a_sparse_system(sparse_spec):
    mu = attractor_atoms(sparse_spec, 1e-4)
    packing = heavy_maximal_packing(mu, 0.25)
    profile = cut_mass_profile(mu, sparse_spec, 2, packing, q=2.0)
    assert len(packing) == 2
    assert profile.p_plus == pytest.approx([0.5, 0.5])
    assert profile.p_minus == pytest.approx([0.5, 0.5])
    assert profile.c4_hat == pytest.approx(1.0)


def test_cut_mass_profile_of_the_cantor_measure(fair_spec, fair_atoms):
    profile = cut_mass_profile(fair_atoms, fair_spec, 4, heavy_maximal_packing(fair_atoms, 2.0 ** -4))
    assert sum(profile.p_minus) == pytest.approx(1.0)
    assert all(0 < p <= 1 + 1e-12 for p in profile.p_plus)
    assert profile.c4_hat >= 1.0


def test_cut_mass_profile_checks_the_packing_scale(fair_spec, fair_atoms):
    with pytest.raises(DomainError, match="does not match"):
        cut_mass_profile(fair_atoms, fair_spec, 4, heavy_maximal_packing(fair_atoms, 2.0 ** -5))


def test_sandwich_check_bounds_the_heavy_sum(fair_atoms):
    report = sandwich_check(fair_atoms, 2.0 ** -5, 2.0, samples=20, seed=1)
    assert report.s_heavy <= report.s_best
    assert report.c2_hat >= 1.0
    assert report.t == 5


def test_sandwich_constant_is_stable_across_scales(fair_atoms):
    c2 = [sandwich_check(fair_atoms, 2.0 ** -t, 2.0, samples=50, seed=t).c2_hat for t in range(4, 9)]
    assert max(c2) <= 1.25 * min(c2)


def test_sandwich_constant_stays_bounded_below_q_one(fair_atoms):
    # t = 6 sits between two Cantor gaps and lets random packings gain up to ~1.7
    c2 = [sandwich_check(fair_atoms, 2.0 ** -t, 0.5, samples=50, seed=t).c2_hat for t in range(4, 9)]
    assert max(c2) <= 2.0


@pytest.mark.parametrize("q", [0.5, 2.0])
def test_grid_and_heavy_sums_stay_comparable(fair_atoms, q):
    table = build_spectrum_table(fair_atoms, [q], range(4, 9), offsets=1)
    lo, hi = sum_ratio_band(table, q)
    assert lo > 0
    assert hi / lo <= 10.0
