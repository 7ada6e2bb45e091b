import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqdim.core.exceptions import DomainError
from lqdim.services.geometry_service import EuclideanSpace, IdentityChart
from lqdim.services.measure_service import (
    AtomicMeasure,
    ball_mass,
    ball_mass_bounds,
    doubling_constant,
    doubling_space_check,
    lq_sum,
    lq_sum_bounds,
    pushforward,
)


def test_atomic_measure_validates_inputs():
    space = EuclideanSpace(1)
    with pytest.raises(DomainError, match="non-positive"):
        AtomicMeasure([[0.0], [1.0]], [0.5, -0.5], space, 1e-3)
    with pytest.raises(DomainError, match="masses"):
        AtomicMeasure([[0.0], [1.0]], [1.0], space, 1e-3)
    with pytest.raises(DomainError, match="resolution"):
        AtomicMeasure([[0.0]], [1.0], space, 0.0)


def test_coincident_atoms_are_merged():
    mu = AtomicMeasure.from_atoms([[0.0], [0.0], [1.0]], [0.25, 0.25, 0.5], EuclideanSpace(1), 1e-3)
    assert len(mu) == 2
    assert mu.masses == pytest.approx([0.5, 0.5])
    assert mu.words is None


def test_ball_mass_uses_closed_balls(line_measure):
    mu = line_measure([0.0, 0.5, 1.0], [0.2, 0.3, 0.5])
    assert ball_mass(mu, [0.0], 0.5) == pytest.approx(0.5)
    assert ball_mass(mu, [0.0], 0.49) == pytest.approx(0.2)
    assert ball_mass(mu, [0.5], 0.5) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(min_value=0, max_value=511),
    st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=2, max_size=8),
)
def test_ball_mass_grows_with_the_radius(fair_atoms, centre, radii):
    x = fair_atoms.positions[centre]
    masses = [ball_mass(fair_atoms, x, r) for r in sorted(radii)]
    assert all(a <= b for a, b in zip(masses, masses[1:]))
    assert masses[-1] <= 1.0 + 1e-12


def test_ball_mass_bounds_report_the_shell(line_measure):
    mu = line_measure([0.0, 0.5], [0.5, 0.5], resolution=0.01)
    bound = ball_mass_bounds(mu, [0.0], 0.495)
    assert bound.value == pytest.approx(0.5)
    assert bound.error == pytest.approx(0.5)
    assert ball_mass_bounds(mu, [0.0], 0.2).error == 0.0


def test_lq_sum_of_two_separated_atoms(line_measure):
    mu = line_measure([0.0, 1.0], [0.5, 0.5])
    assert lq_sum(mu, 0.1, 2.0) == pytest.approx(0.5)
    assert lq_sum(mu, 0.1, 0.5) == pytest.approx(math.sqrt(2.0))
    assert lq_sum_bounds(mu, 0.1, 2.0).error == 0.0


def test_lq_sum_rejects_q_one(line_measure):
    mu = line_measure([0.0, 1.0], [0.5, 0.5])
    with pytest.raises(DomainError, match="entropy"):
        lq_sum(mu, 0.1, 1.0)


def test_scales_below_the_floor_are_rejected(line_measure):
    mu = line_measure([0.0, 1.0], [0.5, 0.5], resolution=0.01)
    with pytest.raises(DomainError, match="floor"):
        lq_sum(mu, 0.03, 2.0)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=40),
    st.floats(min_value=0.01, max_value=0.5),
)
def test_lq_sum_at_q_two_is_the_correlation_sum(xs, delta):
    """Property: Σ_a m_a μ(B_δ(a)) equals the double sum over close pairs."""
    pts = np.asarray(xs).reshape(-1, 1)
    mu = AtomicMeasure.from_atoms(pts, np.full(len(xs), 1.0 / len(xs)), EuclideanSpace(1), 1e-3)
    d = mu.space.pairwise(mu.positions, mu.positions)
    expected = float(mu.masses @ (d <= delta) @ mu.masses)
    assert lq_sum(mu, delta, 2.0) == pytest.approx(expected)


def test_doubling_constant_of_a_single_atom(line_measure):
    est = doubling_constant(line_measure([0.5], [1.0]), [0.1, 0.2])
    assert est.c_hat == 1.0
    assert est.per_scale == [1.0, 1.0]


def test_doubling_constant_finds_the_worst_centre(line_measure):
    mu = line_measure([0.0, 0.15], [0.1, 0.9])
    est = doubling_constant(mu, [0.1])
    # B_0.1(0) holds 0.1, B_0.2(0) holds everything
    assert est.c_hat == pytest.approx(10.0)
    assert est.worst_center == pytest.approx([0.0])


def test_doubling_constant_of_the_cantor_measure(fair_atoms):
    est = doubling_constant(fair_atoms, [2.0 ** -t for t in range(3, 9)], probes=64)
    assert 1.0 < est.c_hat < 8.0


def test_doubling_space_check_on_the_cantor_measure(fair_atoms):
    c_hat = doubling_constant(fair_atoms, [2.0 ** -4], probes=64).c_hat
    count, bound = doubling_space_check(fair_atoms, 2.0 ** -4, c_hat, probes=32)
    assert 1 <= count <= bound


def test_pushforward_through_the_identity(fair_atoms):
    pushed = pushforward(fair_atoms, IdentityChart(EuclideanSpace(1)))
    assert np.array_equal(pushed.positions, fair_atoms.positions)
    assert np.array_equal(pushed.masses, fair_atoms.masses)
    assert pushed.resolution == fair_atoms.resolution
