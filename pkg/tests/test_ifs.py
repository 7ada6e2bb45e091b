import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqdim.core.exceptions import DomainError, ResourceError
from lqdim.services.geometry_service import Ball, EuclideanSpace
from lqdim.services.ifs_service import (
    IFSSpec,
    Similarity,
    attractor_atoms,
    compose,
    cut_level,
    cut_set,
    cylinder_atoms,
    default_resolution,
    distortion_constants,
    in_cut_set,
    root_word,
    word,
)


# ── Maps and words ────────────────────────────────────────────────────────────

def test_similarity_rejects_expanding_ratio():
    with pytest.raises(DomainError, match="ratio"):
        Similarity(ratio=1.2, rotation=np.eye(1), translation=np.zeros(1))


def test_similarity_rejects_non_orthogonal_rotation():
    with pytest.raises(DomainError, match="orthogonal"):
        Similarity(ratio=0.5, rotation=np.array([[1.0, 1.0], [0.0, 1.0]]), translation=np.zeros(2))


def test_similarity_fixed_point():
    s = Similarity(ratio=0.5, rotation=np.eye(1), translation=np.array([0.5]))
    assert s.fixed_point() == pytest.approx([1.0])


def test_compose_multiplies_weights_and_ratios(fair_spec):
    w = word(fair_spec, (1, 2))
    assert w.symbols == (1, 2)
    assert w.weight == pytest.approx(0.25)
    assert w.ratio == pytest.approx(1 / 9)
    # S_1 ∘ S_2 sends 0 to (0/3 + 2/3)/3
    assert w.apply(np.array([[0.0]]))[0, 0] == pytest.approx(2 / 9)
    assert w.diameter == pytest.approx(fair_spec.word_scale / 9)


def test_compose_rejects_unknown_symbol(fair_spec):
    with pytest.raises(DomainError):
        compose(fair_spec, root_word(fair_spec), 3)


def test_root_word_is_the_whole_attractor(fair_spec):
    root = root_word(fair_spec)
    assert len(root) == 0
    assert root.weight == 1.0
    assert root.diameter == pytest.approx(fair_spec.diameter)


def test_cantor_diameter_estimate(fair_spec):
    assert fair_spec.diameter == pytest.approx(1.0, abs=1e-9)


# ── Cut sets ──────────────────────────────────────────────────────────────────

def test_cut_set_at_level_two_has_four_words(fair_spec):
    cut = cut_set(fair_spec, 2)
    assert [w.symbols for w in cut.words] == [(1, 1), (1, 2), (2, 1), (2, 2)]


def test_cut_set_at_level_zero_excludes_the_root(fair_spec):
    cut = cut_set(fair_spec, 0)
    assert [w.symbols for w in cut.words] == [(1,), (2,)]


def test_equal_ratio_cut_has_uniform_length(fair_spec):
    lengths = {len(w) for w in cut_set(fair_spec, 7).words}
    # 3^-5 ≤ 2^-7 < 3^-4
    assert lengths == {5}


@pytest.mark.parametrize("t", range(0, 9))
def test_cut_set_is_a_section(line_system, t):
    spec = line_system([0.5, 0.25], [0.0, 0.75], [0.4, 0.6])
    cut = cut_set(spec, t)
    symbols = {w.symbols for w in cut.words}
    assert cut.total_weight == pytest.approx(1.0, abs=1e-12)
    for w in cut.words:
        assert w.diameter <= 2.0 ** -t * (1 + 1e-12)
        assert not any(w.symbols[:k] in symbols for k in range(1, len(w)))
        parent = word(spec, w.parent)
        assert len(w) == 1 or parent.diameter > 2.0 ** -t


def test_cut_set_rejects_negative_level(fair_spec):
    with pytest.raises(DomainError):
        cut_set(fair_spec, -1)


@pytest.mark.parametrize("symbols, level", [((1,), 0), ((2,), 0), ((1, 1), 2), ((2, 1), 2), ((1, 1, 1), 4), ((1, 2, 1, 2, 1), 7)])
def test_cut_level_is_the_first_level_holding_the_word(fair_spec, symbols, level):
    u = word(fair_spec, symbols)
    assert cut_level(u) == level
    assert in_cut_set(u, level)
    assert not in_cut_set(u, level - 1)
    assert symbols in {w.symbols for w in cut_set(fair_spec, level).words}


@pytest.mark.parametrize("t", range(0, 7))
def test_cut_words_agree_with_the_membership_test(line_system, t):
    spec = line_system([0.5, 0.25], [0.0, 0.75], [0.4, 0.6])
    for w in cut_set(spec, t).words:
        assert in_cut_set(w, t)
        assert cut_level(w) <= t


def test_cut_level_of_the_empty_word_is_refused(fair_spec):
    with pytest.raises(DomainError, match="empty word"):
        cut_level(root_word(fair_spec))
    assert not in_cut_set(root_word(fair_spec), 0)


def test_cut_level_refuses_a_word_no_cut_holds(line_system):
    # diam 0.216 -> 0.1296 skips over 1/8
    spec = line_system([0.6, 0.3], [0.0, 0.7], [0.5, 0.5])
    with pytest.raises(DomainError, match="no cut set"):
        cut_level(word(spec, (1, 1, 1, 1)))


def test_word_budget_overflow_names_a_fitting_level(fair_spec):
    with pytest.raises(ResourceError) as info:
        cut_set(fair_spec, 20, budget=100)
    # 2^6 words fit at t=9; t=10 needs 2^7
    assert info.value.fitting_level == 9
    assert info.value.exit_code == 3


# ── Atoms ─────────────────────────────────────────────────────────────────────

def test_attractor_atoms_at_one_ninth(fair_spec):
    mu = attractor_atoms(fair_spec, 1 / 9)
    assert len(mu) == 4
    assert mu.masses == pytest.approx([0.25] * 4)
    assert mu.positions[:, 0] == pytest.approx([0.0, 2 / 9, 2 / 3, 8 / 9])


def test_attractor_atoms_at_one_third(fair_spec):
    mu = attractor_atoms(fair_spec, 1 / 3)
    assert len(mu) == 2
    assert mu.total_mass == pytest.approx(1.0)


def test_biased_atom_masses(biased_spec):
    mu = attractor_atoms(biased_spec, 1 / 3)
    assert mu.masses == pytest.approx([0.25, 0.75])


def test_cylinder_atoms_have_uniform_depth(biased_spec):
    mu = cylinder_atoms(biased_spec, 2)
    assert mu.words == ((1, 1), (1, 2), (2, 1), (2, 2))
    assert mu.masses == pytest.approx([1 / 16, 3 / 16, 3 / 16, 9 / 16])


def test_cylinder_atoms_respect_the_budget(fair_spec):
    with pytest.raises(ResourceError):
        cylinder_atoms(fair_spec, 12, budget=1000)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.05, max_value=0.95), st.integers(min_value=2, max_value=9))
def test_atom_masses_sum_to_one(p, t):
    """Property: every cut carries the full probability mass."""
    maps = (
        Similarity(ratio=0.4, rotation=np.eye(1), translation=np.array([0.0])),
        Similarity(ratio=0.3, rotation=np.eye(1), translation=np.array([0.7])),
    )
    spec = IFSSpec(maps=maps, probs=np.array([p, 1 - p]), space=EuclideanSpace(1),
                   seed_ball=Ball(center=np.array([0.5]), radius=0.5))
    assert attractor_atoms(spec, 2.0 ** -t).total_mass == pytest.approx(1.0, abs=1e-12)


# ── Spec validation ───────────────────────────────────────────────────────────

def test_probabilities_must_sum_to_one(line_system):
    with pytest.raises(DomainError, match="sum"):
        line_system([0.5, 0.5], [0.0, 0.5], [0.5, 0.6])


def test_single_map_is_rejected():
    s = Similarity(ratio=0.5, rotation=np.eye(1), translation=np.zeros(1))
    with pytest.raises(DomainError, match="two maps"):
        IFSSpec(maps=(s,), probs=np.array([1.0]), space=EuclideanSpace(1),
                seed_ball=Ball(center=np.array([0.5]), radius=0.5))


def test_seed_ball_must_be_invariant(line_system):
    with pytest.raises(DomainError, match="seed ball"):
        line_system([0.5, 0.5], [0.0, 0.8], [0.5, 0.5])


# ── Distortion and resolution ─────────────────────────────────────────────────

def test_similarity_distortion_constants_are_exact(fair_spec):
    c = distortion_constants(fair_spec, probe_count=16)
    assert c.exact
    assert (c.d1, c.d2) == (1.0, 1.0)
    assert c.d3 == pytest.approx(1.0, abs=1e-9)
    assert c.lambda_min == pytest.approx(1 / 3)


def test_distortion_constants_need_two_samples(fair_spec):
    with pytest.raises(DomainError):
        distortion_constants(fair_spec, probe_count=1)


def test_default_resolution_for_the_cantor_set(fair_spec):
    # 2^12 atoms fit at 2^-19, 2^13 would be needed at 2^-20
    assert default_resolution(fair_spec, t_max=10) == 2.0 ** -19


def test_default_resolution_for_the_interval(uniform_spec):
    assert default_resolution(uniform_spec, t_max=10) == 2.0 ** -12


def test_default_resolution_clears_the_scale_floor(fair_spec):
    res = default_resolution(fair_spec, t_max=14, target=8)
    assert 4 * res <= 2.0 ** -14
    assert math.isclose(res, 2.0 ** -16)
