"""
Shared fixtures: the bundled systems and small atomic measures built from them.

Atom counts are kept in the hundreds so the whole suite stays fast.
"""
from __future__ import annotations

import numpy as np
import pytest

from lqdim.services.geometry_service import Ball, EuclideanSpace
from lqdim.services.ifs_service import IFSSpec, Similarity, attractor_atoms, cylinder_atoms
from lqdim.services.measure_service import AtomicMeasure
from lqdim.services.pipeline_service import load_spec
from lqdim.utils.files import resolve_spec_path


def _bundled(name: str) -> IFSSpec:
    return load_spec(resolve_spec_path(name))[1]


def _line_system(ratios, translations, probs, name="line") -> IFSSpec:
    """A similarity system on R with the unit interval as seed ball."""
    maps = tuple(Similarity(ratio=r, rotation=np.eye(1), translation=np.array([b])) for r, b in zip(ratios, translations))
    return IFSSpec(
        maps=maps,
        probs=np.asarray(probs, dtype=float),
        space=EuclideanSpace(1),
        seed_ball=Ball(center=np.array([0.5]), radius=0.5),
        name=name,
    )


def _line_measure(points, masses, resolution=1e-3) -> AtomicMeasure:
    return AtomicMeasure(np.asarray(points, dtype=float).reshape(-1, 1), masses, EuclideanSpace(1), resolution)


@pytest.fixture(scope="session")
def fair_spec() -> IFSSpec:
    return _bundled("fair_cantor")


@pytest.fixture(scope="session")
def biased_spec() -> IFSSpec:
    return _bundled("biased_cantor")


@pytest.fixture(scope="session")
def uniform_spec() -> IFSSpec:
    return _bundled("uniform_interval")


@pytest.fixture(scope="session")
def sphere_planar_spec() -> IFSSpec:
    return _bundled("sphere_cantor")


@pytest.fixture(scope="session")
def sparse_spec() -> IFSSpec:
    return _line_system([0.1, 0.1], [0.0, 0.9], [0.5, 0.5], name="sparse_cantor")


@pytest.fixture(scope="session")
def fair_atoms(fair_spec) -> AtomicMeasure:
    # 512 atoms; scales down to 2^-12 clear the resolution floor
    return attractor_atoms(fair_spec, 2.0 ** -14)


@pytest.fixture(scope="session")
def biased_atoms(biased_spec) -> AtomicMeasure:
    return attractor_atoms(biased_spec, 2.0 ** -14)


@pytest.fixture(scope="session")
def uniform_atoms(uniform_spec) -> AtomicMeasure:
    return attractor_atoms(uniform_spec, 2.0 ** -10)


@pytest.fixture
def line_system():
    return _line_system


@pytest.fixture
def line_measure():
    return _line_measure


@pytest.fixture(scope="session")
def cantor_depth12(fair_spec) -> AtomicMeasure:
    # 4096 atoms, the size the reference spectra are quoted at
    return cylinder_atoms(fair_spec, 12)
