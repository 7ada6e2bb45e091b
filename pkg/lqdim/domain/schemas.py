"""
lqdim/domain/schemas.py
Pydantic schemas for input validation (IFS spec files, CLI run configuration).
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator


class SpaceSchema(BaseModel):
    kind: Literal["euclidean"] = "euclidean"
    dim:  int = Field(ge=1)


class MapSchema(BaseModel):
    """One similarity x ↦ ratio · rotation @ x + translation."""

    type:        Literal["similarity"] = "similarity"
    ratio:       float = Field(gt=0.0, lt=1.0)
    rotation:    list[list[float]] | None = None   # identity when omitted
    translation: list[float]


class SeedBallSchema(BaseModel):
    center: list[float]
    radius: float = Field(gt=0.0)


class ChartSchema(BaseModel):
    type: Literal["stereographic"] = "stereographic"


class IFSSpecFile(BaseModel):
    """Versioned IFS spec file (`format: 1`).

    Maps act on the planar space; a `chart` entry lifts the system onto the
    sphere by conjugation.
    """

    format:    Literal[1]
    name:      str = "ifs"
    space:     SpaceSchema
    maps:      list[MapSchema] = Field(min_length=2)
    probs:     list[float]
    seed_ball: SeedBallSchema
    chart:     ChartSchema | None = None
    gamma:     float = Field(default=1.0, gt=0.0, le=1.0)

    @field_validator("probs")
    @classmethod
    def probs_must_be_a_probability_vector(cls, v: list[float]) -> list[float]:
        if any(p <= 0 for p in v):
            raise ValueError("all probabilities must be positive")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {sum(v):.12g}")
        return v

    @model_validator(mode="after")
    def _shapes_agree(self) -> "IFSSpecFile":
        dim = self.space.dim
        if len(self.probs) != len(self.maps):
            raise ValueError(f"{len(self.probs)} probabilities for {len(self.maps)} maps")
        for i, m in enumerate(self.maps, start=1):
            if len(m.translation) != dim:
                raise ValueError(f"map {i}: translation has {len(m.translation)} entries, space dim is {dim}")
            if m.rotation is not None and (len(m.rotation) != dim or any(len(row) != dim for row in m.rotation)):
                raise ValueError(f"map {i}: rotation must be {dim}x{dim}")
        if len(self.seed_ball.center) != dim:
            raise ValueError(f"seed_ball center has {len(self.seed_ball.center)} entries, space dim is {dim}")
        return self


Analysis = Literal["spectrum", "entropy", "pack", "verify", "sphere-lift"]


class RunConfig(BaseModel):
    """Validated CLI configuration; flags overlay Settings defaults."""

    spec_path:      Path | None = None
    analysis:       Analysis
    q_list:         list[float]
    t_min:          int = Field(ge=0)
    t_max:          int = Field(ge=0)
    lam:            float = 0.5
    restarts:       int = Field(default=8, ge=1)
    delta_atom:     float | None = Field(default=None, gt=0.0)
    word_budget:    int = Field(default=2_000_000, ge=1)
    random_packings: int = Field(default=100, ge=0)
    output_dir:     Path = Path("out")
    seed:           int = 20240917
    force:          bool = False
    fit_window:     int = Field(default=0, ge=0)
    packing_path:   Path | None = None      # packing fixture to verify (verify only)

    @field_validator("lam")
    @classmethod
    def lam_must_be_in_range(cls, v: float) -> float:
        if not 0 < v <= 0.5:
            raise ValueError(f"lambda must lie in (0, 1/2], got {v}")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.t_max < self.t_min:
            raise ValueError(f"t range is empty: t_min={self.t_min} > t_max={self.t_max}")
        if self.analysis == "spectrum" and any(abs(q - 1.0) < 1e-12 for q in self.q_list):
            raise ValueError("q = 1 has no L^q dimension; use the `entropy` command")
        if self.analysis in ("spectrum", "sphere-lift") and any(q <= 0 for q in self.q_list):
            raise ValueError("spectra are defined for q > 0")
        if self.delta_atom is not None:
            floor = 4 * self.delta_atom
            if 2.0 ** -self.t_max < floor * (1 - 1e-12):
                raise ValueError(
                    f"t_max={self.t_max} is below the resolution floor 4·δ_atom={floor:.4g}"
                )
        return self

    @property
    def t_grid(self) -> list[int]:
        return list(range(self.t_min, self.t_max + 1))
