"""
lqdim/domain/models.py
Pydantic models for the reports, tables and estimates the services produce.
"""
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field, model_validator


# ── Geometry / measure estimates ─────────────────────────────────────────────

class DoublingProbe(BaseModel):
    n0_hat: int = Field(ge=1)
    d0_hat: float = Field(ge=1.0)
    p_hat:  float = Field(gt=0.0)
    scales: list[float] = Field(default_factory=list)


class DoublingConstantEstimate(BaseModel):
    c_hat:        float = Field(ge=1.0)
    scales:       list[float]
    per_scale:    list[float]              # max ratio μ(B_2r)/μ(B_r) at each scale
    worst_center: list[float]
    error_bound:  float = 0.0              # shell mass at the worst probe


class DistortionConstants(BaseModel):
    d1: float = Field(ge=1.0)
    d2: float = Field(ge=1.0)
    d3: float = Field(ge=1.0)
    lambda_min: float = Field(gt=0.0, lt=1.0)
    exact: bool = False                    # True for similarity systems in Euclidean space


class DistortionBand(BaseModel):
    d1: float = Field(gt=0.0)
    d2: float = Field(gt=0.0)
    probes: int = 0

    @model_validator(mode="after")
    def _ordered(self) -> "DistortionBand":
        if self.d1 > self.d2:
            raise ValueError(f"distortion band needs d1 <= d2, got ({self.d1}, {self.d2})")
        return self


# ── Verification ─────────────────────────────────────────────────────────────

class CheckResult(BaseModel):
    name:    str
    passed:  bool
    detail:  str = ""
    witness: list[Any] = Field(default_factory=list)


class VerificationReport(BaseModel):
    subject: str
    checks:  list[CheckResult] = Field(default_factory=list)
    constants: dict[str, float] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, passed: bool, detail: str = "", witness: list | None = None) -> None:
        self.checks.append(CheckResult(name=name, passed=bool(passed), detail=detail, witness=witness or []))


# ── Spectra ──────────────────────────────────────────────────────────────────

class SpectrumEntry(BaseModel):
    q:           float
    t:           int
    s_heavy:     float
    s_grid:      float
    i_gd:        float | None = None      # undefined at q = 1
    error_bound: float = 0.0
    # geometric means over the radii 2^{-t}·2^{j/m}, j < m, fed to the slope fits
    s_heavy_band: float | None = None
    i_gd_band:    float | None = None


class TauEstimate(BaseModel):
    q:          float
    method:     Literal["endpoint", "least_squares"] = "least_squares"
    tau_hat:    float
    residual:   float
    tau_lower:  float
    tau_upper:  float
    dim_hat:    float | None = None       # τ̂/(q−1); None at q = 1
    gd_dim:     float | None = None
    renyi_dim:  float | None = None
    error_bound: float = 0.0

    @property
    def equivalence_gap(self) -> float | None:
        if self.dim_hat is None or self.gd_dim is None:
            return None
        return abs(self.dim_hat - self.gd_dim)


class SpectrumTable(BaseModel):
    q_grid:  list[float]
    t_grid:  list[int]
    lam:     float
    entries: list[SpectrumEntry] = Field(default_factory=list)
    fitted:  list[TauEstimate] = Field(default_factory=list)

    def entry(self, q: float, t: int) -> SpectrumEntry:
        for e in self.entries:
            if e.t == t and abs(e.q - q) < 1e-12:
                return e
        raise KeyError(f"no entry for q={q}, t={t}")

    def series(self, q: float, column: str = "s_heavy") -> list[tuple[int, float]]:
        return [(t, getattr(self.entry(q, t), column)) for t in self.t_grid]

    def estimate(self, q: float) -> TauEstimate:
        for f in self.fitted:
            if abs(f.q - q) < 1e-12:
                return f
        raise KeyError(f"no fitted estimate for q={q}")


class MultiplicativityReport(BaseModel):
    q:             float
    direction:     Literal["sub", "super"]
    pairs:         list[tuple[int, int]]
    l_hat:         float = Field(ge=1.0)
    l_sub:         float = Field(ge=1.0)
    l_super:       float = Field(ge=1.0)
    shifted_l_hat: float | None = None    # same window shifted one level deeper

    @property
    def stability(self) -> float | None:
        if self.shifted_l_hat is None:
            return None
        return self.shifted_l_hat / self.l_hat


class CutMassProfile(BaseModel):
    t:       int
    q:       float
    p_plus:  list[float]
    p_minus: list[float]
    c4_hat:  float | None = None          # Σ P_plus^q / packing sum


class SandwichReport(BaseModel):
    q:       float
    t:       int
    s_heavy: float
    s_best:  float
    c2_hat:  float = Field(ge=1.0)
    samples: int


class LegendreResult(BaseModel):
    alpha:    list[float]
    tau_star: list[float]


# ── Entropy ──────────────────────────────────────────────────────────────────

class EntropyLevel(BaseModel):
    t:                 int
    h_star:            float = Field(ge=0.0)
    ball_log_integral: float
    cells:             int

    @property
    def gap(self) -> float:
        return abs(self.h_star - self.ball_log_integral)


class EntropyTrace(BaseModel):
    t_grid:        list[int]
    levels:        list[EntropyLevel]
    dim_e_hat:     float
    restarts:      int
    doubling_c_hat: float | None = None
    forced:        bool = False

    @property
    def h_star(self) -> list[float]:
        return [lv.h_star for lv in self.levels]

    @property
    def ball_log_integral(self) -> list[float]:
        return [lv.ball_log_integral for lv in self.levels]

    @property
    def c4_hat(self) -> float:
        return max(lv.gap for lv in self.levels)


class SuperadditivityReport(BaseModel):
    levels:        list[int]
    pairs:         list[tuple[int, int]]
    l_hat:         float = Field(ge=0.0)
    shifted_l_hat: float | None = None


# ── Manifolds ────────────────────────────────────────────────────────────────

class TransferReport(BaseModel):
    c_plane:  float
    c_sphere: float
    m:        int
    bound:    float
    holds:    bool
    band:     DistortionBand


# ── Run results ──────────────────────────────────────────────────────────────

class SpectrumResult(BaseModel):
    spec_name:  str
    atoms:      int
    resolution: float
    table:      SpectrumTable
    constants:  dict[str, float] = Field(default_factory=dict)


class EntropyResult(BaseModel):
    spec_name:  str
    atoms:      int
    resolution: float
    trace:      EntropyTrace
    allowance_holds: bool
    constants:  dict[str, float] = Field(default_factory=dict)


class SphereLiftResult(BaseModel):
    spec_name:        str
    atoms:            int
    round_trip_error: float
    band:             DistortionBand
    transfer:         TransferReport
    planar_dims:      dict[str, float] = Field(default_factory=dict)
    lifted_dims:      dict[str, float] = Field(default_factory=dict)


class VerifySuite(BaseModel):
    reports: list[VerificationReport] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)
