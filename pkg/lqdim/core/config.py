"""
lqdim/core/config.py
Central configuration. All tuneable constants live here.
"""
import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

load_dotenv()


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, default))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, default))


def _env_floats(name: str, default: tuple[float, ...]) -> tuple[float, ...]:
    raw = os.getenv(name, "")
    if not raw.strip():
        return default
    return tuple(float(v) for v in raw.split(","))


@dataclass
class Settings:
    # ── Word tree ─────────────────────────────────────────────────────
    word_budget:    int = field(default_factory=lambda: _env_int("LQDIM_WORD_BUDGET", 2_000_000))
    diameter_depth: int = 8          # depth of the cloud used to estimate diam(K)
    atom_target:    int = field(default_factory=lambda: _env_int("LQDIM_ATOM_TARGET", 4096))

    # ── Scales ────────────────────────────────────────────────────────
    scale_floor_factor: float = 4.0  # analysis scales must be >= factor * atom resolution
    t_min: int = field(default_factory=lambda: _env_int("LQDIM_T_MIN", 3))
    t_max: int = field(default_factory=lambda: _env_int("LQDIM_T_MAX", 10))

    # ── Spectra ───────────────────────────────────────────────────────
    q_grid: tuple[float, ...] = field(
        default_factory=lambda: _env_floats("LQDIM_Q_GRID", (0.25, 0.5, 0.75, 1.5, 2.0, 3.0, 4.0))
    )
    fit_window:      int   = 0       # deepest scales used by slope fits; 0 = all
    scale_offsets:   int   = 8       # log-spaced radii per octave averaged into fitted sums
    grid_lambda:     float = 0.5
    random_packings: int   = 100
    legendre_points: int   = 101
    fit_tolerance:   float = 0.05

    # ── Entropy ───────────────────────────────────────────────────────
    restarts:              int   = field(default_factory=lambda: _env_int("LQDIM_RESTARTS", 8))
    doubling_drift_factor: float = 4.0

    # ── Packing certification ─────────────────────────────────────────
    good_cover_q_cap: float = 64.0
    good_cover_d_cap: int   = 32
    probe_count:      int   = 256

    # ── Sphere / charts ───────────────────────────────────────────────
    sphere_tolerance: float = 1e-12
    equator_margin:   float = 0.1

    # ── Randomness ────────────────────────────────────────────────────
    seed: int = field(default_factory=lambda: _env_int("LQDIM_SEED", 20240917))

    # ── Logging ───────────────────────────────────────────────────────
    log_level:   str  = field(default_factory=lambda: os.getenv("LQDIM_LOG_LEVEL", "INFO"))
    log_dir:     str  = field(default_factory=lambda: os.getenv("LQDIM_LOG_DIR", "logs"))
    log_to_file: bool = field(default_factory=lambda: os.getenv("LQDIM_LOG_TO_FILE", "") == "1")

    @property
    def t_grid(self) -> list[int]:
        return list(range(self.t_min, self.t_max + 1))


def get_settings() -> Settings:
    return Settings()
