"""
lqdim/utils/fitting.py
Least-squares helpers shared by the spectra and entropy estimators.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LineFit:
    slope:     float
    intercept: float
    residual:  float   # max deviation of the per-point slopes y/x from the fitted slope


def fit_line(x, y) -> LineFit:
    """Fit y ≈ slope·x + intercept by ordinary least squares.

    The residual is the largest |y_i/x_i − slope| over points with x_i ≠ 0, which
    is how the per-scale estimates log S/(−t log 2) are compared with the fit.
    """
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.size < 2:
        raise ValueError("at least two points are needed for a line fit")
    slope, intercept = np.polyfit(xs, ys, 1)
    nonzero = xs != 0
    per_point = ys[nonzero] / xs[nonzero]
    residual = float(np.max(np.abs(per_point - slope))) if per_point.size else 0.0
    return LineFit(slope=float(slope), intercept=float(intercept), residual=residual)


def tail_window(values: list, window: int) -> list:
    """Return the last `window` entries (all of them when window is 0)."""
    if window <= 0 or window >= len(values):
        return list(values)
    return list(values[-window:])
