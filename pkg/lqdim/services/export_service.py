"""
lqdim/services/export_service.py

Plot-ready result files.

CSV files are RFC-4180 style (comma separated, CRLF rows, header first) with
floats written in round-trip precision, so identical runs give byte-identical
files. JSON files are pydantic dumps.
"""
from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import BaseModel

from lqdim.domain.models import EntropyTrace, SpectrumTable
from lqdim.services.measure_service import AtomicMeasure
from lqdim.services.packing_service import MaximalPartition, Packing
from lqdim.utils.files import write_text_atomic

logger = logging.getLogger(__name__)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def spectrum_csv(table: SpectrumTable) -> str:
    fitted = {round(f.q, 12): f for f in table.fitted}
    rows = []
    for e in sorted(table.entries, key=lambda e: (e.q, e.t)):
        f = fitted.get(round(e.q, 12))
        rows.append((
            e.q, e.t, e.s_heavy, e.s_grid, e.i_gd,
            None if f is None else f.tau_hat,
            None if f is None else f.dim_hat,
            e.error_bound,
        ))
    return _csv_text(("q", "t", "S_heavy", "S_grid", "I_gd", "tau_hat", "dim_hat", "error_bound"), rows)


def entropy_csv(trace: EntropyTrace) -> str:
    rows = [(lv.t, lv.h_star, lv.ball_log_integral, trace.dim_e_hat, lv.cells) for lv in trace.levels]
    return _csv_text(("t", "h_star", "ball_log_integral", "dim_e_hat", "cells"), rows)


def packing_csv(packing: Packing, partition: MaximalPartition, mu: AtomicMeasure) -> str:
    """One row per centre and per atom: kind, id, cell, radius, coordinates, mass."""
    dim = mu.positions.shape[1]
    header = ("kind", "id", "cell", "radius", *(f"x{i}" for i in range(dim)), "mass")
    rows = [
        ("center", int(packing.ids[j]), j, packing.radius, *map(float, x), None)
        for j, x in enumerate(packing.positions)
    ]
    rows += [
        ("atom", a, int(partition.labels[a]), None, *map(float, mu.positions[a]), float(mu.masses[a]))
        for a in range(len(mu))
    ]
    return _csv_text(header, rows)


def atoms_csv(mu: AtomicMeasure) -> str:
    names = ("x", "y", "z") if mu.positions.shape[1] == 3 else tuple(f"x{i}" for i in range(mu.positions.shape[1]))
    rows = [(*map(float, p), float(m)) for p, m in zip(mu.positions, mu.masses)]
    return _csv_text((*names, "mass"), rows)


def write_csv(path: Path, text: str) -> Path:
    logger.info("Writing %s", path)
    return write_text_atomic(path, text)


def write_json(path: Path, model: BaseModel) -> Path:
    logger.info("Writing %s", path)
    return write_text_atomic(path, model.model_dump_json(indent=2) + "\n")
