"""
lqdim/services/pipeline_service.py

One pipeline per CLI analysis:
  spectrum     spec → atoms → SpectrumTable + empirical constants → CSV/JSON
  entropy      spec → atoms → doubling gate → EntropyTrace → CSV/JSON
  pack         spec → atoms → packings/partitions per level → CSV + verification JSON
  verify       bundled (or given) specs → full invariant suite → JSON, exit 1 on failure
  sphere-lift  planar spec → hemisphere lift → distortion band, transfer, dims → CSV/JSON
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from lqdim.core.exceptions import DomainError, InvariantViolationError, SpecParseError
from lqdim.domain.models import (
    EntropyResult,
    SphereLiftResult,
    SpectrumResult,
    VerificationReport,
    VerifySuite,
)
from lqdim.domain.schemas import IFSSpecFile, RunConfig
from lqdim.services import entropy_service, export_service, packing_service, spectra_service
from lqdim.services.geometry_service import Ball, doubling_probe
from lqdim.services.ifs_service import (
    IFSSpec,
    attractor_atoms,
    cut_set,
    default_resolution,
    spec_from_schema,
    word,
)
from lqdim.services.manifold_service import (
    StereographicChart,
    conjugate_ifs,
    distortion_probe,
    doubling_transfer_check,
    lift_measure,
)
from lqdim.services.measure_service import AtomicMeasure, doubling_constant, doubling_space_check
from lqdim.utils.files import bundled_specs

logger = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    result:    BaseModel
    files:     list[Path] = field(default_factory=list)
    summary:   list[str] = field(default_factory=list)
    exit_code: int = 0


# ── Loading ───────────────────────────────────────────────────────────────────

def parse_spec_text(text: str, source: str = "<spec>") -> IFSSpecFile:
    """Parse and validate the JSON text of an IFS spec file."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"{source}: invalid JSON ({exc.msg})", line=exc.lineno, original=exc) from exc
    try:
        return IFSSpecFile.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise SpecParseError(f"{source}: field '{where}': {first['msg']}", field=where, original=exc) from exc


def load_spec(path: Path) -> tuple[IFSSpecFile, IFSSpec]:
    """Read a spec file and build its planar IFS."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecParseError(f"cannot read spec file {path}: {exc}", original=exc) from exc
    schema = parse_spec_text(text, source=str(path))
    try:
        spec = spec_from_schema(schema)
    except DomainError as exc:
        raise SpecParseError(f"{path}: {exc.message}", original=exc) from exc
    logger.info("Loaded spec '%s' (%d maps, dim %d)", schema.name, len(schema.maps), schema.space.dim)
    return schema, spec


def atomize(spec: IFSSpec, config: RunConfig, extra_levels: int = 0) -> AtomicMeasure:
    resolution = config.delta_atom or default_resolution(spec, config.t_max + extra_levels)
    return attractor_atoms(spec, resolution, budget=config.word_budget)


def _reference_q(qs: list[float]) -> float:
    return 2.0 if any(abs(q - 2.0) < 1e-12 for q in qs) else qs[0]


# ── spectrum ──────────────────────────────────────────────────────────────────

def run_spectrum(config: RunConfig) -> RunOutcome:
    logger.info("Step 1/5: Loading spec %s", config.spec_path)
    schema, spec = load_spec(config.spec_path)

    logger.info("Step 2/5: Atomizing")
    mu = atomize(spec, config)

    logger.info("Step 3/5: Building the spectrum table (%d q × %d t)", len(config.q_list), len(config.t_grid))
    table = spectra_service.build_spectrum_table(mu, config.q_list, config.t_grid, config.lam, config.fit_window)

    logger.info("Step 4/5: Measuring empirical constants")
    constants = _spectrum_constants(mu, table, config)

    logger.info("Step 5/5: Writing results")
    result = SpectrumResult(spec_name=schema.name, atoms=len(mu), resolution=mu.resolution, table=table, constants=constants)
    out = config.output_dir
    files = [
        export_service.write_csv(out / f"{schema.name}_spectrum.csv", export_service.spectrum_csv(table)),
        export_service.write_json(out / f"{schema.name}_spectrum.json", result),
    ]
    summary = []
    for f in table.fitted:
        gap = f.equivalence_gap
        summary.append(
            f"q={f.q:g}: tau_hat={f.tau_hat:.4f} dim_{f.q:g} ≈ {f.dim_hat:.2f} "
            f"(gd {f.gd_dim:.3f}, renyi {f.renyi_dim:.3f}, equivalence gap {gap:.3f}, ±{f.error_bound:.2g})"
        )
    if not table.fitted:
        summary.append("fewer than 3 levels: no τ fit")
    return RunOutcome(result=result, files=files, summary=summary)


def _spectrum_constants(mu: AtomicMeasure, table, config: RunConfig) -> dict[str, float]:
    q = _reference_q(config.q_list)
    constants: dict[str, float] = {}
    c1 = c2 = 1.0
    for t in config.t_grid:
        delta = 2.0 ** -t
        part = packing_service.maximal_partition(packing_service.heavy_maximal_packing(mu, delta), mu)
        c1 = max(c1, packing_service.partition_constant(part, mu)[0])
        c2 = max(c2, spectra_service.sandwich_check(mu, delta, q, config.random_packings, config.seed).c2_hat)
    constants["C1_hat"] = c1
    constants["C2_hat"] = c2
    constants["C3_hat"] = max(
        max(hi, 1.0 / lo) for lo, hi in (spectra_service.sum_ratio_band(table, qq) for qq in table.q_grid)
    )
    levels = config.t_grid[:3]
    try:
        constants["L_hat"] = spectra_service.multiplicativity_check(mu, q, levels, shift=False).l_hat
    except DomainError as exc:
        logger.warning("Multiplicativity window %s skipped: %s", levels, exc)
    return constants


# ── entropy ───────────────────────────────────────────────────────────────────

def run_entropy(config: RunConfig) -> RunOutcome:
    logger.info("Step 1/5: Loading spec %s", config.spec_path)
    schema, spec = load_spec(config.spec_path)

    logger.info("Step 2/5: Atomizing")
    mu = atomize(spec, config)

    logger.info("Step 3/5: Doubling gate")
    gate = entropy_service.doubling_gate(mu, [2.0 ** -t for t in config.t_grid], force=config.force)

    logger.info("Step 4/5: Tracing h*_t over t=%d..%d (%d restarts)", config.t_min, config.t_max, config.restarts)
    trace = entropy_service.entropy_trace(
        mu, config.t_grid, config.restarts, config.seed, doubling=gate, forced=config.force,
    )
    holds, failing = entropy_service.allowance_check(trace, gate.c_hat)
    if not holds:
        logger.warning("h*_t grows faster than the doubling allowance at t=%s", failing)
    gaps = [lv.gap for lv in trace.levels]
    constants = {"C_doubling": gate.c_hat, "C4_hat": max(gaps), "C4_band": max(gaps) - min(gaps)}
    levels = config.t_grid[:3]
    try:
        constants["L_hat"] = entropy_service.superadditivity_check(
            mu, levels, config.restarts, config.seed, shift=False,
        ).l_hat
    except DomainError as exc:
        logger.warning("Superadditivity window %s skipped: %s", levels, exc)

    logger.info("Step 5/5: Writing results")
    result = EntropyResult(
        spec_name=schema.name, atoms=len(mu), resolution=mu.resolution,
        trace=trace, allowance_holds=holds, constants=constants,
    )
    out = config.output_dir
    files = [
        export_service.write_csv(out / f"{schema.name}_entropy.csv", export_service.entropy_csv(trace)),
        export_service.write_json(out / f"{schema.name}_entropy.json", result),
    ]
    summary = [f"dim_e ≈ {trace.dim_e_hat:.2f} (upper-bound h*_t fit over t={config.t_min}..{config.t_max})"]
    if trace.forced:
        summary.append("warning: doubling gate was forced")
    return RunOutcome(result=result, files=files, summary=summary)


# ── pack ──────────────────────────────────────────────────────────────────────

def run_pack(config: RunConfig) -> RunOutcome:
    logger.info("Step 1/3: Loading spec %s", config.spec_path)
    schema, spec = load_spec(config.spec_path)

    logger.info("Step 2/3: Atomizing")
    mu = atomize(spec, config)

    logger.info("Step 3/3: Packing and partitioning %d level(s)", len(config.t_grid))
    suite = VerifySuite()
    files, summary = [], []
    for t in config.t_grid:
        delta = 2.0 ** -t
        packing = packing_service.heavy_maximal_packing(mu, delta)
        partition = packing_service.maximal_partition(packing, mu)
        grid = packing_service.grid_partition(mu, config.lam, delta)
        for obj in (packing, partition, grid):
            report = packing_service.verify(obj, mu)
            report.subject = f"t={t}: {report.subject}"
            suite.reports.append(report)
        files.append(export_service.write_csv(
            config.output_dir / f"{schema.name}_packing_t{t}.csv",
            export_service.packing_csv(packing, partition, mu),
        ))
        summary.append(f"t={t}: {len(packing)} centres, {len(grid)} grid cells")
    files.append(export_service.write_json(config.output_dir / f"{schema.name}_packing_checks.json", suite))
    return RunOutcome(result=suite, files=files, summary=summary, exit_code=0 if suite.passed else 1)


# ── verify ────────────────────────────────────────────────────────────────────

def _merge(into: VerificationReport, sub: VerificationReport, prefix: str) -> None:
    for check in sub.checks:
        into.add(f"{prefix}.{check.name}", check.passed, check.detail, check.witness)


def load_packing_fixture(path: Path) -> packing_service.Packing:
    """A packing fixture: {"radius": δ, "centers": [[...], ...], "maximal": bool, "heavy": bool}."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        centres = np.atleast_2d(np.asarray(raw["centers"], dtype=float))
        if centres.shape[0] == 1 and len(raw["centers"]) > 1:
            centres = centres.reshape(-1, 1)
        return packing_service.Packing(
            ids=np.full(len(centres), -1, dtype=np.int64),
            positions=centres,
            radius=float(raw["radius"]),
            maximal=bool(raw.get("maximal", True)),
            heavy=bool(raw.get("heavy", False)),
        )
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno, original=exc) from exc
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise SpecParseError(f"{path}: malformed packing fixture ({exc})", original=exc) from exc


def verify_measure(spec: IFSSpec, mu: AtomicMeasure, config: RunConfig) -> VerificationReport:
    """The invariant suite for one system; constants land in `report.constants`."""
    report = VerificationReport(subject=spec.name)
    ts = config.t_grid
    q = 2.0
    rng = np.random.default_rng(config.seed)

    for t in ts:
        cut = cut_set(spec, t, budget=config.word_budget)
        symbols = {w.symbols for w in cut.words}
        prefixed = [w.symbols for w in cut.words if any(w.symbols[:k] in symbols for k in range(1, len(w)))]
        report.add(f"t={t}.cut.section", abs(cut.total_weight - 1.0) <= 1e-12 and not prefixed,
                   f"Σ p_u = {cut.total_weight:.15f}", prefixed[:5])
        report.add(f"t={t}.cut.diameters", all(w.diameter <= 2.0 ** -t * (1 + 1e-12) for w in cut.words),
                   "diam bounds ≤ 2^-t")

    c1, c1_bound, c2 = 1.0, math.inf, []
    probe = doubling_probe(mu.space, mu.positions, [2.0 ** -t for t in ts], probes=64)
    report.add("covering.n0_bounded", probe.n0_hat <= 2 ** (2 * mu.space.manifold_dim + 2),
               f"N0_hat={probe.n0_hat}")
    for t in ts:
        delta = 2.0 ** -t
        packing = packing_service.heavy_maximal_packing(mu, delta)
        partition = packing_service.maximal_partition(packing, mu)
        _merge(report, packing_service.verify(packing, mu), f"t={t}.packing")
        _merge(report, packing_service.verify(partition, mu), f"t={t}.partition")
        _merge(report, packing_service.verify(packing_service.grid_partition(mu, config.lam, delta), mu), f"t={t}.grid")
        value, bound = packing_service.partition_constant(partition, mu, probe)
        c1, c1_bound = max(c1, value), min(c1_bound, bound)
        sandwich = spectra_service.sandwich_check(mu, delta, q, config.random_packings, config.seed)
        report.add(f"t={t}.sandwich", sandwich.s_heavy <= sandwich.s_best * (1 + 1e-12),
                   f"S*={sandwich.s_heavy:.6g} ≤ best sampled {sandwich.s_best:.6g}")
        c2.append(sandwich.c2_hat)
    report.add("partition_constant", c1 <= c1_bound, f"C1_hat={c1:.4g} vs 1 + D0·2^(2p+1) = {c1_bound:.4g}")

    table = spectra_service.build_spectrum_table(mu, [0.5, 1.0, q], ts, config.lam, config.fit_window)
    c3 = max(max(hi, 1.0 / lo) for lo, hi in (spectra_service.sum_ratio_band(table, qq) for qq in (0.5, q)))
    for t in ts:
        packed = table.entry(1.0, t).s_heavy
        report.add(f"t={t}.packed_mass", packed <= 1.0 + 1e-12, f"S*(1) = {packed:.12f} ≤ 1")

    profile = spectra_service.cut_mass_profile(
        mu, spec, ts[0], packing_service.heavy_maximal_packing(mu, 2.0 ** -ts[0]), q,
    )
    report.add("cut_mass.p_minus_total", abs(sum(profile.p_minus) - 1.0) <= 1e-9, f"Σ P_- = {sum(profile.p_minus):.12f}")
    report.add("cut_mass.p_plus_range", all(0 < p <= 1 + 1e-12 for p in profile.p_plus), "P_+ ∈ (0, 1]")

    constants = {"C1_hat": c1, "C1_bound": c1_bound, "C2_hat": max(c2), "C3_hat": c3, "C4_hat": profile.c4_hat or 0.0}
    try:
        mult = spectra_service.multiplicativity_check(mu, q, ts[:3], shift=False)
        constants["L_hat"] = mult.l_hat
        report.add("multiplicativity", math.isfinite(mult.l_hat), f"L_hat={mult.l_hat:.4g} ({mult.direction})")
    except DomainError as exc:
        logger.warning("Multiplicativity skipped for '%s': %s", spec.name, exc)

    doubling = doubling_constant(mu, [2.0 ** -t for t in ts], probes=256)
    count, c9 = doubling_space_check(mu, 2.0 ** -ts[0], doubling.c_hat, probes=64)
    report.add("doubling_space.packing_count", count <= c9, f"max (r/2)-packing of a 2r-ball: {count} ≤ C^9 = {c9:.4g}")

    trace = entropy_service.entropy_trace(mu, ts, config.restarts, config.seed, doubling=doubling)
    holds, failing = entropy_service.allowance_check(trace, doubling.c_hat)
    report.add("entropy.allowance", holds, "h*_{t+1} ≤ h*_t + C^log2(10)", failing)
    report.add("entropy.nonnegative", all(h >= 0 for h in trace.h_star), "h*_t ≥ 0")
    for lv in trace.levels[:-1]:
        h_eps = entropy_service.entropy_at_scale(mu, 8 * 2.0 ** -(lv.t + 1), config.restarts, config.seed)
        report.add(f"t={lv.t}.entropy.scale_bound", h_eps <= lv.h_star + 1e-12, f"h(μ, 8δ)={h_eps:.5f} ≤ h*_t={lv.h_star:.5f}")
    constants["C4_gap"] = trace.c4_hat

    cover_t = 1
    cover_s = ts[0]
    try:
        partition = packing_service.maximal_partition(
            packing_service.heavy_maximal_packing(mu, 2.0 ** -(cover_s + cover_t)), mu,
        )
        u = cut_set(spec, cover_t, budget=config.word_budget).words[0]
        cover = packing_service.pullback_good_cover(partition, u, mu, t=cover_t)
        _merge(report, packing_service.verify(cover, mu), "good_cover")
        constants["Q_hat"], constants["D_hat"] = cover.q, float(cover.d)
    except DomainError as exc:
        logger.warning("Good-cover check skipped for '%s': %s", spec.name, exc)
    except InvariantViolationError as exc:
        report.add("good_cover.certified", False, exc.message, exc.witnesses)

    sweep = rng.random((1000, 16))
    lengths = rng.integers(1, 17, size=1000)
    qs = rng.uniform(1e-3, 4.0, size=1000)
    bad = [i for i in range(1000) if not spectra_service.power_sum_check(sweep[i, : lengths[i]], qs[i])]
    report.add("power_sum", not bad, "(Σa)^q ≤ max(k^(q−1), 1)·Σa^q on 1000 random vectors", bad[:5])

    report.constants = constants
    return report


def run_verify(config: RunConfig) -> RunOutcome:
    paths = [config.spec_path] if config.spec_path else bundled_specs()
    suite = VerifySuite()
    summary = []
    for i, path in enumerate(paths, start=1):
        logger.info("Step %d/%d: Verifying %s", i, len(paths), path)
        _, spec = load_spec(path)
        mu = atomize(spec, config)
        report = verify_measure(spec, mu, config)
        suite.reports.append(report)
        if config.packing_path is not None:
            fixture = packing_service.verify(load_packing_fixture(config.packing_path), mu)
            fixture.subject = f"{spec.name}: fixture {config.packing_path.name}"
            suite.reports.append(fixture)
    for report in suite.reports:
        consts = ", ".join(f"{k}={v:.4g}" for k, v in report.constants.items())
        summary.append(f"{report.subject}: {'ok' if report.passed else 'FAILED'}" + (f" ({consts})" if consts else ""))
        for check in report.failures:
            summary.append(f"  {check.name}: {check.detail} witness={check.witness}")
    files = [export_service.write_json(config.output_dir / "verify_report.json", suite)]
    return RunOutcome(result=suite, files=files, summary=summary, exit_code=0 if suite.passed else 1)


# ── sphere-lift ───────────────────────────────────────────────────────────────

def run_sphere_lift(config: RunConfig) -> RunOutcome:
    logger.info("Step 1/5: Loading spec %s", config.spec_path)
    schema, planar = load_spec(config.spec_path)
    chart = StereographicChart(schema.space.dim)
    if schema.chart is None:
        logger.warning("Spec '%s' names no chart; lifting through the stereographic chart", schema.name)

    logger.info("Step 2/5: Atomizing and lifting")
    mu_plane = atomize(planar, config, extra_levels=1)
    mu_sphere = lift_measure(mu_plane, chart)
    lifted = conjugate_ifs(planar, chart)
    round_trip = float(np.max(np.abs(chart.forward(mu_sphere.positions) - mu_plane.positions)))
    if mu_plane.words is not None:
        anchor = lifted.anchor().reshape(1, -1)
        idx = list(range(0, len(mu_plane.words), max(1, len(mu_plane.words) // 256)))
        images = np.vstack([word(lifted, mu_plane.words[i]).apply(anchor) for i in idx])
        round_trip = max(round_trip, float(np.max(np.abs(images - mu_sphere.positions[idx]))))

    logger.info("Step 3/5: Probing the distortion band")
    scales = [2.0 ** -t for t in config.t_grid]
    step = max(1, len(mu_sphere) // 32)
    band = distortion_probe(chart, [Ball(center=mu_sphere.positions[i], radius=r) for r in scales for i in range(0, len(mu_sphere), step)],
                            seed=config.seed)

    logger.info("Step 4/5: Doubling transfer and dimensions")
    transfer = doubling_transfer_check(mu_plane, chart, scales)
    planar_dims, lifted_dims = {}, {}
    if len(config.t_grid) >= 3:
        for label, mu, dims in (("planar", mu_plane, planar_dims), ("lifted", mu_sphere, lifted_dims)):
            table = spectra_service.build_spectrum_table(mu, config.q_list, config.t_grid, config.lam, config.fit_window)
            dims.update({f"{f.q:g}": f.dim_hat for f in table.fitted if f.dim_hat is not None})

    logger.info("Step 5/5: Writing results")
    result = SphereLiftResult(
        spec_name=schema.name, atoms=len(mu_sphere), round_trip_error=round_trip,
        band=band, transfer=transfer, planar_dims=planar_dims, lifted_dims=lifted_dims,
    )
    out = config.output_dir
    files = [
        export_service.write_csv(out / f"{schema.name}_lifted_atoms.csv", export_service.atoms_csv(mu_sphere)),
        export_service.write_json(out / f"{schema.name}_sphere_lift.json", result),
    ]
    summary = [
        f"round trip error {round_trip:.2e}; distortion band [{band.d1:.4f}, {band.d2:.4f}]",
        f"C_sphere={transfer.c_sphere:.3f} ≤ C_plane^{transfer.m + 1}={transfer.bound:.3f}: {transfer.holds}",
    ]
    summary += [f"dim_{q}: planar {planar_dims[q]:.3f}, lifted {lifted_dims[q]:.3f}" for q in planar_dims]
    return RunOutcome(result=result, files=files, summary=summary, exit_code=0 if transfer.holds else 1)


_RUNNERS = {
    "spectrum": run_spectrum,
    "entropy": run_entropy,
    "pack": run_pack,
    "verify": run_verify,
    "sphere-lift": run_sphere_lift,
}


def run(config: RunConfig) -> RunOutcome:
    """Dispatch a validated run configuration to its pipeline."""
    logger.info("Pipeline '%s' started (seed %d)", config.analysis, config.seed)
    outcome = _RUNNERS[config.analysis](config)
    logger.info("Pipeline complete: %d file(s) written", len(outcome.files))
    return outcome
