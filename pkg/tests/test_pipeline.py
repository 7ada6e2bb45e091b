import json
import math

import pytest
from pydantic import ValidationError

from lqdim.core.exceptions import SpecParseError
from lqdim.domain.schemas import RunConfig
from lqdim.services.pipeline_service import (
    atomize,
    load_packing_fixture,
    load_spec,
    parse_spec_text,
    run,
)
from lqdim.utils.files import bundled_specs, resolve_spec_path

CANTOR_DIM = math.log(2) / math.log(3)


def _fair_text(**overrides) -> str:
    raw = json.loads(resolve_spec_path("fair_cantor").read_text(encoding="utf-8"))
    raw.update(overrides)
    return json.dumps(raw, indent=2)


def _config(tmp_path, analysis="spectrum", **kw) -> RunConfig:
    values = dict(
        spec_path=resolve_spec_path("fair_cantor"),
        analysis=analysis,
        q_list=[2.0],
        t_min=3,
        t_max=7,
        delta_atom=2.0 ** -11,
        restarts=2,
        random_packings=5,
        output_dir=tmp_path,
        seed=3,
    )
    values.update(kw)
    return RunConfig(**values)


# ── Spec files ────────────────────────────────────────────────────────────────

def test_bundled_specs_load():
    names = {load_spec(path)[0].name for path in bundled_specs()}
    assert {"fair_cantor", "biased_cantor", "uniform_interval", "sphere_cantor"} <= names


def test_probabilities_must_sum_to_one():
    with pytest.raises(SpecParseError, match="probs") as info:
        parse_spec_text(_fair_text(probs=[0.5, 0.6]), source="bad.json")
    assert info.value.field == "probs"
    assert str(info.value).startswith("bad.json")


def test_probability_count_must_match_the_maps():
    with pytest.raises(SpecParseError, match="probabilities for 2 maps"):
        parse_spec_text(_fair_text(probs=[0.2, 0.3, 0.5]))


def test_invalid_json_reports_the_line():
    with pytest.raises(SpecParseError, match="invalid JSON") as info:
        parse_spec_text('{\n  "name": "x",\n  oops\n}')
    assert info.value.line == 3
    assert info.value.exit_code == 2


def test_missing_spec_file_is_a_parse_error(tmp_path):
    with pytest.raises(SpecParseError, match="cannot read"):
        load_spec(tmp_path / "nowhere.json")


def test_resolve_spec_path_accepts_bundled_names():
    assert resolve_spec_path("fair_cantor").name == "fair_cantor.json"
    assert resolve_spec_path("fair_cantor.json") == resolve_spec_path("fair_cantor")
    with pytest.raises(FileNotFoundError):
        resolve_spec_path("no_such_system")


def test_packing_fixture(tmp_path):
    path = tmp_path / "packing.json"
    path.write_text(json.dumps({"radius": 0.125, "centers": [[0.0], [0.5]], "heavy": True}), encoding="utf-8")
    packing = load_packing_fixture(path)
    assert packing.radius == 0.125
    assert packing.positions.shape == (2, 1)
    assert packing.heavy and packing.maximal


def test_malformed_packing_fixture(tmp_path):
    path = tmp_path / "packing.json"
    path.write_text(json.dumps({"centers": [[0.0]]}), encoding="utf-8")
    with pytest.raises(SpecParseError, match="malformed"):
        load_packing_fixture(path)


# ── Run configuration ─────────────────────────────────────────────────────────

def test_run_config_rejects_q_one_for_spectra(tmp_path):
    with pytest.raises(ValidationError, match="entropy"):
        _config(tmp_path, q_list=[1.0, 2.0])


def test_run_config_accepts_q_one_for_entropy(tmp_path):
    assert _config(tmp_path, analysis="entropy", q_list=[1.0]).t_grid == [3, 4, 5, 6, 7]


@pytest.mark.parametrize("bad", [
    {"q_list": [-1.0]},
    {"lam": 0.75},
    {"t_min": 8, "t_max": 4},
    {"delta_atom": 2.0 ** -6},
])
def test_run_config_rejections(tmp_path, bad):
    with pytest.raises(ValidationError):
        _config(tmp_path, **bad)


def test_default_atomization_resolves_below_the_finest_scale(fair_spec, tmp_path):
    config = _config(tmp_path, delta_atom=None, t_max=6)
    mu = atomize(fair_spec, config)
    assert 4 * mu.resolution <= 2.0 ** -6


# ── Pipelines ─────────────────────────────────────────────────────────────────

def test_spectrum_pipeline(tmp_path):
    outcome = run(_config(tmp_path))
    assert outcome.exit_code == 0
    assert [p.name for p in outcome.files] == ["fair_cantor_spectrum.csv", "fair_cantor_spectrum.json"]
    saved = json.loads((tmp_path / "fair_cantor_spectrum.json").read_text(encoding="utf-8"))
    fitted = saved["table"]["fitted"][0]
    assert fitted["dim_hat"] == pytest.approx(CANTOR_DIM, abs=0.1)
    assert {"C1_hat", "C2_hat", "C3_hat"} <= set(saved["constants"])
    assert outcome.summary[0].startswith("q=2: tau_hat=")


def test_spectrum_csv_layout(tmp_path):
    run(_config(tmp_path, t_max=5))
    raw = (tmp_path / "fair_cantor_spectrum.csv").read_bytes()
    lines = raw.decode("utf-8").split("\r\n")
    assert lines[0] == "q,t,S_heavy,S_grid,I_gd,tau_hat,dim_hat,error_bound"
    assert len([line for line in lines[1:] if line]) == 3


def test_entropy_pipeline(tmp_path):
    outcome = run(_config(tmp_path, analysis="entropy", t_min=2, t_max=8))
    saved = json.loads((tmp_path / "fair_cantor_entropy.json").read_text(encoding="utf-8"))
    assert saved["trace"]["dim_e_hat"] == pytest.approx(CANTOR_DIM, abs=0.1)
    assert "C_doubling" in saved["constants"]
    assert outcome.summary[0].startswith("dim_e ≈")


def test_pack_pipeline_writes_one_csv_per_level(tmp_path):
    outcome = run(_config(tmp_path, analysis="pack", t_min=3, t_max=5))
    assert outcome.exit_code == 0
    for t in (3, 4, 5):
        assert (tmp_path / f"fair_cantor_packing_t{t}.csv").is_file()
    checks = json.loads((tmp_path / "fair_cantor_packing_checks.json").read_text(encoding="utf-8"))
    assert len(checks["reports"]) == 9


def test_verify_pipeline_flags_a_bad_fixture(tmp_path):
    fixture = tmp_path / "fixture.json"
    fixture.write_text(json.dumps({"radius": 0.125, "centers": [[0.0], [0.2]]}), encoding="utf-8")
    outcome = run(_config(tmp_path, analysis="verify", t_min=3, t_max=5, delta_atom=2.0 ** -12, packing_path=fixture))
    assert outcome.exit_code == 1
    fixture_report = outcome.result.reports[-1]
    assert not fixture_report.passed
    assert "disjoint" in {c.name for c in fixture_report.failures}


def test_pipelines_are_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    run(_config(first, analysis="pack", t_max=5))
    run(_config(second, analysis="pack", t_max=5))
    for t in (3, 4, 5):
        name = f"fair_cantor_packing_t{t}.csv"
        assert (first / name).read_bytes() == (second / name).read_bytes()
