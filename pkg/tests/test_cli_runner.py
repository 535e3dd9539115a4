from __future__ import annotations

import json
import math

import pytest

from dflwalk.cli_runner import (
    ExperimentConfig,
    export_csv,
    main,
    parse_angle,
    parse_config,
    run_experiment,
    volume_law_times,
)
from dflwalk.errors import ParseError, ValidationError


def test_empty_document_gives_defaults():
    cfg = parse_config("")
    assert cfg.theta == pytest.approx(math.pi / 4)
    assert cfg.trunc_tol == 1e-8
    assert cfg.n_samples == 4000
    assert cfg.entropy_base == 2
    assert cfg.n_sites == 2 * cfg.steps + 1


def test_figure_style_config():
    cfg = parse_config("steps: 400\nengine: sector\nsamples: 4000\nphi: 3pi/8\n")
    assert cfg.n_sites == 801 and cfg.n_samples == 4000
    assert cfg.phi == pytest.approx(3 * math.pi / 8)


def test_incompatible_engine_rejected():
    with pytest.raises(ValidationError):
        parse_config("engine: sector\nexperiment: entropy_series\n")
    with pytest.raises(ValidationError):
        parse_config("engine: mps\nexperiment: volume_law\n")


def test_unknown_key_reports_line():
    with pytest.raises(ParseError, match="line 3"):
        parse_config("steps: 4\nphi: 0.1\nbogus: 1\n")


def test_malformed_yaml_reports_line():
    with pytest.raises(ParseError, match="line"):
        parse_config("steps: 4\nphi: [0.1\n")


def test_non_mapping_rejected():
    with pytest.raises(ParseError):
        parse_config("- 1\n- 2\n")


@pytest.mark.parametrize(
    "text",
    ["steps: -1\n", "n_samples: 0\n", "entropy_base: 10\n", "steps: 3\nn_sites: 4\n", "trunc_rule: x\n",
     "phi: banana\n", "steps: 2.5\n", "engine: gpu\n", "fit_window: [5, 2]\n"],
)
def test_invalid_values(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_overrides_win():
    cfg = parse_config("steps: 4\nseed: 1\n", {"seed": 9, "steps": None})
    assert cfg.seed == 9 and cfg.steps == 4


@pytest.mark.parametrize(
    "text,value",
    [("pi", math.pi), ("3pi/8", 3 * math.pi / 8), ("pi/100", math.pi / 100), ("-pi/4", -math.pi / 4),
     ("0.25", 0.25), ("2*pi/3", 2 * math.pi / 3)],
)
def test_parse_angle(text, value):
    assert parse_angle(text) == pytest.approx(value)


def test_export_csv_formats(tmp_path):
    path = export_csv([], ("n", "P"), tmp_path / "a.csv")
    assert path.read_text() == "n,P\n"
    export_csv([(0, 1 / 3), (1, -0.0)], ("n", "P"), tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text() == "n,P\n0,0.333333333333\n1,0\n"
    with pytest.raises(ValidationError):
        export_csv([(1, 2, 3)], ("n", "P"), tmp_path / "c.csv")


def test_distribution_run_and_manifest(tmp_path):
    cfg = parse_config(
        "phi_grid: [0, pi/8, pi/4, 3pi/8]\nsteps: 12\nsamples: 50\n", {"output_dir": str(tmp_path)}
    )
    paths = run_experiment(cfg)
    assert [p.name for p in paths] == ["distribution.csv", "manifest.json"]
    lines = (tmp_path / "distribution.csv").read_text().splitlines()
    assert lines[0].startswith("n,P(phi=0),P(phi=0.392699081699)")
    assert len(lines) == 1 + 25
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["outputs"] == ["distribution.csv"]
    assert manifest["config"]["n_samples"] == 50
    assert manifest["seed"] == 0 and "version" in manifest


def test_runs_are_byte_identical(tmp_path):
    text = "steps: 20\nsamples: 300\nphi: 1.0\nexperiment: variance_series\nchunk_size: 64\n"
    a = run_experiment(parse_config(text, {"output_dir": str(tmp_path / "a"), "workers": 1}))[0]
    b = run_experiment(parse_config(text, {"output_dir": str(tmp_path / "b"), "workers": 3}))[0]
    assert a.read_bytes() == b.read_bytes()


def test_spectrum_schema(tmp_path):
    cfg = parse_config("experiment: spectrum\nn_sites: 4\nphi_grid: [0, 0.5]\n", {"output_dir": str(tmp_path)})
    run_experiment(cfg)
    lines = (tmp_path / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "phi,sector_id,E,ipr"
    assert len(lines) == 1 + 2 * 16 * 8


@pytest.mark.parametrize(
    "experiment,engine,header",
    [
        ("entropy_series", "mps", "phi,t,S_center,max_bond,discarded_weight"),
        ("entropy_series", "exact", "phi,t,S_center,max_bond,discarded_weight"),
        ("spin_textures", "exact", "phi,t,n,X,Y,Z"),
        ("spin_textures", "mps", "phi,t,n,X,Y,Z"),
        ("entropy_profile", "mps", "phi,t,bond,S"),
        ("field_perturbation", "exact", "phi_prime,t,variance,S_center"),
        ("ipr_scan", "sector", "phi,t,ipr,variance,lambda,fit_rms"),
        ("distribution", "mps", "n,P(phi=1.1780972451)"),
    ],
)
def test_experiment_schemas(tmp_path, experiment, engine, header):
    text = f"experiment: {experiment}\nengine: {engine}\nsteps: 4\nphi: 3pi/8\nsamples: 20\nfit_window: [0, 4]\n"
    paths = run_experiment(parse_config(text, {"output_dir": str(tmp_path)}))
    assert paths[0].read_text().splitlines()[0] == header


def test_mps_and_exact_agree_through_runner(tmp_path):
    base = "experiment: spin_textures\nsteps: 5\nphi: pi/8\n"
    a = run_experiment(parse_config(base + "engine: mps\n", {"output_dir": str(tmp_path / "m")}))[0]
    b = run_experiment(parse_config(base + "engine: exact\n", {"output_dir": str(tmp_path / "e")}))[0]
    rows_a = [list(map(float, r.split(","))) for r in a.read_text().splitlines()[1:]]
    rows_b = [list(map(float, r.split(","))) for r in b.read_text().splitlines()[1:]]
    for x, y in zip(rows_a, rows_b):
        assert max(abs(u - v) for u, v in zip(x, y)) < 1e-9


def test_volume_law_run(tmp_path):
    cfg = parse_config(
        "engine: exact\nexperiment: volume_law\nsteps: 30\nphi: 3pi/8\nn_sites_grid: [4, 6]\n",
        {"output_dir": str(tmp_path)},
    )
    assert cfg.periodic
    run_experiment(cfg)
    lines = (tmp_path / "volume_law.csv").read_text().splitlines()
    assert lines[0] == "N,t,S_half,S_per_site"
    assert len(lines) == 1 + 2 * len(volume_law_times(30))


def test_failure_removes_partial_outputs(tmp_path, monkeypatch):
    import dflwalk.cli_runner as runner

    def boom(*args, **kwargs):
        raise ValidationError("boom")

    monkeypatch.setattr(runner, "RunManifest", boom)
    cfg = parse_config("steps: 2\nsamples: 4\n", {"output_dir": str(tmp_path)})
    with pytest.raises(ValidationError):
        run_experiment(cfg)
    assert list(tmp_path.iterdir()) == []


def test_cli_subcommands(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DFLWALK_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["walk", "--steps", "3", "--samples", "5"]) == 0
    assert (tmp_path / "env" / "distribution.csv").exists()
    assert main(["exact", "--steps", "3", "--phi", "pi/4", "--out", str(tmp_path / "x")]) == 0
    assert main(["mps", "--steps", "3", "--phi", "0", "pi/4", "--out", str(tmp_path / "m")]) == 0
    assert main(["field", "--steps", "3", "--phi", "3pi/8", "--phi-prime", "0", "pi/100", "--out", str(tmp_path / "f")]) == 0
    assert main(["spectrum", "--n-sites", "4", "--phi", "0", "--out", str(tmp_path / "s")]) == 0
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("steps: 2\nseed: 3\n")
    assert main(["walk", "--config", str(cfg_file), "--seed", "4", "--samples", "2", "--out", str(tmp_path / "c")]) == 0
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["config"]["steps"] == 2
    assert main(["walk", "--experiment", "entropy_series", "--out", str(tmp_path / "bad")]) == 2
    assert "requires engine" in capsys.readouterr().err


def test_config_dataclass_direct_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(engine="exact", n_sites=15, steps=7)
