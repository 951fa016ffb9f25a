from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from monochain.cli import (EXIT_FAIL, EXIT_NO_INPUT, EXIT_NOT_MONOTONE, EXIT_OK, EXIT_PRECONDITION, EXIT_USAGE,
                           load_config, main)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ARTIFACTS = ["report.json", "components.csv", "boxes.csv", "morse.dot", "components.svg", "graph.edges"]


def _cfg(name: str) -> str:
    return str(CONFIGS / f"{name}.ini")


@pytest.fixture(scope="module")
def bistable_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bistable")
    code = main(["analyze", "--config", _cfg("bistable-coop"), "--grid", "64x64", "--out", str(out)])
    return code, out


def test_every_shipped_config_loads():
    for path in sorted(CONFIGS.glob("*.ini")):
        assert main(["analyze", "--config", str(path), "--grid", "bad", "--out", "/nonexistent/x"]) == EXIT_USAGE
        args = type("A", (), {"seed": None, "grid": None, "epsilon_scale": None, "stages": None})()
        cfg = load_config(str(path), args)
        assert len(cfg.canonical()) > 0


def test_analyze_bistable_artifacts(bistable_run):
    code, out = bistable_run
    assert code == EXIT_OK
    for name in ARTIFACTS + ["timings.json"]:
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["command"] == "analyze"
    assert {c["classification"] for c in report["components"]} == {"Unordered"}
    assert len(report["morse_graph"]["sinks"]) == 2
    assert (out / "morse.dot").read_text().startswith("digraph morse {")


def test_svg_points_are_csv_box_centres(bistable_run):
    _, out = bistable_run
    with open(out / "boxes.csv") as fh:
        rows = list(csv.DictReader(fh))
    centres = {int(r["box_id"]): (float(r["c0"]), float(r["c1"])) for r in rows}
    svg = (out / "components.svg").read_text()
    pts = re.findall(r'cx="([\d.]+)" cy="([\d.]+)" r="[\d.]+" fill="#\w+" data-box="(\d+)"', svg)
    assert len(pts) == len(rows) > 0
    # invert the 600px frame with 20px padding over [-2, 2]^2
    for cx, cy, b in pts:
        x = -2 + (float(cx) - 20) * 4 / 560
        y = -2 + (600 - 20 - float(cy)) * 4 / 560
        assert int(b) in centres
        np.testing.assert_allclose((x, y), centres[int(b)], atol=1e-2)


def test_bh_check_and_reverse(bistable_run):
    _, out = bistable_run
    report = json.loads((out / "report.json").read_text())
    with open(out / "boxes.csv") as fh:
        at_origin = {int(r["component"]) for r in csv.DictReader(fh)
                     if abs(float(r["c0"])) < 0.05 and abs(float(r["c1"])) < 0.05}
    (saddle,) = [c for c in report["components"] if c["component_id"] in at_origin]
    argv = ["bh-check", "--config", _cfg("bistable-coop"), "--grid", "64x64", "--out", str(out),
            "--component", str(saddle["component_id"])]
    assert main(argv) == EXIT_OK
    assert main(argv + ["--reverse"]) == EXIT_OK
    up = json.loads((out / f"bh_certificate_C{saddle['component_id']}.json").read_text())
    down = json.loads((out / f"bh_certificate_C{saddle['component_id']}_reversed.json").read_text())
    assert up["found"] and down["found"]
    np.testing.assert_allclose(np.asarray(up["q"]), -np.asarray(down["q"]), atol=1e-8)


def test_bh_check_missing_inputs(tmp_path):
    argv = ["bh-check", "--config", _cfg("bistable-coop"), "--out", str(tmp_path / "empty"), "--component", "0"]
    assert main(argv) == EXIT_NO_INPUT


def test_bh_check_on_stationary_component_is_precondition(tmp_path):
    out = tmp_path / "tanh"
    assert main(["analyze", "--config", _cfg("diagonal-tanh"), "--grid", "32x32", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    (comp,) = [c for c in report["components"] if c["classification"] != "Unordered"]
    argv = ["bh-check", "--config", _cfg("diagonal-tanh"), "--out", str(out), "--component",
            str(comp["component_id"])]
    assert main(argv) == EXIT_PRECONDITION


def test_non_monotone_system_exit_code(tmp_path):
    out = tmp_path / "henon"
    assert main(["analyze", "--config", _cfg("henon"), "--grid", "32x32", "--out", str(out)]) == EXIT_NOT_MONOTONE
    report = json.loads((out / "report.json").read_text())
    assert report["monotonicity"]["passed"] is False
    assert "structure_skipped" in report and (out / "morse.dot").exists()


def test_unknown_system_writes_nothing(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[system]\nname = no-such-system\n")
    out = tmp_path / "out"
    assert main(["analyze", "--config", str(cfg), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["analyze"])
    assert info.value.code == EXIT_USAGE
    assert main(["analyze", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "o")]) \
        == EXIT_NO_INPUT


def test_reruns_are_byte_identical(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["analyze", "--config", _cfg("linear-contraction"), "--grid", "32x32", "--out", str(out)]) == 0
    for name in ARTIFACTS:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_seed_override_changes_header(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["analyze", "--config", _cfg("linear-contraction"), "--grid", "16x16", "--out", str(a)])
    main(["analyze", "--config", _cfg("linear-contraction"), "--grid", "16x16", "--seed", "5", "--out", str(b)])
    ha = json.loads((a / "report.json").read_text())
    hb = json.loads((b / "report.json").read_text())
    assert ha["config_hash"] != hb["config_hash"]


def test_measure_pass_and_fail(tmp_path):
    out = tmp_path / "m"
    assert main(["measure", "--config", _cfg("linear-contraction"), "--grid", "32x32", "--out", str(out)]) == EXIT_OK
    body = json.loads((out / "measure.json").read_text())
    assert body["verdict"] == "PASS" and (out / "measure.csv").exists()
    assert body["inputs"]["subdivisions"] == [32, 32]
    # a too-coarse epsilon scale is rejected before any numerics
    assert main(["measure", "--config", _cfg("linear-contraction"), "--epsilon-scale", "0.5",
                 "--out", str(tmp_path / "n")]) == EXIT_USAGE


def test_measure_fail_exit_code(tmp_path, monkeypatch):
    import monochain.cli as cli

    real = cli.check_support_chain_recurrent

    def failing(mu, graph):
        rep = real(mu, graph)
        rep.passed, rep.violations = False, [0]
        return rep

    monkeypatch.setattr(cli, "check_support_chain_recurrent", failing)
    out = tmp_path / "m"
    assert main(["measure", "--config", _cfg("linear-contraction"), "--grid", "16x16", "--out", str(out)]) == EXIT_FAIL
    assert json.loads((out / "measure.json").read_text())["verdict"] == "FAIL"


def test_entropy_command(tmp_path):
    cfg = tmp_path / "h.ini"
    cfg.write_text((CONFIGS / "henon.ini").read_text().replace("seeds = 2000", "seeds = 300"))
    out = tmp_path / "e"
    assert main(["entropy", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    body = json.loads((out / "entropy.json").read_text())
    assert body["value"] > 0 and body["inputs"]["seeds"] == 300


def test_list_systems(capsys):
    assert main(["list-systems"]) == EXIT_OK
    text = capsys.readouterr().out
    for name in ("linear-contraction", "diagonal-tanh", "bistable-coop", "coop-3d", "henon"):
        assert name in text


def test_readme_config_block_parses(tmp_path):
    readme = (CONFIGS.parent / "README.md").read_text()
    block = readme.split("```ini\n", 1)[1].split("```", 1)[0]
    cfg_path = tmp_path / "readme.ini"
    cfg_path.write_text(block)
    args = type("A", (), {"seed": None, "grid": None, "epsilon_scale": None, "stages": None})()
    cfg = load_config(str(cfg_path), args)
    assert cfg.system == "bistable-coop" and cfg.params == {"gain": 2.0}
    assert cfg.subdivisions == (128, 128) and cfg.times == (1.0, 1.5)
    assert cfg.entropy_region == ((-1.3, -0.4), (1.3, 0.4)) and "bh" in cfg.stages
