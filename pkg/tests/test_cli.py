"""Tests for the command-line front-end."""

import json
from pathlib import Path

import pytest

from segdecide import cli
from segdecide.const import (
    EXIT_CHECK_FAILED,
    EXIT_DATA_ERROR,
    EXIT_OK,
    EXIT_USAGE,
    GOLDEN_SUFFIX,
    PACKAGE_VERSION,
)
from segdecide.reporting import RUN_SUFFIX
from segdecide.synth import ExperimentReport
from segdecide.tensor_io import read_tensor

from tests.conftest import MOCK_EXPERIMENT_CONFIG_DATA, MOCK_SYNTH_CONFIG_DATA


def _write_config(path: Path, data: dict) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    """Two synthetic scenes, their priors and oracle posteriors."""
    config = _write_config(tmp_path / "synth.json", MOCK_SYNTH_CONFIG_DATA)
    scenes = tmp_path / "scenes"
    assert cli.dispatch(["synth", "--config", config, "--count", "2", "--out-dir", str(scenes)]) == 0
    gts = [str(scenes / f"scene_{i:04d}_gt.sgt") for i in range(2)]
    priors = tmp_path / "priors.sgt"
    code = cli.dispatch(
        [
            "priors",
            "--labels",
            *gts,
            "--num-classes",
            "3",
            "--sigma",
            "1",
            "--cutoff",
            "1e-4",
            "--out",
            str(priors),
            "--global-out",
            str(tmp_path / "global.json"),
            "--stats-out",
            str(tmp_path / "stats.json"),
            "--heatmap-dir",
            str(tmp_path / "heatmaps"),
        ]
    )
    assert code == EXIT_OK
    probs_dir = tmp_path / "probs"
    code = cli.dispatch(
        [
            "synth",
            "--config",
            config,
            "--count",
            "2",
            "--priors",
            str(priors),
            "--out-dir",
            str(probs_dir),
        ]
    )
    assert code == EXIT_OK
    return tmp_path


def _decide(workspace: Path, rule: str, index: int, *extra: str) -> str:
    out = workspace / f"{rule}_{index}.sgt"
    args = [
        "decide",
        "--probs",
        str(workspace / "probs" / f"scene_{index:04d}_probs.sgt"),
        "--rule",
        rule,
        "--out",
        str(out),
    ]
    if rule == "ml":
        args += ["--priors", str(workspace / "priors.sgt")]
    assert cli.dispatch(args + list(extra)) == EXIT_OK
    return str(out)


def test_usage_errors():
    assert cli.dispatch([]) == EXIT_USAGE
    assert cli.dispatch(["frobnicate"]) == EXIT_USAGE
    assert cli.dispatch(["--threads", "0", "synth", "--config", "x", "--out-dir", "y"]) == EXIT_USAGE


def test_help_and_version(capsys):
    assert cli.dispatch(["--help"]) == EXIT_OK
    assert cli.dispatch(["--version"]) == EXIT_OK
    assert PACKAGE_VERSION in capsys.readouterr().out


def test_missing_and_malformed_files(tmp_path: Path):
    out = str(tmp_path / "out.sgt")
    assert cli.dispatch(["decide", "--probs", str(tmp_path / "nope.sgt"), "--out", out]) == (
        EXIT_DATA_ERROR
    )
    junk = tmp_path / "junk.sgt"
    junk.write_bytes(b"not a tensor")
    assert cli.dispatch(["decide", "--probs", str(junk), "--out", out]) == EXIT_DATA_ERROR


def test_synth_and_priors_outputs(workspace: Path):
    scene = workspace / "scenes"
    assert (scene / "scene_0001_features.sgt").is_file()
    priors = read_tensor(workspace / "priors.sgt", kind="priors")
    assert priors.smoothed is True
    assert priors.shape == (24, 32)
    assert len(json.loads((workspace / "global.json").read_text(encoding="utf-8"))) == 3
    assert sorted(p.name for p in (workspace / "heatmaps").iterdir()) == [
        "prior_0.pgm",
        "prior_1.pgm",
        "prior_2.pgm",
    ]
    sidecar = json.loads((workspace / f"priors.sgt{RUN_SUFFIX}").read_text(encoding="utf-8"))
    assert sidecar["command"] == "priors"
    assert (workspace / "probs" / "scene_0000_probs.sgt").is_file()


def test_decide_both_rules(workspace: Path):
    bayes = read_tensor(_decide(workspace, "bayes", 0), kind="labels", num_classes=3)
    disagreement = workspace / "disagreement.pgm"
    ml = read_tensor(
        _decide(workspace, "ml", 0, "--disagreement-out", str(disagreement)),
        kind="labels",
        num_classes=3,
    )
    assert bayes.shape == ml.shape == (24, 32)
    assert disagreement.read_bytes().startswith(b"P5\n32 24\n255\n")


def test_decide_with_global_priors(workspace: Path):
    out = _decide(workspace, "ml", 0, "--prior-mode", "global")
    assert read_tensor(out, kind="labels", num_classes=3).shape == (24, 32)


def test_ml_needs_priors(workspace: Path):
    args = [
        "decide",
        "--probs",
        str(workspace / "probs" / "scene_0000_probs.sgt"),
        "--rule",
        "ml",
        "--out",
        str(workspace / "ml.sgt"),
    ]
    assert cli.dispatch(args) == EXIT_USAGE


def test_eval(workspace: Path):
    pred = _decide(workspace, "bayes", 0)
    out = workspace / "eval.json"
    code = cli.dispatch(
        [
            "eval",
            "--pred",
            pred,
            "--gt",
            str(workspace / "scenes" / "scene_0000_gt.sgt"),
            "--num-classes",
            "3",
            "--min-size",
            "3",
            "--max-gap",
            "2",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["num_images"] == 1
    assert report["postprocess"] == {"connectivity": 8, "min_size": 3, "max_gap": 2}


def test_eval_rejects_unpaired_inputs(workspace: Path):
    pred = _decide(workspace, "bayes", 0)
    gts = [str(workspace / "scenes" / f"scene_{i:04d}_gt.sgt") for i in range(2)]
    code = cli.dispatch(
        ["eval", "--pred", pred, "--gt", *gts, "--num-classes", "3", "--out", str(workspace / "e.json")]
    )
    assert code == EXIT_DATA_ERROR


def test_analyze(workspace: Path):
    bayes = [_decide(workspace, "bayes", i) for i in range(2)]
    ml = [_decide(workspace, "ml", i) for i in range(2)]
    gts = [str(workspace / "scenes" / f"scene_{i:04d}_gt.sgt") for i in range(2)]
    out_dir = workspace / "analysis"
    code = cli.dispatch(
        [
            "analyze",
            "--bayes",
            *bayes,
            "--ml",
            *ml,
            "--gt",
            *gts,
            "--num-classes",
            "3",
            "--class-id",
            "1",
            "--bin-edges",
            "4,16,inf",
            "--min-size",
            "2",
            "--max-gap",
            "1",
            "--out-dir",
            str(out_dir),
        ]
    )
    assert code == EXIT_OK
    summary = json.loads((out_dir / "analysis.json").read_text(encoding="utf-8"))
    assert summary["class_id"] == 1
    assert summary["false_detection_histogram"]["edges"] == [4.0, 16.0, "inf"]
    assert 0.0 <= summary["disagreement_rate"] <= 1.0
    assert (out_dir / "non_detection_hist.csv").is_file()
    assert (out_dir / "heatmap_ml_pixel_level.pgm").is_file()
    assert (out_dir / f"analysis.json{RUN_SUFFIX}").is_file()


def test_experiment(tmp_path: Path):
    config = _write_config(tmp_path / "experiment.json", MOCK_EXPERIMENT_CONFIG_DATA)
    out = tmp_path / "report.json"
    code = cli.dispatch(["--threads", "1", "experiment", "--config", config, "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["seed"] == 3
    assert (tmp_path / f"report.json{RUN_SUFFIX}").is_file()


def test_experiment_check_reports_failed_verdicts(tmp_path: Path, monkeypatch, caplog):
    config = _write_config(tmp_path / "experiment.json", MOCK_EXPERIMENT_CONFIG_DATA)
    failing = ExperimentReport(
        report={"passed": False},
        verdicts={"cost_optimality": {"passed": False}, "component_count": {"passed": True}},
    )
    monkeypatch.setattr(cli, "run_experiment", lambda *args, **kwargs: failing)
    out = str(tmp_path / "report.json")
    assert cli.dispatch(["experiment", "--config", config, "--out", out, "--check"]) == (
        EXIT_CHECK_FAILED
    )
    assert "cost_optimality" in caplog.text
    assert cli.dispatch(["experiment", "--config", config, "--out", out]) == EXIT_OK


def test_experiment_check_compares_with_golden_report(tmp_path: Path, monkeypatch, caplog):
    config = _write_config(tmp_path / "experiment.json", MOCK_EXPERIMENT_CONFIG_DATA)
    passing = ExperimentReport(
        report={"passed": True, "seed": 3},
        verdicts={"cost_optimality": {"passed": True}},
    )
    monkeypatch.setattr(cli, "run_experiment", lambda *args, **kwargs: passing)
    out = tmp_path / "report.json"
    args = ["experiment", "--config", config, "--out", str(out), "--check"]
    # Without a golden report only the verdicts are checked.
    assert cli.dispatch(args) == EXIT_OK
    assert "only verdicts were checked" in caplog.text

    golden = tmp_path / f"experiment{GOLDEN_SUFFIX}"
    golden.write_bytes(out.read_bytes())
    assert cli.dispatch(args) == EXIT_OK

    golden.write_text(out.read_text(encoding="utf-8").replace("3", "4"), encoding="utf-8")
    assert cli.dispatch(args) == EXIT_CHECK_FAILED
    assert "differs from golden report" in caplog.text

    explicit = tmp_path / "elsewhere.json"
    explicit.write_bytes(out.read_bytes())
    assert cli.dispatch(args + ["--golden", str(explicit)]) == EXIT_OK
    missing = str(tmp_path / "missing.json")
    assert cli.dispatch(args + ["--golden", missing]) == EXIT_DATA_ERROR


def test_experiment_writes_a_serialisable_report(tmp_path: Path):
    config = _write_config(tmp_path / "experiment.json", MOCK_EXPERIMENT_CONFIG_DATA)
    first, second = tmp_path / "first.json", tmp_path / "second.json"
    for out in (first, second):
        code = cli.dispatch(["--threads", "2", "experiment", "--config", config, "--out", str(out)])
        assert code == EXIT_OK
    report = json.loads(first.read_text(encoding="utf-8"))
    assert isinstance(report["verdicts"]["pixel_scores"]["passed"], bool)
    assert first.read_bytes() == second.read_bytes()


def test_invalid_config_is_a_data_error(tmp_path: Path):
    config = _write_config(tmp_path / "bad.json", {"height": 0, "width": 4, "classes": []})
    code = cli.dispatch(["synth", "--config", config, "--out-dir", str(tmp_path / "out")])
    assert code == EXIT_DATA_ERROR
