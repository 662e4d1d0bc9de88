import json
import shutil

import pandas as pd
import pytest

from conftest import read_text
from uncertainty_wrapper.cli import main

TEST_SAMPLES = ["S0004", "S0005"]


def _copy_config(pipeline, root, **overrides):
    data = json.loads(read_text(pipeline["config"]))
    data.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _error_lines(capsys):
    err = capsys.readouterr().err
    return [line for line in err.splitlines() if line.startswith("uwrap: error:")]


def test_generate_writes_splits_and_manifest(pipeline):
    data = pipeline["data"]
    manifest = json.loads(read_text(data / "manifest.json"))
    test = pd.read_csv(data / "test.csv", dtype=str)

    assert manifest["counts"]["test"] == {"samples": 2, "events": 1000}
    assert manifest["seed"] == 0
    assert sorted(test["sample_id"].unique()) == TEST_SAMPLES
    assert list(test.columns)[:3] == ["sample_id", "event_id", "m_CD45"]
    assert list(test.columns)[-1] == "split"
    assert set(test["split"]) == {"test"}


def test_train_writes_classifiers_and_metrics(pipeline):
    models = pipeline["models"]
    metrics = json.loads(read_text(models / "metrics.json"))

    assert sorted(p.name for p in (models / "ddm").glob("*.json")) == ["BP.json", "L.json", "NKP.json", "TP.json"]
    assert set(metrics["cell_types"]) == {"L", "BP", "TP", "NKP"}
    assert metrics["cell_types"]["L"]["calibration_accuracy"] > 0.85
    assert (models / "panel.json").exists()


def test_build_writes_every_variant(pipeline):
    names = sorted(p.name for p in (pipeline["models"] / "wrappers").glob("*.json"))

    assert names == [
        "BP-basic+outcome.json",
        "L-baseline.json",
        "L-basic+outcome.json",
        "L-density-category.json",
        "NKP-basic+outcome.json",
        "NKP-combined+outcome.json",
        "TP-basic+outcome.json",
    ]
    wrapper = json.loads(read_text(pipeline["models"] / "wrappers" / "NKP-combined+outcome.json"))
    assert wrapper["ddm_ref"] == "../ddm/NKP.json"
    assert wrapper["factor_names"] == ["marker_2", "marker_4", "density_2_4", "homogeneity", "outcome"]


def test_evaluation_table(pipeline):
    frame = pd.read_csv(pipeline["outputs"] / "evaluation.csv")
    text = read_text(pipeline["outputs"] / "evaluation.txt")

    assert list(zip(frame["cell_type"], frame["variant"])) == [
        ("L", "baseline"),
        ("L", "basic+outcome"),
        ("L", "density-category"),
        ("BP", "basic+outcome"),
        ("TP", "basic+outcome"),
        ("NKP", "basic+outcome"),
        ("NKP", "combined+outcome"),
    ]
    assert (frame.groupby("cell_type")["variance"].nunique() == 1).all()
    identity = frame["variance"] - frame["unspecificity"] + frame["unreliability"]
    assert (abs(frame["brier"] - identity) < 1e-9).all()
    assert "density-category*" in text


@pytest.mark.slow
def test_variant_trends_on_demo_data(tmp_path):
    config = tmp_path / "config.json"
    assert main(["init-config", str(config), "-q"]) == 0
    data = json.loads(read_text(config))
    data["variants"] = {
        "L": ["baseline", "basic+outcome"],
        "BP": ["baseline", "basic+outcome"],
        "TP": ["baseline", "basic+outcome"],
        "NKP": ["baseline", "basic+outcome", "combined+outcome"],
    }
    data["aggregate_variants"] = {}
    config.write_text(json.dumps(data), encoding="utf-8")
    for command in ("generate", "train", "build", "evaluate"):
        assert main([command, "--config", str(config), "-q"]) == 0, command

    frame = pd.read_csv(tmp_path / "outputs" / "evaluation.csv")
    brier = frame.set_index(["cell_type", "variant"])["brier"]
    for name in ("L", "BP", "TP", "NKP"):
        assert brier[(name, "baseline")] >= brier[(name, "basic+outcome")]
    assert brier[("NKP", "combined+outcome")] <= brier[("NKP", "basic+outcome")]
    assert (frame.groupby("cell_type")["variance"].nunique() == 1).all()



def test_aggregate_outputs(pipeline):
    lines = read_text(pipeline["outputs"] / "bounds.csv").splitlines()

    assert lines[0] == "sample_id,cell_type,ratio_pred,ratio_min,ratio_max,ratio_true,inside"
    assert [line.split(",")[:2] for line in lines[1:9]] == [
        [sample, name] for sample in TEST_SAMPLES for name in ("L", "BP", "TP", "NKP")
    ]
    assert lines[-1].startswith("# coverage: ") and lines[-1].endswith("/8")
    for name in ("L", "BP", "TP", "NKP"):
        assert read_text(pipeline["outputs"] / f"bounds_{name}.svg").startswith("<svg")


def test_aggregate_single_cell_type(pipeline, tmp_path, capsys):
    code = main(
        ["aggregate", "--config", str(pipeline["config"]), "--cell-type", "TP", "--out", str(tmp_path), "-q"]
    )
    result = json.loads(capsys.readouterr().out)

    assert code == 0
    assert result["records"] == 2
    assert (tmp_path / "bounds_TP.svg").exists()
    assert not (tmp_path / "bounds_L.svg").exists()


def test_plot_gating_defaults_and_subtypes(pipeline, tmp_path, capsys):
    config = str(pipeline["config"])

    assert main(["plot-gating", "--config", config, "--sample", "S0004", "--out", str(tmp_path), "-q"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["events"] == 500
    assert (tmp_path / "gating_S0004_L_0-1.svg").exists()

    args = ["plot-gating", "--config", config, "--sample", "S0005", "--cell-type", "NKP", "--out", str(tmp_path), "-q"]
    assert main(args) == 0
    result = json.loads(capsys.readouterr().out)
    assert 0 < result["events"] < 500
    assert (tmp_path / "gating_S0005_NKP_2-4.svg").exists()


def test_dump_factors_default_columns(pipeline, tmp_path, capsys):
    args = ["dump-factors", "--config", str(pipeline["config"]), "--sample", "S0004", "--out", str(tmp_path), "-q"]

    assert main(args) == 0
    frame = pd.read_csv(tmp_path / "factors_S0004_L.csv")
    assert list(frame.columns) == ["event_id", "marker_0", "marker_1", "percentile_0", "percentile_1", "density_0_1"]
    assert len(frame) == 500
    assert frame["percentile_0"].between(0, 1).all()
    assert len(list(tmp_path.glob("factors_S0004_L_*.svg"))) == 5
    capsys.readouterr()


def test_dump_factors_for_variant(pipeline, tmp_path, capsys):
    args = [
        "dump-factors",
        "--config",
        str(pipeline["config"]),
        "--sample",
        "S0004",
        "--cell-type",
        "NKP",
        "--variant",
        "combined+outcome",
        "--out",
        str(tmp_path),
        "-q",
    ]

    assert main(args) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["factors"] == ["marker_2", "marker_4", "density_2_4", "homogeneity", "outcome"]


def test_rerun_is_byte_identical(pipeline, tmp_path):
    config = _copy_config(pipeline, tmp_path)
    for command in ("generate", "train", "build"):
        assert main([command, "--config", str(config), "-q"]) == 0

    for relative in ("data/train.csv", "data/test.csv", "data/manifest.json", "models/metrics.json"):
        assert read_text(tmp_path / relative) == read_text(pipeline[relative.split("/")[0]] / relative.split("/")[1])
    for wrapper in (pipeline["models"] / "wrappers").glob("*.json"):
        assert read_text(tmp_path / "models" / "wrappers" / wrapper.name) == read_text(wrapper)


def test_seed_override_changes_data(pipeline, tmp_path, capsys):
    config = _copy_config(pipeline, tmp_path)

    assert main(["generate", "--config", str(config), "--seed", "3", "-q"]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 3
    assert read_text(tmp_path / "data" / "test.csv") != read_text(pipeline["data"] / "test.csv")


def test_shift_sd_is_recorded(pipeline, tmp_path, capsys):
    config = _copy_config(pipeline, tmp_path)

    assert main(["generate", "--config", str(config), "--shift-sd", "0.2", "-q"]) == 0
    manifest = json.loads(read_text(tmp_path / "data" / "manifest.json"))
    assert manifest["generator"]["sample_shift_sd"] == 0.2
    capsys.readouterr()


def test_missing_files_exit_with_io_code(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json"), "-q"]) == 2
    assert len(_error_lines(capsys)) == 1

    config = tmp_path / "config.json"
    assert main(["init-config", str(config), "-q"]) == 0
    capsys.readouterr()
    assert main(["train", "--config", str(config), "-q"]) == 2
    assert "uwrap generate" in _error_lines(capsys)[0]


def test_invalid_config_exits_with_config_code(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text('{"confidence": 2}', encoding="utf-8")

    assert main(["generate", "--config", str(config), "-q"]) == 1
    assert len(_error_lines(capsys)) == 1


def test_bad_events_exit_with_data_code(pipeline, tmp_path, capsys):
    config = _copy_config(pipeline, tmp_path)
    (tmp_path / "data").mkdir()
    header = read_text(pipeline["data"] / "train.csv").splitlines()[0]
    (tmp_path / "data" / "train.csv").write_text(header + "\nS0000,E000000,oops\n", encoding="utf-8")

    assert main(["train", "--config", str(config), "-q"]) == 3
    lines = _error_lines(capsys)
    assert len(lines) == 1
    assert "line 2" in lines[0]


def test_undecodable_events_exit_with_data_code(pipeline, tmp_path, capsys):
    config = _copy_config(pipeline, tmp_path)
    (tmp_path / "data").mkdir()
    header = read_text(pipeline["data"] / "train.csv").splitlines()[0]
    row = b"S\xff1,E000000" + b",1" * (header.count(",") - 1)
    (tmp_path / "data" / "train.csv").write_bytes(header.encode("utf-8") + b"\n" + row + b"\n")

    assert main(["train", "--config", str(config), "-q"]) == 3
    lines = _error_lines(capsys)
    assert len(lines) == 1
    assert "train.csv" in lines[0] and "UTF-8" in lines[0]


def test_corrupt_wrapper_exits_with_data_code(pipeline, tmp_path, capsys):
    config = _copy_config(pipeline, tmp_path)
    shutil.copytree(pipeline["models"], tmp_path / "models")
    (tmp_path / "models" / "wrappers" / "L-baseline.json").write_text("{", encoding="utf-8")

    assert main(["evaluate", "--config", str(config), "-q"]) == 3
    lines = _error_lines(capsys)
    assert len(lines) == 1
    assert "L-baseline.json" in lines[0] and "invalid JSON" in lines[0]


def test_unknown_sample_and_cell_type(pipeline, tmp_path, capsys):
    config = str(pipeline["config"])

    assert main(["plot-gating", "--config", config, "--sample", "S9999", "--out", str(tmp_path), "-q"]) == 3
    assert _error_lines(capsys) == ["uwrap: error: Unknown sample: S9999"]
    args = ["plot-gating", "--config", config, "--sample", "S0004", "--cell-type", "XX", "--out", str(tmp_path), "-q"]
    assert main(args) == 1
    args = ["dump-factors", "--config", config, "--sample", "S0004", "--pair", "0,9", "--out", str(tmp_path), "-q"]
    assert main(args) == 3


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["plot-gating"],
        ["plot-gating", "--sample", "S1", "--pair", "a,b"],
    ],
)
def test_usage_errors_exit_with_config_code(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1
    assert "usage:" in capsys.readouterr().err
