"""End-to-end command-line checks: exit codes and exported artifacts."""

from types import SimpleNamespace

import pytest

from pollisim.cli import _load_config, main
from pollisim.config import PipelineConfig, save_config


@pytest.fixture(scope="module")
def trained_out(tmp_path_factory):
    """One shared output directory with a trained model bundle in it."""
    out = tmp_path_factory.mktemp("cli")
    assert main(["train", "--out", str(out)]) == 0
    return out


def test_train_exports_bundle_and_config(trained_out):
    for name in ("color_model.bin", "lut.bin", "patch_classifier.bin",
                 "orientation_classifier.bin", "config.yaml"):
        assert (trained_out / name).exists()


def test_lut_spot_check_agrees(trained_out, capsys):
    assert main(["lut", "--out", str(trained_out)]) == 0
    assert "0/10000 spot-check mismatches" in capsys.readouterr().out


def test_map_exports_tracks_and_voxels(trained_out, capsys):
    rc = main(["map", "--out", str(trained_out), "--scenario", "2",
               "--seed", "3"])
    assert rc == 0
    assert "confirmed tracks" in capsys.readouterr().out
    lines = (trained_out / "flower_map.csv").read_text().splitlines()
    assert len(lines) >= 2          # header plus at least one track
    voxels = (trained_out / "occupied_voxels.csv").read_text().splitlines()
    assert voxels[0] == "x,y,z"
    assert len(voxels) > 10


def test_run_writes_trial_telemetry(trained_out):
    rc = main(["run", "--out", str(trained_out), "--scenario", "1",
               "--seed", "0"])
    assert rc == 0
    for name in ("trials.csv", "attempts.csv", "events.txt"):
        assert (trained_out / name).exists()
    events = (trained_out / "events.txt").read_text()
    assert "map_workspace" in events
    assert "done" in events


def test_bench_and_report_roundtrip(trained_out, capsys):
    rc = main(["bench", "--out", str(trained_out), "--scenario", "3",
               "--trials", "1", "--seed", "0"])
    assert rc == 0
    report = (trained_out / "report.csv").read_text().splitlines()
    assert len(report) == 3         # header, scenario 3, overall
    assert report[1].startswith("3,")
    assert report[2].startswith("overall,")
    capsys.readouterr()

    assert main(["report", "--out", str(trained_out)]) == 0
    out = capsys.readouterr().out
    assert "overall" in out
    assert (trained_out / "report.txt").read_text().startswith("scenario")


def test_bad_scenario_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["map", "--scenario", "9", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_missing_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_report_without_trials_csv_fails_cleanly(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key_fails_cleanly(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("not_a_real_option: 3\n")
    assert main(["map", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "not_a_real_option" in capsys.readouterr().err


def test_noise_flag_overrides_config_file(tmp_path):
    cfg_file = tmp_path / "config.yaml"
    save_config(PipelineConfig(noise="low", sweep_azimuth_count=3), cfg_file)

    loaded = _load_config(SimpleNamespace(config=str(cfg_file), noise=None))
    assert loaded.noise == "low"
    assert loaded.sweep_azimuth_count == 3

    overridden = _load_config(SimpleNamespace(config=str(cfg_file),
                                              noise="off"))
    assert overridden.noise == "off"
