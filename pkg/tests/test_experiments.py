import json

import pytest

from larimove.cli import main
from larimove.experiments import (
    PRESETS,
    RECIPES,
    config_from_dict,
    preset_config,
    run_experiment,
    with_overrides,
)


def test_presets_cover_every_recipe():
    assert set(PRESETS) == set(RECIPES)
    assert preset_config("sim-study", "full", 1).replicates == 150
    assert preset_config("pls-study", "desk", 1).replicates == 10
    with pytest.raises(ValueError):
        preset_config("sim-study", "huge", 1)
    with pytest.raises(ValueError):
        config_from_dict({"recipe": "sim-study", "seed": 1, "colour": "red"})


def _tiny(tmp_path, name="a"):
    return preset_config("sim-study", "desk", 5, replicates=1, adapt_iters=200, sample_iters=200,
                         output_dir=str(tmp_path / name))


def test_single_replicate_report(tmp_path):
    cfg = _tiny(tmp_path)
    summary = run_experiment(cfg)
    assert summary["all"]["lari"]["count"] == 1 and summary["all"]["regular"]["count"] == 1
    rows = (tmp_path / "a" / "fits.csv").read_text().splitlines()
    assert len(rows) == 3
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["status"] == "complete" and man["config"]["seed"] == 5


def test_manifest_round_trip_is_byte_identical(tmp_path):
    run_experiment(_tiny(tmp_path))
    man = tmp_path / "a" / "manifest.json"
    again = with_overrides(config_from_dict(json.loads(man.read_text())), output_dir=str(tmp_path / "b"))
    run_experiment(again)
    for f in ("fits.csv", "paths.csv", "report.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_cli_runs_from_manifest(tmp_path):
    run_experiment(_tiny(tmp_path))
    assert main(["run-experiment", "--manifest", str(tmp_path / "a" / "manifest.json"),
                 "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "c" / "report.json").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_run_leaves_partial_manifest(tmp_path):
    cfg = preset_config("pls-study", "desk", 1, replicates=1, n_steps=20, n_paths=1,
                        holdout_fraction=0.99, output_dir=str(tmp_path / "f"))
    with pytest.raises(Exception):
        run_experiment(cfg)
    man = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert man["status"] == "failed" and man["failed_stage"] == "pls-study"


def test_no_infill_recipe_small(tmp_path):
    cfg = preset_config("no-infill", "desk", 2, replicates=5, output_dir=str(tmp_path / "n"))
    summary = run_experiment(cfg)
    assert (tmp_path / "n" / "report.json").exists()
    assert summary
