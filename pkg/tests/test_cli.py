import json

import pytest

from eemgrid import cli
from eemgrid.experiment import config_from_dict, preset
from eemgrid.feeder import sce56_document

SMALL = {
    "name": "small",
    "preset": "fig2",
    "scenario": {"n_slots": 6, "load_fraction": 0.4, "gen_fraction": 0.8,
                 "noise_std_fraction": 0.05},
    "controllers": [{"mode": "eem", "model": "bfm", "step_size": 0.1},
                    {"mode": "dem", "model": "bfm"},
                    {"mode": "nocontrol"}],
}


def _feeder_file(tmp_path, doc):
    path = tmp_path / "feeder.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_validate_builtin(capsys):
    assert cli.main(["validate-feeder"]) == 0
    out = capsys.readouterr().out
    assert "buses 56" in out
    assert "PV buses 2" in out
    assert "capacitor buses 4" in out
    assert "SUSPECT bus 3" in out


def test_validate_cycle(tmp_path, capsys):
    doc = sce56_document()
    doc["lines"].append({"from": 5, "to": 9, "r_ohm": 0.1, "x_ohm": 0.1})
    assert cli.main(["validate-feeder", _feeder_file(tmp_path, doc)]) == 1
    assert "INVALID" in capsys.readouterr().out


def test_validate_overload_below_rating(tmp_path, capsys):
    doc = sce56_document()
    pv = next(b for b in doc["buses"] if b["s_mva"] > 0)
    pv["s_bar_mva"] = 0.5 * pv["s_mva"]
    assert cli.main(["validate-feeder", _feeder_file(tmp_path, doc)]) == 1
    assert str(pv["id"]) in capsys.readouterr().out


def test_validate_missing_file(tmp_path):
    assert cli.main(["validate-feeder", str(tmp_path / "nope.json")]) == 1


def test_compare_needs_two_controllers(tmp_path, capsys):
    cfg = dict(SMALL, controllers=[{"mode": "dem"}])
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["compare", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "usage" in capsys.readouterr().err


def test_config_and_preset_exclusive(capsys):
    assert cli.main(["run", "--config", "x.json", "--preset", "fig2"]) == 1


def test_unknown_preset_rejected():
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--preset", "nope"])
    assert exc.value.code == 2


def test_config_parse_overlay():
    cfg = config_from_dict(SMALL)
    assert cfg.name == "small"
    assert cfg.scenario.n_slots == 6
    assert [c.label for c in cfg.controllers] == ["EEM-BFM(mu=0.1)", "DEM-BFM", "NoControl"]
    # the feeder comes from the preset, with the bus 3 correction
    assert cfg.feeder == preset("fig2").feeder
    with pytest.raises(ValueError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        config_from_dict({"scenario": {"kind": "synthetic", "n_slot": 3}})


def test_config_round_trip():
    cfg = preset("fig3")
    doc = cfg.to_dict()
    doc["scenario"].pop("kind")
    again = config_from_dict(doc)
    assert again.to_dict() == cfg.to_dict()


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def test_run_is_deterministic(tmp_path, small_config, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["run", "--config", small_config, "--seed", "3", "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert "config.json" in names and "table.json" in names
    csvs = [n for n in names if n.endswith(".csv")]
    assert len(csvs) == 3
    for n in csvs:
        assert (outs[0] / n).read_text() == (outs[1] / n).read_text()
    table = json.loads((outs[0] / "table.json").read_text())
    assert [r["controller"] for r in table] == ["EEM-BFM(mu=0.1)", "DEM-BFM", "NoControl"]
    assert json.loads((outs[0] / "config.json").read_text())["seed"] == 3
    assert "final $/h" in capsys.readouterr().out


def test_gen_scenario(tmp_path, small_config, capsys):
    out = tmp_path / "trace"
    assert cli.main(["gen-scenario", "--config", small_config, "--out", str(out)]) == 0
    load = (out / "load.csv").read_text().splitlines()
    assert len(load) == 1 + 6
    assert (out / "solar.csv").exists() and (out / "mapping.csv").exists()
