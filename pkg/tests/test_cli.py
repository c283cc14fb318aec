import hashlib
import json

import pytest

from malrisk import __version__
from malrisk.cli import main

SMALL = {"n_devices": 600, "infection_rate": 0.03, "companion_lift": 8.0}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.json"
    cfg.write_text(json.dumps({**SMALL, "seed": 21}))
    assert main(["synth", "--config", str(cfg), "--out-dir", str(root / "D"), "--out", str(root / "synth.json")]) == 0
    return root


def files(root):
    d = root / "D"
    return {"devices": str(d / "devices.csv"), "meta": str(d / "device_meta.csv"), "malware": str(d / "malware.csv")}


def run_json(argv, out):
    code = main([*argv, "--out", str(out)])
    assert code == 0
    return json.loads(out.read_text())


def sha1(path):
    return hashlib.sha1(open(path, "rb").read()).hexdigest()


def test_label_equals_ground_truth(dataset, tmp_path):
    f = files(dataset)
    report = run_json(["label", "--devices", f["devices"], "--malware", f["malware"]], tmp_path / "l.json")
    truth = json.loads((dataset / "D" / "truth.json").read_text())
    assert report["labels"] == truth["labels"]


def test_match_report_and_manifest(dataset, tmp_path):
    f = files(dataset)
    excl = tmp_path / "e.csv"
    excl.write_text("dc,p\n")
    report = run_json(
        ["match", "--devices", f["devices"], "--malware", f["malware"], "--exclusions", str(excl)], tmp_path / "r.json"
    )
    inc = report["incidence"]
    assert {"n_c", "n_p", "n_inf_dc", "n_cpv", "n_inf_dcpv", "total_devices"} <= set(inc)
    m = report["manifest"]
    assert m["command"] == "match"
    assert m["tool_version"] == __version__
    assert m["inputs"] == {f["devices"]: sha1(f["devices"]), f["malware"]: sha1(f["malware"]), str(excl): sha1(excl)}
    assert m["config"]["exclusions"] == str(excl)


def test_other_commands(dataset, tmp_path):
    f = files(dataset)
    base = ["--devices", f["devices"], "--device-meta", f["meta"]]
    summary = run_json(["summarize", *base], tmp_path / "s.json")["summary"]
    assert summary["distinct_devices"] == SMALL["n_devices"]
    stats = run_json(["stats", "--metric", "battery", *base, "--malware", f["malware"]], tmp_path / "b.json")
    assert stats["panels"]["all/raw"]["Z"] < 0
    model = run_json(["train", *base, "--malware", f["malware"]], tmp_path / "m.json")["model"]
    assert model["classes"] == ["clean", "infected"]
    tti = run_json(["tti", *base, "--malware", f["malware"]], tmp_path / "t.json")
    assert len(tti["devices"]) == SMALL["n_devices"]


def test_evaluate_and_seed_fallback(dataset, tmp_path, monkeypatch):
    f = files(dataset)
    argv = ["evaluate", "--protocol", "new", "--devices", f["devices"], "--malware", f["malware"], "--repeats", "2"]
    a = run_json([*argv, "--seed", "8"], tmp_path / "a.json")
    assert a["manifest"]["seed"] == 8
    assert a["evaluation"]["config"]["repeats"] == 2
    monkeypatch.setenv("IR_SEED", "8")
    run_json(argv, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_reallife_needs_two_sets(dataset, capsys):
    f = files(dataset)
    code = main(["evaluate", "--protocol", "reallife", "--devices", f["devices"], "--malware", f["malware"]])
    assert code == 1


def test_exit_codes(tmp_path, capsys):
    assert main(["summarize", "--devices", str(tmp_path / "missing.csv")]) == 2
    assert "missing.csv" in capsys.readouterr().err
    assert main(["summarize", "--devices", "x.csv", "--bogus"]) == 1
    assert main([]) == 1
    assert main(["evaluate", "--protocol", "nope", "--devices", "x"]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("device,dc,p,v\nnot-hex,x,y,z\n")
    assert main(["summarize", "--devices", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    bad_cfg = tmp_path / "c.json"
    bad_cfg.write_text('{"n_devices": -1}')
    assert main(["synth", "--config", str(bad_cfg), "--out-dir", str(tmp_path / "o")]) == 2


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n_devices": 20, "seed": 5}))
    monkeypatch.setenv("IR_SEED", "9")
    from_config = run_json(["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "a")], tmp_path / "a.json")
    assert from_config["manifest"]["seed"] == 5
    flag = run_json(["synth", "--config", str(cfg), "--seed", "3", "--out-dir", str(tmp_path / "b")], tmp_path / "b.json")
    assert flag["manifest"]["seed"] == 3
    env = run_json(["synth", "--out-dir", str(tmp_path / "c")], tmp_path / "c.json")
    assert env["manifest"]["seed"] == 9
    cfg.write_text(json.dumps({"folds": 2, "seed": 1, "extra": True}))
    assert main(["evaluate", "--protocol", "cv", "--devices", "x", "--malware", "y", "--config", str(cfg)]) == 2
