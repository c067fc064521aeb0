import json
from pathlib import Path

import numpy as np
import pytest

from lipcert import cli, modelio
from lipcert.training import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def run(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)

    def go(*argv):
        code = cli.main([str(a) for a in argv])
        out = capsys.readouterr()
        return code, out.out, out.err

    return go


def test_runconfig_roundtrip():
    raw = json.loads((CONFIGS / "or_d2.json").read_text())
    cfg = cli.RunConfig.from_dict(raw)
    again = cli.RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


def test_runconfig_unknown_keys():
    with pytest.raises(ConfigError, match="'model.widht'"):
        cli.RunConfig.from_dict({"model": {"widht": 3}})
    with pytest.raises(ConfigError, match="'modle'"):
        cli.RunConfig.from_dict({"modle": {}})
    with pytest.raises(ConfigError, match="architecture"):
        cli.RunConfig.from_dict({"model": {"architecture": "resnet"}})


def test_train_or_toy_is_deterministic(run, tmp_path):
    cfg = json.loads((CONFIGS / "or_d2.json").read_text())
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, _ = run("train", "--config", "c.json")
    assert code == 0
    acc = float(out.split("clean=")[1].split()[0])
    assert acc >= 0.99
    first = (tmp_path / "or_d2.lipn").read_bytes()
    assert (tmp_path / "or_d2_metrics.csv").read_text().startswith("epoch,loss,clean_acc")
    assert run("train", "--config", "c.json")[0] == 0
    assert (tmp_path / "or_d2.lipn").read_bytes() == first
    code, out, _ = run("certify", "--model", "or_d2.lipn", "--boolean", "or", "--d", 2, "--eps", 0.4,
                       "--out", "rep.csv")
    assert code == 0 and "clean=1.0000" in out
    assert (tmp_path / "rep.csv").exists()


def test_seed_flag_changes_model(run, tmp_path):
    cfg = json.loads((CONFIGS / "or_d2.json").read_text())
    cfg["train"]["epochs"] = 3
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    run("--seed", 1, "train", "--config", "c.json")
    a = (tmp_path / "or_d2.lipn").read_bytes()
    run("--seed", 2, "train", "--config", "c.json")
    assert (tmp_path / "or_d2.lipn").read_bytes() != a


def test_train_usage_errors(run, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"train": {"epochz": 3}}))
    code, _, err = run("train", "--config", "bad.json")
    assert code == 1 and "epochz" in err
    assert run("train", "--config", "missing.json")[0] == 1
    (tmp_path / "nojson.json").write_text("{")
    assert run("train", "--config", "nojson.json")[0] == 1
    assert run("frobnicate")[0] == 1
    assert run()[0] == 1


def test_certify_nn_boolean(run):
    code, out, _ = run("construct", "--kind", "nn", "--builtin", "majority", "--d", 3, "--out", "nn.lipn")
    assert code == 0
    code, out, _ = run("certify", "--model", "nn.lipn", "--boolean", "majority", "--d", 3, "--eps", 0.49)
    assert code == 0 and "certified=1.0000" in out
    code, out, _ = run("certify", "--model", "nn.lipn", "--boolean", "majority", "--d", 3, "--eps", 0)
    assert out.strip() == "clean=1.0000 pgd=1.0000 certified=1.0000"
    code, out, _ = run("attack", "--model", "nn.lipn", "--boolean", "majority", "--d", 3, "--eps", 0.7,
                       "--steps", 50)
    assert code == 0
    vals = dict(kv.split("=") for kv in out.split())
    assert float(vals["certified"]) <= float(vals["pgd"]) <= float(vals["clean"])
    assert run("certify", "--model", "nn.lipn", "--boolean", "or", "--d", 3, "--eps", -1)[0] == 1
    assert run("certify", "--model", "none.lipn", "--boolean", "or", "--d", 3, "--eps", 0.1)[0] == 1


def test_certify_csv_dataset(run, tmp_path):
    from lipcert.data import gen_boolean_dataset
    gen_boolean_dataset("xor", d=3).to_csv(tmp_path / "x.csv")
    run("construct", "--kind", "boolean", "--builtin", "xor", "--d", 3, "--out", "b.lipn")
    run("construct", "--kind", "nn", "--builtin", "xor", "--d", 3, "--out", "nn.lipn")
    code, out, _ = run("certify", "--model", "nn.lipn", "--data", "x.csv", "--eps", 0.3)
    assert code == 0 and "certified=1.0000" in out


def test_construct_kinds(run, tmp_path):
    code, out, _ = run("construct", "--kind", "boolean", "--builtin", "xor", "--d", 3, "--out", "x.lipn")
    assert code == 0 and "verified on 8/8 inputs" in out
    net = modelio.load(tmp_path / "x.lipn")
    assert net.output_dim == 1
    code, out, _ = run("construct", "--kind", "orderstat", "--d", 4, "--k", 2)
    assert code == 0 and "verified on 10000 samples" in out
    code, out, _ = run("construct", "--kind", "sortingnet", "--d", 8)
    assert code == 0 and "depth 6, 19 comparators, 0-1 verified" in out
    for argv in (("--kind", "tight-symmetric", "--builtin", "or", "--d", 5),
                 ("--kind", "tight-linear", "--d", 5, "--k", 3),
                 ("--kind", "maxmin-boolean", "--builtin", "parity", "--d", 4),
                 ("--kind", "maxmin-orderstat", "--d", 5, "--k", 5)):
        assert run("construct", *argv)[0] == 0
    (tmp_path / "t.txt").write_text("0110")
    assert run("construct", "--kind", "boolean", "--table", "t.txt")[0] == 0


def test_construct_convert(run, tmp_path):
    from lipcert.network import build_maxmin
    src = build_maxmin(3, [4], 2, seed=0)
    modelio.save(src, tmp_path / "gs.lipn")
    code, out, _ = run("construct", "--kind", "convert", "--source", "gs.lipn", "--bound", 2, "--out", "c.lipn")
    assert code == 0 and "agreement" in out
    X = np.random.default_rng(0).uniform(-2, 2, (100, 3))
    assert np.abs(modelio.load(tmp_path / "c.lipn")(X) - src(X)).max() < 1e-9


def test_construct_usage_errors(run):
    assert run("construct", "--kind", "bogus")[0] == 1
    assert run("construct", "--kind", "orderstat", "--d", 3, "--k", 5)[0] == 1
    assert run("construct", "--kind", "boolean")[0] == 1
    assert run("construct", "--kind", "boolean", "--builtin", "nope", "--d", 3)[0] == 1


def test_verify_theory_props(run):
    code, out, _ = run("verify-theory", "--suite", "props")
    assert code == 0
    assert "checks passed" in out and "FAIL" not in out


def test_verify_theory_mutation(run, monkeypatch):
    from lipcert.constructions import linf_nets
    monkeypatch.setattr(linf_nets, "NEGATED_LITERAL_WEIGHT", -2.0)
    code, out, _ = run("verify-theory", "--suite", "props")
    assert code == 3
    assert "FAIL boolean_to_linf_net" in out
