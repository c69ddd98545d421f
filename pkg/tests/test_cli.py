import json

import pytest

from codedoffload.cli import main
from codedoffload.config import RunConfig, dump_config, load_config, parse_config_text
from codedoffload.errors import ConfigError
from codedoffload.experiments import cmd_bench, stable_json


def test_parse_config_text():
    vals = parse_config_text("# comment\nk = 3\nm=2  # trailing\nintegrity=on\nworkers=auto\nprime=large\n")
    assert vals == {"k": 3, "m": 2, "integrity": True, "workers": None, "prime": "large"}


@pytest.mark.parametrize("text", ["k", "bogus=1", "k=two", "integrity=maybe"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("k=3\nseed=4\n")
    cfg = load_config(path, {"seed": 9, "m": None})
    assert (cfg.k, cfg.seed, cfg.m) == (3, 9, 1)


def test_dump_roundtrip(tmp_path):
    cfg = RunConfig(k=4, m=2, integrity=True)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_bad_prime():
    with pytest.raises(ConfigError):
        RunConfig(prime="small")
    with pytest.raises(ValueError):
        RunConfig(frac_bits=13)


def _run(args, tmp_path, capsys):
    code = main(args + ["--out", str(tmp_path)])
    out = capsys.readouterr().out
    return code, out


def test_codec_check_cli(tmp_path, capsys):
    code, out = _run(["codec-check", "--instances", "30"], tmp_path, capsys)
    assert code == 0 and out.startswith("PASS codec-check")
    rep = json.loads((tmp_path / "codec-check.json").read_text())
    assert rep["schema_version"] == 1 and rep["results"]["roundtrip_failures"] == 0


def test_codec_check_broken_constraint_fails(tmp_path, capsys):
    code, out = _run(["codec-check", "--instances", "10", "--break-constraint"], tmp_path, capsys)
    rep = json.loads((tmp_path / "codec-check.json").read_text())
    assert code == 1 and rep["results"]["trace_failures"] == 10


def test_integrity_audit_cli(tmp_path, capsys):
    code, _ = _run(["integrity-audit", "--trials", "20", "--k", "3", "--m", "2"], tmp_path, capsys)
    rep = json.loads((tmp_path / "integrity-audit.json").read_text())
    assert code == 0 and rep["results"]["detection_rate"] == 1.0
    assert rep["config"]["k"] == 3


def test_privacy_audit_cli(tmp_path, capsys):
    code, _ = _run(["privacy-audit", "--samples", "5000", "--set", "mi_primes=5"], tmp_path, capsys)
    rep = json.loads((tmp_path / "privacy-audit.json").read_text())
    assert code == 0
    assert all(r["mi_bits_up_to_M"] == 0.0 for r in rep["results"]["mutual_information"])


def test_train_epochs_zero(tmp_path, capsys):
    code, out = _run(["train", "--epochs", "0"], tmp_path, capsys)
    assert code == 0
    rows = json.loads((tmp_path / "metrics.json").read_text())
    assert rows == [{**rows[0]}] and rows[0]["loss_enc"] == rows[0]["loss_plain"]
    assert (tmp_path / "metrics.csv").read_text().startswith("epoch,loss_enc,loss_plain")


def test_train_faulty_with_integrity_exits_nonzero(tmp_path, capsys):
    code, out = _run(["train", "--epochs", "1", "--integrity", "on", "--faulty", "1",
                      "--set", "n_points=40"], tmp_path, capsys)
    rep = json.loads((tmp_path / "train.json").read_text())
    assert code == 1 and rep["results"]["integrity_violations"] > 0
    assert "violations=" in out


def test_insecure_dump_writes_coefficients(tmp_path, capsys):
    code, _ = _run(["train", "--epochs", "1", "--insecure-dump", "--set", "n_points=10"], tmp_path, capsys)
    names = sorted(p.name for p in (tmp_path / "coeffs").iterdir())
    assert code == 0 and "coeffs_b0_l0_A.csv" in names and "coeffs_b0_l0_Gamma.csv" in names
    text = (tmp_path / "coeffs" / "coeffs_b0_l0_A.csv").read_text().splitlines()
    assert text[0] == "matrix,batch_id,layer_id" and text[1] == "A,0,0"


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--k", "3", "--out", str(tmp_path)]) == 2  # 10 is not a multiple of 3
    assert main(["codec-check", "--set", "nonsense=1", "--out", str(tmp_path)]) == 2
    assert main(["train", "--dataset", "spirals", "--epochs", "0", "--out", str(tmp_path)]) == 2


def test_bench_fractions_sum_to_one():
    rep = cmd_bench(RunConfig(reps=3, dim=4))
    for frac in rep["volatile"]["fractions"].values():
        stages = [v for k, v in frac.items() if k != "encode_plus_decode"]
        assert sum(stages) == pytest.approx(1.0, abs=0.01)
    assert sorted(rep["volatile"]["fractions"]) == ["1", "2", "4"]


def test_reports_deterministic(tmp_path):
    a = cmd_bench(RunConfig(reps=2, dim=4))
    b = cmd_bench(RunConfig(reps=2, dim=4))
    assert stable_json(a) == stable_json(b)
    assert "timestamp" in a["volatile"]
