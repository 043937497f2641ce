import csv

import pytest

from mcpd.cli import load_run_config, run
from mcpd.errors import SchemaError

FAST = ["--epochs", "2"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["gen-data", "--n", "120", "--positive-rate", "0.2", "--seed", "3", "--out", str(d / "c.jsonl")]) == 0
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_data_seed_default_is_zero(tmp_path):
    assert run(["gen-data", "--n", "50", "--out", str(tmp_path / "a.jsonl")]) == 0
    assert run(["gen-data", "--n", "50", "--seed", "0", "--out", str(tmp_path / "b.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_label(data, tmp_path):
    out = tmp_path / "labels.csv"
    assert run(["label", "--input", str(data / "c.jsonl"), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["student_id", "dropout", "academic_crisis", "behavioral_crisis", "time_crisis"]
    assert len(rows) == 121


def test_train_predict_with_toml(data, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f"""
input = "{data / 'c.jsonl'}"
checkpoint = "{tmp_path / 'model.json'}"
label_target = "academic"
seed = 1

[model]
epochs = 2
d_text = 16

[model.cpd]
hazard_lambda = 8.0
""")
    assert run(["train", "--config", str(cfg)]) == 0
    report = (tmp_path / "model.report.json").read_text()
    assert '"label_target": "academic"' in report and '"seconds"' not in report
    out = tmp_path / "pred.csv"
    assert run(["predict", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == ["student_id", "risk_probability"] + [f"p_{t}" for t in range(1, 7)]
    assert len(rows) == 121
    assert abs(float(rows[1][2]) - 1 / 8) < 1e-12


def test_evaluate_three_rows_and_sweep(data, tmp_path):
    out, sweep = tmp_path / "cmp.csv", tmp_path / "sweep.csv"
    assert run(["evaluate", "--input", str(data / "c.jsonl"), "--out", str(out), "--sweep", "0.3,0.5",
                "--sweep-out", str(sweep)] + FAST) == 0
    rows = read_csv(out)
    assert rows[0] == ["model", "accuracy", "precision", "recall", "f1", "seed"]
    assert [r[0] for r in rows[1:]] == ["MCPD", "ablation", "logistic"]
    assert len(read_csv(sweep)) == 7


def test_report_with_cpd(data, tmp_path):
    out = tmp_path / "rep"
    assert run(["report", "--input", str(data / "c.jsonl"), "--out", str(out), "--cpd"]) == 0
    rows = read_csv(out / "cpd.csv")
    assert rows[0] == ["student_id", "period_index", "changepoint_probability", "attention_weight"]
    assert len(rows) == 1 + 120 * 6
    assert abs(float(rows[1][3]) - (1 + float(rows[1][2]))) < 1e-15
    assert read_csv(out / "difference.csv")[0] == ["group", "event_kind", "mean", "stddev"]
    assert (out / "exclusive_tokens.txt").exists()


def test_pipeline_byte_identical(data, tmp_path):
    def once(tag):
        d = tmp_path / tag
        d.mkdir()
        run(["gen-data", "--n", "80", "--positive-rate", "0.25", "--out", str(d / "c.jsonl")])
        run(["train", "--input", str(d / "c.jsonl"), "--checkpoint", str(d / "m.json")] + FAST)
        run(["predict", "--input", str(d / "c.jsonl"), "--checkpoint", str(d / "m.json"), "--out", str(d / "p.csv")])
        run(["evaluate", "--input", str(d / "c.jsonl"), "--out", str(d / "e.csv")] + FAST)
        run(["report", "--input", str(d / "c.jsonl"), "--out", str(d / "r"), "--cpd"])
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    a, b = once("a"), once("b")
    assert len(a) == 8 and a == b


def test_usage_errors_exit_1(capsys, data):
    assert run([]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["train", "--input", str(data / "c.jsonl")]) == 1  # no checkpoint path
    assert run(["train", "--input", str(data / "c.jsonl"), "--checkpoint", "x", "--test-fraction", "1.5"]) == 1


def test_missing_checkpoint_exit_2(capsys, data, tmp_path):
    missing = tmp_path / "nope.json"
    assert run(["predict", "--input", str(data / "c.jsonl"), "--checkpoint", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_input_exit_2(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert run(["label", "--input", str(bad)]) == 2
    assert run(["label", "--input", str(tmp_path / "absent.jsonl")]) == 2


def test_training_error_exit_3(tmp_path):
    path = tmp_path / "tiny.jsonl"
    run(["gen-data", "--n", "40", "--out", str(path)])
    assert run(["train", "--input", str(path), "--checkpoint", str(tmp_path / "m.json"),
                "--test-fraction", "0.6"]) == 3


def test_config_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_run_config(str(tmp_path / "missing.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 'red'\n")
    with pytest.raises(SchemaError, match="colour"):
        load_run_config(str(bad))
    assert run(["label", "--config", str(bad)]) == 2


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("seed = 4\n[synthetic]\nn_students = 60\n")
    run(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a.jsonl")])
    run(["gen-data", "--config", str(cfg), "--n", "70", "--out", str(tmp_path / "b.jsonl")])
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 60
    assert len((tmp_path / "b.jsonl").read_text().splitlines()) == 70
