"""Command-line interface: subcommands, config parsing, exit codes."""

import json

import pytest

from memrel.cli import main, read_run_config, UsageError


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main(["synth-data", str(out), "--num-train", "60", "--num-dev", "20",
               "--num-test", "20", "--relations", "3", "--seed", "1"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def base_config(data_dir, tmp_path_factory):
    cfg_dir = tmp_path_factory.mktemp("cfg")
    path = cfg_dir / "run.cfg"
    path.write_text(
        "# tiny run\n"
        f"train_path = {data_dir}/train.jsonl\n"
        f"dev_path = {data_dir}/dev.jsonl\n"
        "epochs = 2\n"
        "batch_size = 8\n"
        "d_w = 8\n"
        "d_s = 8\n"
        "subword_symbol_dim = 4\n"
        "kernel_widths = 1,2\n"
        "hidden = 16\n"
        "layers = 1\n"
        "pad_len = 10\n"
        "bpe_merges = 20\n"
        "response = value\n"
        "attention = dot\n")
    return path


@pytest.fixture(scope="module")
def trained(base_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    ckpt = out / "model.npz"
    report = out / "report.jsonl"
    rc = main(["train", "--config", str(base_config),
               "--set", f"checkpoint={ckpt}", "--set", f"report={report}"])
    assert rc == 0
    return ckpt, report


def test_synth_data_outputs(data_dir):
    lines = (data_dir / "train.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["label_space"]["relations"] == ["rel_0", "rel_1", "rel_2"]
    assert len(lines) == 61  # header + 60 instances


def test_synth_data_is_reproducible(data_dir, tmp_path):
    rc = main(["synth-data", str(tmp_path), "--num-train", "60", "--num-dev", "20",
               "--num-test", "20", "--relations", "3", "--seed", "1"])
    assert rc == 0
    for name in ("train", "dev", "test"):
        assert (tmp_path / f"{name}.jsonl").read_bytes() == \
               (data_dir / f"{name}.jsonl").read_bytes()


def test_train_writes_report_and_checkpoint(trained):
    ckpt, report = trained
    assert ckpt.exists()
    rows = [json.loads(l) for l in report.read_text().splitlines()]
    assert len(rows) == 3  # 2 epochs + summary
    assert rows[-1]["summary"] is True
    assert {"epoch", "train_loss", "dev_accuracy"} <= set(rows[0])


def test_eval_prints_four_decimal_accuracy(trained, data_dir, capsys):
    ckpt, _ = trained
    rc = main(["eval", str(ckpt), str(data_dir / "test.jsonl")])
    assert rc == 0
    out = capsys.readouterr().out
    first = out.splitlines()[0]
    assert first.startswith("accuracy ")
    value = first.split()[1]
    assert len(value.split(".")[1]) == 4
    assert 0.0 <= float(value) <= 1.0
    assert "confusion:" in out


def test_predict_emits_ranked_json(trained, data_dir, capsys):
    ckpt, _ = trained
    rc = main(["predict", str(ckpt), str(data_dir / "test.jsonl"), "--top-k", "1"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 20
    rec = json.loads(lines[0])
    assert len(rec["ranking"]) == 3
    assert len(rec["retrieved"]) == 1


def test_inspect_memory_lists_retrievals(trained, data_dir, capsys):
    ckpt, _ = trained
    rc = main(["inspect-memory", str(ckpt), str(data_dir / "test.jsonl"),
               "--top-k", "2"])
    assert rc == 0
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[0])
    assert set(rec) == {"prediction", "gold", "arg1", "arg2", "retrieved"}
    assert len(rec["retrieved"]) == 2
    assert all(r["relation"].startswith("rel_") for r in rec["retrieved"])


def test_inspect_memory_clamps_top_k(trained, data_dir, capsys):
    ckpt, _ = trained
    rc = main(["inspect-memory", str(ckpt), str(data_dir / "test.jsonl"),
               "--top-k", "100000"])
    assert rc == 0
    assert "clamped" in capsys.readouterr().err


def test_grid_emits_five_rows(base_config, tmp_path, capsys):
    report = tmp_path / "grid.jsonl"
    rc = main(["grid", "--config", str(base_config), "--set", "epochs=1",
               "--set", f"report={report}"])
    assert rc == 0
    rows = [json.loads(l) for l in report.read_text().splitlines()]
    assert [r["model"] for r in rows] == ["baseline", "D+K", "D+V", "B+K", "B+V"]
    assert all(0.0 <= r["test_accuracy"] <= 1.0 for r in rows)


# ---------------------------------------------------------------------------
# config parsing and exit codes


def test_config_overrides_win(base_config):
    values = read_run_config(str(base_config), ["epochs=9", "lam=0.5"])
    assert values["epochs"] == 9
    assert values["lam"] == 0.5
    assert values["kernel_widths"] == (1, 2)


def test_unknown_config_key_is_usage_error(base_config):
    with pytest.raises(UsageError, match="unknown config key"):
        read_run_config(str(base_config), ["no_such_key=1"])


def test_missing_train_path_exits_1_before_compute(capsys):
    rc = main(["train", "--set", "epochs=1"])
    assert rc == 1
    assert "train_path" in capsys.readouterr().err


def test_nonexistent_train_file_exits_2(capsys):
    rc = main(["train", "--set", "train_path=/no/such/file.jsonl",
               "--set", "dev_path=/no/such/dev.jsonl"])
    assert rc == 2


def test_empty_instance_file_exits_2(trained, tmp_path, capsys):
    ckpt, _ = trained
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    rc = main(["eval", str(ckpt), str(empty)])
    assert rc == 2
    assert "no instances" in capsys.readouterr().err


def test_invalid_config_value_exits_1(base_config, capsys):
    rc = main(["train", "--config", str(base_config), "--set", "lam=2.0"])
    assert rc == 1


def test_bad_subcommand_exits_1():
    assert main(["no-such-command"]) == 1
