import csv
import io
import json

import numpy as np
import pytest

from mhelab import cli
from mhelab.checkpoint import load_checkpoint


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


SUBCOMMANDS = ["params", "memory", "sweep", "train", "eval", "gradcheck", "metrics"]


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help(capsys, sub):
    code, out, _ = run(capsys, sub, "--help")
    assert code == 0 and "--seed" in out and "--format" in out


def test_params_headline_numbers(capsys):
    code, out, _ = run(capsys, "params", "mha", "sha", "--layers", "12", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    got = {(r["variant"], r["convention"]): int(r["params"]) for r in rows}
    assert got[("mha", "experiment")] == 28_311_552
    assert got[("sha", "table4")] == 1_769_472
    assert code == 0


def test_params_json_lines(capsys):
    _, out, _ = run(capsys, "params", "mhe-add", "--format", "json-lines", "--convention", "experiment")
    rec = json.loads(out.strip())
    assert rec["variant"] == "mhe-add" and rec["params"] == 737_280 + 2 * 3 * 12 * 64 // 2


def test_memory_rows(capsys):
    _, out, _ = run(capsys, "memory", "sha", "mha", "--format", "csv")
    rows = {r["variant"]: r for r in csv.DictReader(io.StringIO(out))}
    assert rows["mha"]["total_params"] == "2359296"
    assert rows["sha"]["act_bytes"] == "25165824"
    assert float(rows["sha"]["saving_pct"]) > 40


def test_sweep_empty_range_prints_header_only(capsys):
    code, out, _ = run(capsys, "sweep", "--heads-range", "5:4")
    assert code == 0 and out.count("\n") == 1 and out.startswith("variant,")


def test_sweep_grid(capsys):
    _, out, _ = run(capsys, "sweep", "--variants", "mha,sha", "--grid", "12,24x32,64")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 2 * 2 * 2
    assert "\r" not in out


def test_sweep_bad_range_is_usage_error(capsys):
    code, _, err = run(capsys, "sweep", "--heads-range", "x")
    assert code == 2 and "error" in err


def test_unknown_variant_exit_2(capsys):
    code, _, err = run(capsys, "params", "gqa")
    assert code == 2 and "gqa" in err


def test_metrics_flags_deviations(capsys):
    code, out, _ = run(capsys, "metrics", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 56
    assert code == 1


def test_metrics_clean_table_exits_0(capsys, tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("benchmark,model,score,indicator_kind\nB,SHA,10,direct\nB,MHA,20,direct\n"
                 "B,MHE-Add,15,direct\n", encoding="utf-8")
    code, out, _ = run(capsys, "metrics", "--scores", str(f), "--format", "csv")
    rows = {r["model"]: r for r in csv.DictReader(io.StringIO(out))}
    assert code == 0 and float(rows["MHE_ADD"]["prr"]) == 75.0


def test_train_zero_steps_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    code, _, _ = run(capsys, "train", "--steps", "0", "--out", str(a))
    assert code == 0 and a.exists()
    for path in (a, b):
        run(capsys, "train", "--variant", "mhe-mul", "--steps", "3", "--batch-size", "4", "--out", str(path),
            "--seed", "5")
    assert a.read_bytes() == b.read_bytes()
    assert load_checkpoint(a).cfg.variant.cli_name == "mhe-mul"


def test_train_then_eval_bytes(capsys, tmp_path):
    text = tmp_path / "t.txt"
    text.write_bytes(b"hello world, " * 20)
    ckpt = tmp_path / "m.ckpt"
    code, _, _ = run(capsys, "train", "--task", f"bytes:{text}", "--seq-len", "16", "--steps", "2",
                     "--batch-size", "2", "--layers", "1", "--out", str(ckpt), "--format", "csv")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--text", str(text), "--stride", "8",
                       "--format", "json-lines")
    rec = json.loads(out)
    assert code == 0 and 1 < rec["perplexity"] < 400 and rec["tokens"] == 260


def test_eval_missing_checkpoint_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "nope"), "--text", str(tmp_path / "x"))
    assert code == 3 and "error" in err


def test_config_file_sets_defaults(capsys, tmp_path):
    cfg = tmp_path / "run.conf"
    cfg.write_text("# layers for params\nlayers = 12\nformat = csv\n", encoding="utf-8")
    _, out, _ = run(capsys, "params", "mha", "--config", str(cfg), "--convention", "experiment")
    assert "28311552" in out
    _, out, _ = run(capsys, "params", "mha", "--config", str(cfg), "--convention", "experiment", "--layers", "1")
    assert "2359296" in out


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("colour=blue\n", encoding="utf-8")
    code, _, err = run(capsys, "params", "mha", "--config", str(cfg))
    assert code == 2 and "colour" in err


def test_out_writes_file(capsys, tmp_path):
    dest = tmp_path / "p.csv"
    run(capsys, "params", "sha", "--format", "csv", "--out", str(dest))
    assert dest.read_text(encoding="utf-8").startswith("variant,")


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "sha", "mhe-add", "--samples", "10", "--skip-ops")
    assert code == 0 and "checks passed" in out
