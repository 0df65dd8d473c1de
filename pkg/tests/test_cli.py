import json
from pathlib import Path

import pytest

from daqu.cli import main
from daqu.synthgen import SynthConfig, generate


SMALL = dict(n_users=30, n_questions=60, vocab_size=300, n_topics=4,
             signal_split=0.8, seed=5)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Generated dataset with a fast training config, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    generate(SynthConfig(**SMALL), data)
    exp_path = data / "experiment.json"
    exp = json.loads(exp_path.read_text())
    exp["train"].update(epochs=2, batch_size=8)
    exp["featurizer"]["hash_buckets"] = 2048
    exp["dim"] = 16
    exp_path.write_text(json.dumps(exp))
    return root


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_gen_synthetic_roundtrip(tmp_path, capsys):
    cfg_path = tmp_path / "synth.json"
    cfg_path.write_text(json.dumps(SMALL))
    assert run_cli("gen-synthetic", "--config", cfg_path, "--out", tmp_path / "o1") == 0
    manifest1 = json.loads(capsys.readouterr().out)
    assert run_cli("gen-synthetic", "--config", cfg_path, "--out", tmp_path / "o2") == 0
    manifest2 = json.loads(capsys.readouterr().out)
    assert manifest1 == manifest2
    assert manifest1["counts"]["questions"] == SMALL["n_questions"]


def test_gen_synthetic_missing_seed_exits_2(tmp_path, capsys):
    cfg_path = tmp_path / "synth.json"
    cfg_path.write_text(json.dumps({"n_users": 5}))
    assert run_cli("gen-synthetic", "--config", cfg_path, "--out", tmp_path / "o") == 2
    assert "seed" in capsys.readouterr().err


def test_full_pipeline(workspace, capsys):
    data = workspace / "data"
    ckpt = workspace / "model.daqu"
    index = workspace / "index.daqu"
    assert run_cli("train", "--config", data / "experiment.json",
                   "--out-checkpoint", ckpt) == 0
    assert ckpt.exists() and ckpt.with_suffix(".losses.jsonl").exists()

    assert run_cli("index", "--config", data / "experiment.json",
                   "--checkpoint", ckpt, "--out-index", index) == 0

    for mode in ("none", "naive", "bm25_select", "daqu", "bm25"):
        run_path = workspace / f"run_{mode}.txt"
        args = ["search", "--config", data / "experiment.json",
                "--queries", data / "examples.test.jsonl",
                "--mode", mode, "--k", "10", "--out", run_path]
        if mode != "bm25":
            args += ["--checkpoint", ckpt, "--index", index]
        assert run_cli(*args) == 0
        assert run_path.exists()

    report_path = workspace / "report.json"
    assert run_cli("eval", "--run", workspace / "run_daqu.txt",
                   "--qrels", data / "qrels.test.txt",
                   "--k-list", "5,10", "--out", report_path) == 0
    report = json.loads(report_path.read_text())
    assert set(report["means"]) == {"acc@5", "acc@10", "recall@5", "recall@10", "mrr", "map"}
    out = capsys.readouterr().out
    assert "recall@10" in out


def test_search_rerun_identical_bytes(workspace):
    data = workspace / "data"
    a = (workspace / "run_daqu.txt").read_bytes()
    rerun = workspace / "run_daqu_again.txt"
    run_cli("search", "--config", data / "experiment.json",
            "--queries", data / "examples.test.jsonl",
            "--mode", "daqu", "--k", "10", "--out", rerun,
            "--checkpoint", workspace / "model.daqu", "--index", workspace / "index.daqu")
    assert rerun.read_bytes() == a


def test_search_k_zero_exits_2(workspace, capsys):
    data = workspace / "data"
    code = run_cli("search", "--config", data / "experiment.json",
                   "--queries", data / "examples.test.jsonl",
                   "--mode", "bm25", "--k", "0", "--out", workspace / "x.txt")
    assert code == 2


def test_version_mismatch_exits_4(workspace, capsys):
    data = workspace / "data"
    tampered = workspace / "tampered.daqu"
    raw = bytearray((workspace / "model.daqu").read_bytes())
    raw[4] ^= 0xFF
    tampered.write_bytes(bytes(raw))
    code = run_cli("search", "--config", data / "experiment.json",
                   "--queries", data / "examples.test.jsonl",
                   "--mode", "daqu", "--k", "5", "--out", workspace / "y.txt",
                   "--checkpoint", tampered, "--index", workspace / "index.daqu")
    assert code == 4


def test_specs_digest_mismatch_exits_4(workspace, tmp_path, capsys):
    data = workspace / "data"
    exp = json.loads((data / "experiment.json").read_text())
    exp["categories"] = exp["categories"][:2]
    other = tmp_path / "exp2.json"
    # keep relative paths working from the new location
    for key, value in exp["paths"].items():
        if key.endswith(("table", "field")):
            continue
        exp["paths"][key] = str((data / value).resolve())
    other.write_text(json.dumps(exp))
    code = run_cli("search", "--config", other,
                   "--queries", data / "examples.test.jsonl",
                   "--mode", "daqu", "--k", "5", "--out", tmp_path / "z.txt",
                   "--checkpoint", workspace / "model.daqu",
                   "--index", workspace / "index.daqu")
    assert code == 4
    assert "specs" in capsys.readouterr().err


def test_missing_data_exits_3(workspace, tmp_path, capsys):
    exp = json.loads((workspace / "data" / "experiment.json").read_text())
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(exp))  # relative paths now resolve nowhere
    code = run_cli("train", "--config", broken, "--out-checkpoint", tmp_path / "c.daqu")
    assert code == 3


def test_eval_hand_run(tmp_path, capsys):
    run = tmp_path / "run.txt"
    run.write_text("q1 Q0 a 1 3.0 t\nq1 Q0 b 2 2.0 t\nq1 Q0 r 3 1.0 t\n")
    qrels = tmp_path / "qrels.txt"
    qrels.write_text("q1 0 r 1\n")
    assert run_cli("eval", "--run", run, "--qrels", qrels, "--k-list", "2,3") == 0
    out = capsys.readouterr().out
    assert "acc@2" in out and "0.000000" in out and "1.000000" in out


def test_sweep_single_value_infer_cap(workspace, capsys):
    data = workspace / "data"
    out = workspace / "sweep.jsonl"
    assert run_cli("sweep", "--config", data / "experiment.json",
                   "--param", "infer_cap", "--values", "all",
                   "--k", "10", "--reps", "1", "--out", out) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 1
    assert rows[0]["param"] == "infer_cap" and rows[0]["value"] == "all"
    assert "relative_latency" in rows[0] and rows[0]["metrics"]
