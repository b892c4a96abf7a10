import hashlib
import json
import subprocess
import sys

import pytest

from simlearn.cli import main


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def pipeline(root, seed=3):
    cohort, seqs, feats, span = (root / "cohort", root / "seqs.jsonl", root / "feat.npz",
                                 root / "span.npz")
    assert main(["synth", "--n", "60", "--seed", str(seed), "--out", str(cohort)]) == 0
    assert main(["ingest", "--log", str(cohort / "log.jsonl"), "--out", str(seqs)]) == 0
    for mode, out in (("sa", feats), ("span", span)):
        assert main(["featurize", "--sequences", str(seqs), "--labels",
                     str(cohort / "labels.csv"), "--mode", mode, "--out", str(out)]) == 0
    report = root / "report.csv"
    assert main(["evaluate", "--model", "rf", "--features", str(span), "--jobs", "1",
                 "--attributes", str(cohort / "attributes.csv"), "--group-by", "region",
                 "--out", str(report)]) == 0
    return report


def test_pipeline_is_reproducible(tmp_path):
    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    assert digest(a) == digest(b)
    lines = a.read_text().splitlines()
    assert lines[0] == "model,fold,seed,horizon,auc" and len(lines) == 11
    for name in ("report_summary.csv", "report_predictions.csv", "report_groups.csv",
                 "report.csv.manifest.json"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "cohort" / "manifest.json").exists()
    manifest = json.loads((tmp_path / "a" / "report.csv.manifest.json").read_text())
    assert manifest["command"] == "evaluate" and manifest["seed"] == 0
    assert all(len(d) == 64 for d in manifest["inputs"].values())


def test_manifest_replay_is_byte_identical(tmp_path):
    pipeline(tmp_path)
    manifest = tmp_path / "report.csv.manifest.json"
    first = digest(tmp_path / "report.csv")
    (tmp_path / "report.csv").unlink()
    assert main(["evaluate", "--config", str(manifest)]) == 0
    assert digest(tmp_path / "report.csv") == first


def test_config_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 25, "signal": 0.0}))
    out = tmp_path / "c"
    assert main(["synth", "--n", "80", "--out", str(out), "--config", str(cfg)]) == 0
    flags = json.loads((out / "manifest.json").read_text())["flags"]
    assert flags["n"] == 25 and flags["signal"] == 0.0
    assert len((out / "labels.csv").read_text().splitlines()) == 26


def test_train_and_attention(tmp_path):
    root = tmp_path
    pipeline(root)
    ckpt = root / "sa.npz"
    assert main(["train", "--model", "sa-gru", "--features", str(root / "feat.npz"),
                 "--epochs", "1", "--cells", "4", "--out", str(ckpt)]) == 0
    svg = root / "h.svg"
    assert main(["attention", "--model", str(ckpt), "--features", str(root / "feat.npz"),
                 "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")
    gru = root / "gru.npz"
    assert main(["train", "--model", "gru", "--features", str(root / "feat.npz"),
                 "--epochs", "1", "--cells", "4", "--out", str(gru)]) == 0
    assert main(["attention", "--model", str(gru), "--features", str(root / "feat.npz"),
                 "--out", str(root / "x.svg")]) == 2


def test_usage_and_data_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    assert main(["ingest", "--log", str(bad), "--out", str(tmp_path / "s.jsonl")]) == 2
    assert main(["ingest", "--log", str(tmp_path / "missing"), "--out", str(tmp_path / "s")]) == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "simlearn.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("simlearn")


@pytest.mark.parametrize("argv", [["synth", "--help"], ["evaluate", "--help"]])
def test_help_exits_zero(argv):
    assert main(argv) == 0
