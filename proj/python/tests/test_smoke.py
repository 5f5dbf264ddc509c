import json
import os
import subprocess
from pathlib import Path

import pytest

import halprobe


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def small_spec(n=80, delta=1.5, tau=1.0, seed=3):
    return {
        "name": "py",
        "tasks": [
            {"name": "QA", "n": n, "rate": 0.2, "delta": delta},
            {"name": "D2T", "n": n, "rate": 0.8, "delta": delta},
            {"name": "SUMMARY", "n": n, "rate": 0.4, "delta": delta},
        ],
        "d": 10,
        "tau": tau,
        "seed": seed,
        "hooks": ["resid_pre"],
    }


def test_version():
    assert halprobe.__version__ == halprobe.version()


def test_auc_matches_pairwise():
    scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.05]
    labels = [0, 0, 1, 1, 1, 0, 0]
    assert halprobe.auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-15)
    assert -1.0 <= halprobe.pcc(scores, labels) <= 1.0


def test_errors_carry_code():
    with pytest.raises(halprobe.HalprobeError, match="UNDEFINED_METRIC"):
        halprobe.auc([0.1, 0.2], [1, 1])
    with pytest.raises(halprobe.HalprobeError, match="INVALID_DISTRIBUTION"):
        halprobe.jsd([0.5, 0.6], [0.5, 0.5])


def test_naive_and_jsd():
    assert halprobe.naive_predict("D2T") == 1
    assert halprobe.naive_predict("QA") == 0
    assert halprobe.jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.6931471805599453)


def test_synthetic_protocol_report():
    spec = small_spec()
    report = halprobe.run_synthetic(spec, {"detector": {"kind": "logistic"}, "seeds": [0, 1]})
    assert report["protocol"] == "indist"
    assert 0.0 <= report["overall"]["auc"]["mean"] <= 1.0
    assert report["label_access"]["eval"]["train"] == 0
    assert report["label_access"]["eval"]["tune"] == 0
    bayes = halprobe.bayes_auc(spec)
    assert set(bayes["optimal_per_task"]) == {"QA", "D2T", "SUMMARY"}


def test_cli_synth_then_python_eval(tmp_path):
    exe = os.environ.get("HALPROBE_BIN")
    if not exe or not Path(exe).exists():
        pytest.skip("HALPROBE_BIN not set")
    (tmp_path / "spec.json").write_text(json.dumps(small_spec()))
    subprocess.run([exe, "synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "d")], check=True)
    corpus = tmp_path / "d" / "corpus.jsonl"
    report = halprobe.run_protocol(
        {"train_corpus": "s", "detector": {"kind": "naive"}, "seeds": [0]},
        {"s": (corpus, tmp_path / "d" / "dump")},
    )
    assert report["overall"]["auc"]["mean"] == pytest.approx(report["naive_baseline"]["auc"]["mean"])
    bad = subprocess.run([exe, "eval", "--protcol", "indist"], capture_output=True, text=True)
    assert bad.returncode == 1
    assert "--protocol" in bad.stderr
