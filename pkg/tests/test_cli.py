import numpy as np
import pytest

from conftest import tone
from erann.checkpoint import load_checkpoint
from erann.cli import main
from erann.wavio import write_wav

FAST = ["--set", "model.s_m=3", "--batch-size", "2", "--iterations", "2"]


@pytest.fixture
def corpus(tmp_path):
    rows = []
    for k, (name, freq) in enumerate((("low", 300), ("high", 1200), ("low", 350), ("high", 1100))):
        write_wav(tmp_path / f"c{k}.wav", tone(freq, 1.0).samples, 44100)
        rows.append(f"c{k}.wav,{name},{k % 2 + 1},")
    (tmp_path / "m.csv").write_text("path,labels,fold,group\n" + "\n".join(rows) + "\n")
    (tmp_path / "classes.txt").write_text("low\nhigh\n")
    return tmp_path


def data_args(folder):
    return ["--manifest", str(folder / "m.csv"), "--classes", str(folder / "classes.txt")]


def test_analyze_reports_counts(capsys):
    assert main(["analyze", "--model", "ERANN-2-4", "--N", "527"]) == 0
    out = capsys.readouterr().out
    assert "params: 24502863" in out and "stage4" in out


def test_train_outputs_and_determinism(corpus):
    for name in ("a", "b"):
        assert main(["train", *data_args(corpus), "--out", str(corpus / name), "--seed", "3", *FAST]) == 0
    a = (corpus / "a" / "last.ckpt").read_bytes()
    assert a == (corpus / "b" / "last.ckpt").read_bytes()
    for f in ("best.ckpt", "trace.txt", "config.txt"):
        assert (corpus / "a" / f).is_file()
    state, ema = load_checkpoint(corpus / "a" / "last.ckpt")
    assert state.config.n_classes == 2 and state.config.s_m == 3 and ema is not None
    assert "model.n_classes=2" in (corpus / "a" / "config.txt").read_text()


def test_eval_and_finetune(corpus, capsys):
    out = corpus / "run"
    assert main(["train", *data_args(corpus), "--out", str(out), "--holdout-fold", "2", *FAST]) == 0
    assert main(["eval", *data_args(corpus), "--checkpoint", str(out / "last.ckpt")]) == 0
    assert "accuracy=" in capsys.readouterr().out
    (corpus / "three.txt").write_text("low\nhigh\nmid\n")
    args = ["--manifest", str(corpus / "m.csv"), "--classes", str(corpus / "three.txt")]
    ft = corpus / "ft"
    assert main(["finetune", *args, "--checkpoint", str(out / "last.ckpt"), "--out", str(ft), "--iterations", "1"]) == 0
    state, _ = load_checkpoint(ft / "last.ckpt")
    assert state.params["fc2.weight"].shape == (3, 128)
    assert "train.lr_policy=constant" in (ft / "config.txt").read_text()


def test_features_cache_reuse(corpus, capsys):
    args = ["features", *data_args(corpus), "--cache", str(corpus / "cache")]
    assert main(args) == 0
    assert "0 reused" in capsys.readouterr().out
    assert main(args) == 0
    assert "4 reused" in capsys.readouterr().out


def test_exit_codes(corpus, capsys):
    assert main(["train", *data_args(corpus), "--out", str(corpus / "x"), "--set", "model.depth=3"]) == 1
    assert "model.depth" in capsys.readouterr().err
    missing = ["--manifest", str(corpus / "none.csv"), "--classes", str(corpus / "classes.txt")]
    assert main(["train", *missing, "--out", str(corpus / "x")]) == 2
    assert main(["analyze", "--model", "ERANN-9-1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1


def test_gradcheck_operators_only(capsys):
    assert main(["gradcheck", "--operators-only"]) == 0
    out = capsys.readouterr().out
    assert "conv2d_6x6_s4" in out and "gradcheck: passed" in out


def test_bench_runs(capsys):
    assert main(["bench", "--model", "ERANN-3-1", "--N", "4", "--batch-sizes", "1,2", "--repeats", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and all("clips/sec=" in ln for ln in lines)
