import subprocess
import sys
import time

import pytest

from xmodal.cli import main

SMALL = """
n_images = 4
m_prompts = 8
batch = 4
query_budget = 1200
sk_values = 2,4
check_seeds = 5
check_ks = 5,20
"""


@pytest.fixture()
def small_config(tmp_path):
    path = tmp_path / "small.txt"
    path.write_text(SMALL)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def files(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_attack_outputs(tmp_path, small_config):
    out = tmp_path / "a"
    assert run("attack", "--config", small_config, "--out", out) == 0
    for name in ("config.snapshot.txt", "trace.csv", "summary.txt", "report.txt", "report.csv",
                 "artifact/uap.mmt", "artifact/delta.mmt", "artifact/artifact.txt",
                 "artifact/victim.txt"):
        assert (out / name).is_file(), name
    summary = (out / "summary.txt").read_text()
    assert "queries_used = 1144" in summary  # 13 iterations x 4 x 2 x 11


def test_snapshot_rerun_is_bitwise(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("attack", "--config", small_config, "--out", a, "--seed", 3, "--workers", 2) == 0
    assert run("attack", "--config", a / "config.snapshot.txt", "--out", b) == 0
    fa, fb = files(a), files(b)
    assert fa == fb


def test_eval_reproduces_attack_report(tmp_path, small_config):
    a, e = tmp_path / "a", tmp_path / "e"
    assert run("attack", "--config", small_config, "--out", a) == 0
    assert run("eval", "--config", a / "config.snapshot.txt", "--artifact", a / "artifact", "--out", e) == 0
    assert (a / "report.csv").read_bytes() == (e / "report.csv").read_bytes()


def test_defend_transfer_and_sweeps(tmp_path, small_config):
    a = tmp_path / "a"
    assert run("attack", "--config", small_config, "--out", a) == 0
    art = a / "artifact"
    assert run("defend", "--config", small_config, "--artifact", art, "--out", tmp_path / "d") == 0
    rows = (tmp_path / "d" / "defense.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 4
    assert run("transfer", "--config", small_config, "--artifact", art, "--out", tmp_path / "t") == 0
    matrix = (tmp_path / "t" / "transfer_attacked.csv").read_text().splitlines()
    assert matrix[0] == "victim\\corpus,corpus_0,corpus_1"
    assert [r.split(",")[0] for r in matrix[1:]] == ["victim_1", "victim_2"]
    assert run("ablate", "--config", small_config, "--out", tmp_path / "ab") == 0
    ab = (tmp_path / "ab" / "ablation.csv").read_text().splitlines()
    assert {r.split(",")[0] for r in ab[1:]} == {"full", "no_text", "no_image", "no_joint"}
    assert run("sweep-sk", "--config", small_config, "--out", tmp_path / "s") == 0
    text = (tmp_path / "s" / "sweep_sk.txt").read_text()
    assert "s_k=2" in text and "s_k=4" in text and "best s_k" in text


def test_oracle_check_and_gen_corpus(tmp_path, small_config):
    assert run("oracle-check", "--config", small_config, "--out", tmp_path / "o") == 0
    rows = (tmp_path / "o" / "oracle_check.csv").read_text().splitlines()
    assert rows[0] == "source,modality,K,seeds,mean_cosine"
    assert len(rows) == 1 + 2 * 4
    assert run("gen-corpus", "--config", small_config, "--out", tmp_path / "g") == 0
    assert (tmp_path / "g" / "corpus" / "image_003.mmt").is_file()


def test_errors_are_one_line(tmp_path, capsys):
    assert run("attack", "--config", tmp_path / "missing.txt", "--out", tmp_path / "x") != 0
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "missing.txt" in err and err.startswith("xmodal: error: config:")
    assert run("frobnicate") != 0
    assert capsys.readouterr().err.startswith("xmodal: error: usage:")
    assert run("eval", "--out", tmp_path / "y") != 0
    assert "--artifact" in capsys.readouterr().err
    assert run("eval", "--artifact", tmp_path / "none", "--out", tmp_path / "y") == 3
    assert run("attack", "--budget", 10, "--out", tmp_path / "z") == 4


def test_tiny_attack_is_fast(tmp_path):
    cfg = tmp_path / "tiny.txt"
    cfg.write_text("n_images = 4\nm_prompts = 2\nimage_train_frac = 1.0\n")
    start = time.perf_counter()
    assert run("attack", "--config", cfg, "--budget", 2000, "--out", tmp_path / "t") == 0
    assert time.perf_counter() - start < 60


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "xmodal", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
