import re

import numpy as np
import pytest

from fullsum.cli import run
from fullsum.decoder import NGramLm
from fullsum.io import read_alignments, read_soft_alignment, read_transitions


def fp(stderr, prefix="fingerprint"):
    return re.search(rf"^{prefix} ([0-9a-f]{{64}})$", stderr, re.M).group(1)


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("syn") / "d"
    assert run(["synth", "--seed", "3", "--utts", "12", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def model(data, tmp_path_factory):
    m = tmp_path_factory.mktemp("m") / "m.amd"
    assert run(["train", "--data", str(data), "--out", str(m), "--epochs", "8", "--variant", "p-hmm"]) == 0
    return m


def test_synth_is_byte_identical(tmp_path, data):
    other = tmp_path / "again"
    assert run(["synth", "--seed", "3", "--utts", "12", "--out", str(other)]) == 0
    for f in sorted(p for p in data.rglob("*") if p.is_file()):
        assert (other / f.relative_to(data)).read_bytes() == f.read_bytes()


def test_estimate_p_approx(tmp_path, capsys):
    assert run(["estimate", "p-approx", "--mean-phoneme-ms", "80", "--frame-shift-ms", "10"]) == 0
    assert "speech_loop 0.875" in capsys.readouterr().out
    out = tmp_path / "t.txt"
    assert run(["estimate", "p-approx", "--mean-phoneme-ms", "80", "--frame-shift-ms", "10", "--out-transitions", str(out)]) == 0
    assert read_transitions(out).speech_loop == 0.875


def test_tse_identity(data, capsys):
    ref = str(data / "reference.ali")
    assert run(["tse", "--cand", ref, "--ref", ref]) == 0
    assert "tse_ms\t0.000" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert run(["train", "--no-such-flag"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["train"]) == 1
    assert run([]) == 1
    assert run(["tse", "--cand", str(tmp_path / "missing"), "--ref", str(tmp_path / "missing")]) == 2
    (tmp_path / "bad.cfg").write_text("nonsense = 1\n")
    assert run(["synth", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "x")]) == 1


def test_config_precedence_and_fingerprint(tmp_path, data, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs = 1\nvariant = ctc\nsubsample = 4\n# comment\npeak-lr = 2.0\n")
    m = str(tmp_path / "a.amd")
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out", m]) == 0
    first = capsys.readouterr()
    assert "epochs\t1" in first.out
    assert (tmp_path / "a.amd.loss.csv").read_text().count("\n") == 3
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out", m, "--epochs", "2"]) == 0
    second = capsys.readouterr()
    assert "epochs\t2" in second.out
    assert fp(first.err, "config fingerprint") != fp(second.err, "config fingerprint")
    assert run(["train", "--config", str(cfg), "--data", str(data), "--out", m, "--jobs", "2"]) == 0
    assert fp(capsys.readouterr().err, "config fingerprint") == fp(first.err, "config fingerprint")


def test_align_both_modes(tmp_path, data, model):
    ali = tmp_path / "v.ali"
    assert run(["align", "--model", str(model), "--data", str(data), "--out", str(ali), "--hal-dir", str(tmp_path / "hal")]) == 0
    assert len(read_alignments(ali)) == 12
    sal = tmp_path / "sal"
    assert run(["align", "--model", str(model), "--data", str(data), "--baum-welch", "--out", str(sal)]) == 0
    for f in sal.iterdir():
        # stored as f32
        np.testing.assert_allclose(read_soft_alignment(f).probs.sum(axis=1), 1, atol=1e-6)
    svg = tmp_path / "p.svg"
    assert run(
        ["plot", "--soft", str(sal / "syn0000.sal"), "--hard", str(tmp_path / "hal" / "syn0000.hal"),
         "--ref", str(data / "reference.ali"), "--utt", "syn0000", "--model", str(model), "--out", str(svg)]
    ) == 0
    assert svg.read_text().startswith("<svg")


def test_decode_and_wer(tmp_path, data, model, capsys):
    from fullsum.corpus import read_corpus

    lm = tmp_path / "lm.arpa"
    NGramLm.from_counts([u.words for u in read_corpus(data / "corpus.txt")]).write_arpa(lm)
    hyp = tmp_path / "hyp.txt"
    assert run(["decode", "--model", str(model), "--data", str(data), "--lm", str(lm), "--out", str(hyp), "--beta", "0.1"]) == 0
    assert len(hyp.read_text().splitlines()) == 12
    capsys.readouterr()
    assert run(["wer", "--hyp", str(hyp), "--ref", str(data / "corpus.txt")]) == 0
    wer = float(re.search(r"^wer\t([\d.]+)$", capsys.readouterr().out, re.M).group(1))
    assert 0 <= wer <= 100


def test_sweep_small(tmp_path, data, capsys):
    out = tmp_path / "sweep.tsv"
    assert run(["sweep", "--data", str(data), "--alphas", "1.0,0.1", "--betas", "0.1", "--epochs", "2", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].split("\t")[-1] == "converged"
    assert len(rows) == 3
