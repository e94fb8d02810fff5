import logging

import numpy as np
import pytest

from fullsum.corpus import Utterance
from fullsum.estimation import apply_floor, marginal_prior, p_approx_prior, p_approx_transitions
from fullsum.topology import LabelSpace, Lexicon


@pytest.fixture
def ab():
    lex = Lexicon.from_strings(["A", "B"], {"ab": "A B", "a": "A"})
    space = LabelSpace(["A", "B"], eow=False, silence=True)
    return lex, space


def test_speech_loop_seven_eighths():
    t = p_approx_transitions(80, 10)
    assert t.speech_loop == 7 / 8
    assert t.speech_forward == 1 / 8


def test_speech_loop_one_frame_phonemes():
    t = p_approx_transitions(10, 10)
    assert t.speech_loop == 0.0 and t.speech_forward == 1.0


def test_three_state_uses_a_third_of_the_duration():
    t = p_approx_transitions(90, 10, states=3)
    assert t.speech_loop == pytest.approx(1 - 10 / 30)


def test_silence_loop_from_residual():
    # 100 frames of audio, 6 phonemes of 100 ms -> 60 speech frames,
    # 40 silence frames in two segments of 20
    lex = Lexicon.from_strings(["A"], {"w": "A A A"})
    corpus = [Utterance("u1", 1000, ["w", "w"])]
    t = p_approx_transitions(100, 10, corpus, lex)
    assert t.silence_loop == pytest.approx(19 / 20, abs=1e-15)
    assert t.silence_loop + t.silence_forward == 1.0


def test_silence_falls_back_to_speech(caplog):
    lex = Lexicon.from_strings(["A"], {"w": "A"})
    with caplog.at_level(logging.WARNING):
        t = p_approx_transitions(80, 10, [Utterance("u", 80, ["w"])], lex)
    assert t.silence_loop == t.speech_loop
    assert "no silence" in caplog.text


def test_prior_no_residual(ab):
    lex, space = ab
    p = p_approx_prior([Utterance("u", 160, ["ab"])], lex, space, floor=0.0)
    np.testing.assert_allclose(p.probs, [0.5, 0.5, 0.0])


def test_prior_with_residual(ab):
    lex, space = ab
    p = p_approx_prior([Utterance("u", 320, ["ab"])], lex, space, floor=0.0)
    np.testing.assert_allclose(p.probs, [0.25, 0.25, 0.5], atol=1e-15)


def test_prior_floor(ab):
    lex, space = ab
    p = p_approx_prior([Utterance("u", 160, ["ab"])], lex, space, floor=1e-4)
    assert p.probs[space.silence] == 1e-4
    assert p.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_prior_clamps_short_audio(ab, caplog):
    lex, space = ab
    with caplog.at_level(logging.WARNING):
        p = p_approx_prior([Utterance("short", 100, ["ab"]), Utterance("long", 260, ["a"])], lex, space, floor=0.0)
    assert "short" in caplog.text
    # A: 16 frames, B: 8 frames, silence only from the second utterance: 26 - 8
    np.testing.assert_allclose(p.probs, np.array([16, 8, 18]) / 42)


def test_prior_permutation_equivariant():
    rng = np.random.default_rng(0)
    names = ["A", "B", "C"]
    words = {"x": "A B", "y": "C A C", "z": "B"}
    corpus = [Utterance(f"u{i}", float(rng.integers(100, 900)), list(rng.choice(list(words), 3))) for i in range(5)]
    base = p_approx_prior(corpus, Lexicon.from_strings(names, words), LabelSpace(names, eow=True, silence=True))
    assert base.probs.sum() == pytest.approx(1.0, abs=1e-9)
    perm = ["C", "A", "B"]
    other = p_approx_prior(corpus, Lexicon.from_strings(perm, words), LabelSpace(perm, eow=True, silence=True))
    got = dict(zip(other.names, other.probs))
    for name, prob in zip(base.names, base.probs):
        assert got[name] == pytest.approx(prob, rel=1e-12)


def test_marginal_prior_one_hot_and_uniform():
    p = marginal_prior([np.log(np.array([[1.0, 1e-300, 1e-300]]))], floor=1e-4)
    np.testing.assert_allclose(p.probs, [1 - 2e-4, 1e-4, 1e-4])
    u = marginal_prior([np.full((2, 4), np.log(0.25))])
    np.testing.assert_allclose(u.probs, 0.25)


def test_marginal_prior_mixture():
    rows = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
    batch = np.log(rows[[0, 0, 0, 1]])
    p = marginal_prior([batch], floor=0.0)
    np.testing.assert_allclose(p.probs, 0.75 * rows[0] + 0.25 * rows[1], atol=1e-12)


def test_marginal_prior_concatenation():
    rng = np.random.default_rng(5)
    b1 = np.log(rng.dirichlet(np.ones(4), size=3))
    b2 = np.log(rng.dirichlet(np.ones(4), size=7))
    whole = marginal_prior([b1, b2], floor=0.0).probs
    parts = (3 * marginal_prior([b1], floor=0.0).probs + 7 * marginal_prior([b2], floor=0.0).probs) / 10
    np.testing.assert_allclose(whole, parts, atol=1e-14)
    with pytest.raises(ValueError):
        marginal_prior([])


def test_apply_floor_exact():
    p = apply_floor(np.array([0.5, 0.5, 0.0, 0.0]), 1e-3)
    assert p[2] == p[3] == 1e-3
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
