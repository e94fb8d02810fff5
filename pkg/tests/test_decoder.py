import math

import numpy as np
import pytest

from fullsum.decoder import BOS, EOS, NGramLm, build_decoding_graph, decode, read_hypotheses, write_hypotheses, DecodeResult
from fullsum.models import ConfigurationError, PriorModel, Scales, TransitionModel, log_softmax
from fullsum.topology import LabelSequence, LabelSpace, Lexicon, Topology, build_fsa

from oracles import decode_brute_force, fsa_arc_paths


def graph_strings(graph, T):
    """Label strings of complete graph paths that emit at least one word."""
    found = set()

    def walk(q, emitted, path):
        if len(path) == T:
            if q in graph.pending or (q in graph.silence_final and emitted):
                found.add(tuple(path))
            return
        for d, _, w in graph.out[q]:
            walk(d, emitted or w >= 0, path + [graph.state_label[d]])

    walk(0, False, [])
    return found


def test_lm_from_counts_normalized_and_arpa_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vocab = ["a", "b", "c", "d"]
    sents = [list(rng.choice(vocab, rng.integers(1, 5))) for _ in range(20)]
    lm = NGramLm.from_counts(sents, vocab)
    lm.check_normalized(1e-12)
    lm.write_arpa(tmp_path / "lm.arpa")
    text = (tmp_path / "lm.arpa").read_text()
    assert text.startswith("\\data\\") and "\\2-grams:" in text
    back = NGramLm.read_arpa(tmp_path / "lm.arpa")
    back.check_normalized(1e-6)
    for h in [BOS] + vocab:
        for w in vocab + [EOS]:
            assert back.logprob(w, h) == pytest.approx(lm.logprob(w, h), abs=1e-9)


def test_lm_saturated_history_still_normalized():
    lm = NGramLm.from_counts([["a"], ["b"], ["a", "b"], ["b", "a"]], ["a", "b"])
    lm.check_normalized(1e-12)


def test_arpa_rejects_higher_orders(tmp_path):
    (tmp_path / "lm").write_text("\\data\\\nngram 1=1\nngram 3=1\n\n\\1-grams:\n-1 a\n\n\\3-grams:\n-1 a a a\n\\end\\\n")
    with pytest.raises(ValueError, match="3-grams"):
        NGramLm.read_arpa(tmp_path / "lm")


def test_prefix_sharing():
    lex = Lexicon.from_strings(["AH", "N"], {"a": "AH", "an": "AH N"})
    g = build_decoding_graph(lex, "p-hmm-s", LabelSpace(["AH", "N"], eow=False, silence=True))
    assert len(g.root.children) == 1
    (ah,) = g.root.children.values()
    assert [g.words[w] for w in ah.words] == ["a"]
    (n,) = ah.children.values()
    assert [g.words[w] for w in n.words] == ["an"]


@pytest.mark.parametrize("T", range(1, 7))
def test_single_word_hmm_language(T):
    lex = Lexicon.from_strings(["A", "B"], {"ab": "A B"})
    space = LabelSpace(["A", "B"], eow=False, silence=True)
    g = build_decoding_graph(lex, "p-hmm", space)
    expected = set()
    for n in range(1, T // 2 + 1):
        seq = LabelSequence.from_labels(space, [0, 1] * n, [2 * i + 1 for i in range(n)], ["ab"] * n)
        fsa = build_fsa(seq, "hmm01")
        expected |= {tuple(int(fsa.label[a]) for a in p) for p in fsa_arc_paths(fsa, T)}
    assert graph_strings(g, T) == expected


def test_ctc_repeated_label_needs_blank():
    lex = Lexicon.from_strings(["A"], {"aa": "A A"})
    space = LabelSpace(["A"], eow=False, blank=True)
    g = build_decoding_graph(lex, "ctc", space)
    assert graph_strings(g, 2) == set()
    assert graph_strings(g, 3) == {(0, 1, 0)}


def test_one_hot_posteriors_pick_word():
    lex = Lexicon.from_strings(["A", "B"], {"x": "A", "y": "B"})
    space = LabelSpace(["A", "B"], eow=False, silence=True)
    g = build_decoding_graph(lex, "p-hmm-s", space)
    post = np.log(np.full((4, 3), 1e-6))
    post[:, 1] = 0
    r = decode(log_softmax(post), g, NGramLm.uniform(["x", "y"]), Scales(lam=0.0))
    assert r.words == ["y"]


def test_lm_dominates_uniform_posteriors():
    lex = Lexicon.from_strings(["A", "B"], {"x": "A", "y": "B"})
    space = LabelSpace(["A", "B"], eow=False, blank=True)
    g = build_decoding_graph(lex, "ctc", space)
    lm = NGramLm.from_counts([["y"]] * 5 + [["x", "y"]], ["x", "y"])
    r = decode(np.full((5, 3), -math.log(3)), g, lm, Scales(lam=50.0))
    assert r.words == ["y"]


def random_instance(rng):
    n_ph = int(rng.integers(1, 4))
    phonemes = ["P", "Q", "R"][:n_ph]
    vocab = ["u", "v", "w"][: int(rng.integers(1, 4))]
    entries = {}
    for w in vocab:
        prons = [list(rng.choice(phonemes, rng.integers(1, 3))) for _ in range(int(rng.integers(1, 3)))]
        entries[w] = prons
    lex = Lexicon(phonemes, {w: [[phonemes.index(p) for p in pr] for pr in prons] for w, prons in entries.items()})
    topo = Topology.CTC if rng.random() < 0.5 else Topology.HMM01
    space = LabelSpace.for_topology(phonemes, topo, eow=bool(rng.random() < 0.5))
    T = int(rng.integers(1, 7))
    scores = log_softmax(rng.normal(scale=2.0, size=(T, space.size)))
    sents = [list(rng.choice(vocab, rng.integers(1, 4))) for _ in range(4)]
    lm = NGramLm.from_counts(sents, vocab)
    scales = Scales(alpha=float(rng.choice([0.0, 0.3])), beta=float(rng.choice([0.0, 0.5])), lam=float(rng.choice([0.0, 0.7, 2.0])))
    prior = PriorModel(rng.dirichlet(np.ones(space.size)))
    trans = TransitionModel.from_loops(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0.1, 0.9)))
    k = int(rng.choice([1, 1, 2]))
    return lex, space, topo, lm, scores, scales, prior, trans, k


def check_instance(seed):
    rng = np.random.default_rng(seed)
    lex, space, topo, lm, scores, scales, prior, trans, k = random_instance(rng)
    variant = "ctc" if topo is Topology.CTC else "h-hmm"
    g = build_decoding_graph(lex, variant, space, min_duration=k)
    offset = -scales.alpha * prior.log() if scales.alpha else np.zeros(space.size)
    cls_w = scales.beta * trans.log_table() if scales.beta else np.zeros(5)
    best, tied = decode_brute_force(lex, space, topo, lm, scores, offset, cls_w, scales.gamma, scales.lam, k)
    if best is None:
        with pytest.raises(ValueError, match="no complete hypothesis"):
            decode(scores, g, lm, scales, prior, trans)
        return None
    r = decode(scores, g, lm, scales, prior, trans)
    assert r.score == pytest.approx(best, rel=1e-9, abs=1e-9), seed
    assert tuple(r.words) in tied, seed
    assert tuple(r.words) == min(tied), seed
    return r


def test_exact_search_matches_enumeration():
    solved = sum(check_instance(seed) is not None for seed in range(40))
    assert solved >= 25


def test_beam_monotone():
    rng = np.random.default_rng(11)
    for _ in range(20):
        lex, space, topo, lm, scores, scales, prior, trans, k = random_instance(rng)
        g = build_decoding_graph(lex, topo, space, k)
        prev = -math.inf
        for beam in (0.5, 1.0, 2.0, 4.0, 8.0, math.inf):
            try:
                s = decode(scores, g, lm, scales, prior, trans, beam=beam).score
            except ValueError:
                s = -math.inf
            assert s >= prev - 1e-12
            prev = s


def test_zero_scales_ignore_tables():
    rng = np.random.default_rng(4)
    lex = Lexicon.from_strings(["A", "B"], {"x": "A B", "y": "B", "z": "A"})
    space = LabelSpace(["A", "B"], eow=True, silence=True)
    g = build_decoding_graph(lex, "h-hmm", space)
    lm = NGramLm.from_counts([["x", "y"], ["z"]], ["x", "y", "z"])
    scores = log_softmax(rng.normal(size=(6, space.size)))
    base = decode(scores, g, lm, Scales())
    for _ in range(3):
        p = PriorModel(rng.dirichlet(np.ones(space.size)))
        t = TransitionModel.from_loops(rng.uniform(), rng.uniform())
        r = decode(scores, g, lm, Scales(), p, t)
        assert (r.words, r.score) == (base.words, base.score)


def test_errors(tmp_path):
    lex = Lexicon.from_strings(["A"], {"x": "A"})
    space = LabelSpace(["A"], eow=False, silence=True)
    g = build_decoding_graph(lex, "p-hmm", space)
    scores = np.zeros((2, 2))
    with pytest.raises(ConfigurationError):
        decode(scores, g, NGramLm.uniform(["x"]), Scales(alpha=1.0))
    with pytest.raises(ConfigurationError):
        decode(scores, g, NGramLm.uniform(["x"]), Scales(beta=1.0))
    with pytest.raises(ValueError, match="missing"):
        decode(scores, g, NGramLm.uniform(["q"]), Scales())
    with pytest.raises(ValueError, match="labels"):
        decode(np.zeros((2, 5)), g, NGramLm.uniform(["x"]))
    with pytest.raises(ValueError):
        build_decoding_graph(Lexicon(["A"], {}), "ctc")


def test_hypothesis_file(tmp_path):
    write_hypotheses(tmp_path / "h", {"u1": DecodeResult(["a", "b"], -1.5)})
    assert (tmp_path / "h").read_text() == "u1\ta b\t-1.5\n"
    assert read_hypotheses(tmp_path / "h") == {"u1": ["a", "b"]}
