import functools
import itertools
import math

import numpy as np
import pytest

from conftest import fsa_paths, fsa_strings, fsa_unit_paths, seq_of, small_sequences
from oracles import ctc_strings, hmm_paths, hmm_strings
from fullsum.topology import (
    ArcClass,
    LabelSpace,
    LabelUnit,
    Lexicon,
    UnitKind,
    apply_min_duration,
    build_ctc_fsa,
    build_hmm_fsa,
    build_label_sequence,
    collapse,
    collapse_states,
)

A, B, C = 0, 1, 2


@pytest.fixture
def she_was():
    phonemes = ["SH", "IY", "W", "AH", "Z"]
    lex = Lexicon.from_strings(phonemes, {"she": "SH IY", "was": "W AH Z"})
    return phonemes, lex


def test_label_sequence_she_was(she_was):
    phonemes, lex = she_was
    space = LabelSpace(phonemes, eow=True, states=1, silence=True)
    seq = build_label_sequence("she was", lex, space)
    assert [space.name(i) for i in seq.labels] == ["SH", "IY#", "W", "AH", "Z#"]
    assert seq.S == 5
    assert seq.word_ends == (1, 4)


def test_label_sequence_three_state():
    lex = Lexicon.from_strings(["AH"], {"a": "AH"})
    space = LabelSpace(["AH"], eow=False, states=3)
    seq = build_label_sequence(["a"], lex, space)
    assert [space.name(i) for i in seq.labels] == ["AH.0", "AH.1", "AH.2"]
    assert [u.state_pos for u in seq.units] == [0, 1, 2]


def test_label_sequence_repeat_word():
    lex = Lexicon.from_strings(["G", "OW"], {"go": "G OW"})
    space = LabelSpace(["G", "OW"], eow=True)
    seq = build_label_sequence("go go", lex, space)
    assert [space.name(i) for i in seq.labels] == ["G", "OW#", "G", "OW#"]
    assert [u.eow for u in seq.units] == [False, True, False, True]


def test_label_sequence_errors(she_was):
    phonemes, lex = she_was
    space = LabelSpace(phonemes)
    with pytest.raises(KeyError, match="'he'.*utt7"):
        build_label_sequence("she he", lex, space, utt_id="utt7")
    with pytest.raises(ValueError, match="empty transcript"):
        build_label_sequence("", lex, space)


def test_label_space_bijection():
    space = LabelSpace(["A", "B"], eow=True, states=3, silence=True)
    assert space.size == 2 * 2 * 3 + 1
    seen = {space.index(space.unit(i)) for i in range(space.size)}
    assert seen == set(range(space.size))
    both = LabelSpace(["A", "B"], eow=True, silence=True, blank=True)
    assert {both.index(both.unit(i)) for i in range(both.size)} == set(range(2 * 2 + 2))
    assert space.unit(space.silence).kind is UnitKind.SILENCE
    with pytest.raises(ValueError):
        LabelUnit(UnitKind.SILENCE, eow=True)
    with pytest.raises(ValueError, match="reserved"):
        LabelSpace(["A", "[BLANK]"])


# CTC examples; blank is index 3 in the ABC space, written "e" below


def _decode(strings, names="ABCe"):
    return {"".join(names[i] for i in s) for s in strings}


def test_ctc_single_label_one_frame(abc_ctc):
    fsa = build_ctc_fsa(seq_of(abc_ctc, [A]))
    assert _decode(fsa_strings(fsa, 1)) == {"A"}


def test_ctc_two_labels_three_frames(abc_ctc):
    fsa = build_ctc_fsa(seq_of(abc_ctc, [A, B]))
    got = _decode(fsa_strings(fsa, 3))
    assert got == _decode(ctc_strings([A, B], 3, 4, 3))
    assert got == {"AAB", "ABB", "AeB", "eAB", "ABe"}


def test_ctc_repeat_needs_blank(abc_ctc):
    fsa = build_ctc_fsa(seq_of(abc_ctc, [A, A]))
    assert _decode(fsa_strings(fsa, 3)) == {"AeA"}
    assert fsa_strings(fsa, 2) == set()


def test_hmm_examples(abc_hmm):
    assert _decode(fsa_strings(build_hmm_fsa(seq_of(abc_hmm, [A]), None), 3), "ABCs") == {"AAA"}
    assert _decode(fsa_strings(build_hmm_fsa(seq_of(abc_hmm, [A, B]), None), 3), "ABCs") == {"AAB", "ABB"}
    got = _decode(fsa_strings(build_hmm_fsa(seq_of(abc_hmm, [A])), 2), "ABCs")
    assert got == {"AA", "sA", "As"}


def test_min_duration_examples(abc_ctc, abc_hmm):
    hmm = build_hmm_fsa(seq_of(abc_hmm, [A, B]), None)
    k2 = apply_min_duration(hmm, 2)
    assert _decode(fsa_strings(k2, 4), "ABCs") == {"AABB"}
    assert fsa_strings(k2, 3) == set()
    ctc = apply_min_duration(build_ctc_fsa(seq_of(abc_ctc, [A])), 2)
    assert _decode(fsa_strings(ctc, 3)) == {"AAe", "eAA", "AAA"}
    with pytest.raises(ValueError):
        apply_min_duration(hmm, 0)


def test_min_duration_one_is_identity(abc_ctc, abc_hmm):
    for fsa in (build_ctc_fsa(seq_of(abc_ctc, [A, B, A])), build_hmm_fsa(seq_of(abc_hmm, [A, B], [0, 1]))):
        same = apply_min_duration(fsa, 1)
        for T in range(1, 7):
            assert fsa_strings(same, T) == fsa_strings(fsa, T)


def test_hmm_arc_classes(abc_hmm):
    fsa = build_hmm_fsa(seq_of(abc_hmm, [A, B], [0, 1]))
    classes = set(int(c) for c in fsa.cls)
    assert ArcClass.BLANK not in classes
    assert classes <= {ArcClass.SPEECH_LOOP, ArcClass.SPEECH_FORWARD, ArcClass.SILENCE_LOOP, ArcClass.SILENCE_FORWARD}


# exhaustive path-language oracle, T <= 8, S <= 3 over three symbols


@functools.lru_cache(maxsize=None)
def _ctc_strings_by_collapse(T, blank=3, L=4):
    """Every length-T string grouped by its CTC collapse, with its shortest
    non-blank run."""
    groups = {}
    for s in itertools.product(range(L), repeat=T):
        runs = [(lab, len(list(g))) for lab, g in itertools.groupby(s)]
        speech = [(lab, n) for lab, n in runs if lab != blank]
        key = tuple(lab for lab, _ in speech)
        groups.setdefault(key, []).append((s, min((n for _, n in speech), default=0)))
    return groups


@pytest.mark.parametrize("k", [1, 2, 3])
def test_ctc_language_matches_brute_force(abc_ctc, k):
    for labels in small_sequences():
        fsa = build_ctc_fsa(seq_of(abc_ctc, labels), min_duration=k)
        for T in range(1, 9):
            expected = {s for s, shortest in _ctc_strings_by_collapse(T).get(labels, []) if shortest >= k}
            got = fsa_strings(fsa, T)
            assert got == expected, (labels, T, k)
            # CTC strings and paths are in bijection
            assert len(fsa_paths(fsa, T)) == len(got)
            for s in got:
                assert collapse(s, "ctc", abc_ctc) == list(labels)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("split", [False, True])
def test_hmm_language_matches_brute_force(abc_hmm, k, split):
    for labels in small_sequences():
        ends = list(range(len(labels))) if split else [len(labels) - 1]
        seq = seq_of(abc_hmm, labels, ends)
        for silence in (None, "word-boundaries"):
            fsa = build_hmm_fsa(seq, silence, min_duration=k)
            sil = abc_hmm.silence if silence else None
            for T in range(1, 9):
                expected = {
                    tuple((lab, u) for lab, _, u in p)
                    for p in hmm_paths(labels, set(ends), T, k, sil)
                }
                got = fsa_unit_paths(fsa, T)
                assert got == expected, (labels, ends, silence, T, k)
                assert len(fsa_paths(fsa, T)) == len(expected)
                if all(a != b for a, b in zip(labels, labels[1:])) and T <= 6:
                    strings = hmm_strings(labels, set(ends), 4, T, k, sil)
                    assert fsa_strings(fsa, T) == set(strings)


def test_collapse_determinism(abc_hmm):
    seq = seq_of(abc_hmm, [A, A, B], [1, 2])
    fsa = build_hmm_fsa(seq)
    for T in range(3, 8):
        for path in fsa_paths(fsa, T):
            assert collapse_states(path, fsa) == [0, 1, 2]


@pytest.mark.parametrize("topology", ["ctc", "hmm"])
def test_min_duration_monotone(abc_ctc, abc_hmm, topology):
    for labels in [(A,), (A, B), (A, A, C)]:
        if topology == "ctc":
            base = build_ctc_fsa(seq_of(abc_ctc, labels))
        else:
            base = build_hmm_fsa(seq_of(abc_hmm, labels, list(range(len(labels)))))
        for k in (1, 2, 3):
            tight = apply_min_duration(base, k + 1)
            loose = apply_min_duration(base, k)
            for T in range(1, 9):
                assert fsa_strings(tight, T) <= fsa_strings(loose, T)


def test_hmm_path_count_is_binomial(abc_hmm):
    rng = np.random.default_rng(0)
    for S in range(1, 6):
        labels = rng.integers(0, 3, size=S)
        fsa = build_hmm_fsa(seq_of(abc_hmm, labels), None)
        for T in range(1, 11):
            n = len(fsa_paths(fsa, T))
            assert n == len(hmm_paths(list(labels), set(), T))
            assert n == (math.comb(T - 1, S - 1) if T >= S else 0)


def test_min_frames(abc_ctc, abc_hmm):
    assert build_ctc_fsa(seq_of(abc_ctc, [A, A, B])).min_frames() == 4
    assert build_hmm_fsa(seq_of(abc_hmm, [A, B]), min_duration=3).min_frames() == 6


def test_ctc_space_is_single_state():
    with pytest.raises(ValueError, match="one state"):
        LabelSpace(["A"], eow=False, states=3, blank=True)
