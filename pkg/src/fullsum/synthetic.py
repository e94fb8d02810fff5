"""Seeded toy corpus with a planted HMM-0-1 alignment.

Every frame carries the one-hot identity of its planted label (phonemes,
then silence) plus Gaussian noise. Phoneme durations are geometric with the
loop probability of an 80 ms mean at 10 ms shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fullsum.corpus import Utterance, write_corpus, write_inventory, write_lexicon
from fullsum.io import write_alignments, write_features
from fullsum.lattice import HardAlignment
from fullsum.topology import SILENCE, Lexicon

PHONEMES = ["AA", "B", "D", "EH", "K", "S"]
WORDS = {
    "bad": "B AA D",
    "bed": "B EH D",
    "dab": "D AA B",
    "sea": "S EH",
    "ask": "AA S K",
    "kid": "K EH D",
    "as": "AA S",
    "deck": "D EH K",
}


@dataclass
class SyntheticCorpus:
    lexicon: Lexicon
    utterances: list[Utterance]
    reference: dict[str, HardAlignment]
    frame_shift_ms: float = 10.0

    @property
    def feature_dim(self) -> int:
        return len(self.lexicon.phonemes) + 1

    def save(self, directory):
        """Write inventory, lexicon, corpus, features/, reference.ali and a
        bigram lm.arpa estimated from the transcripts."""
        from fullsum.decoder import NGramLm

        d = Path(directory)
        (d / "features").mkdir(parents=True, exist_ok=True)
        write_inventory(d / "inventory.txt", self.lexicon.phonemes)
        write_lexicon(d / "lexicon.txt", self.lexicon)
        write_corpus(d / "corpus.txt", self.utterances)
        for u in self.utterances:
            write_features(d / "features" / f"{u.utt_id}.fsc", u.features, self.frame_shift_ms)
        write_alignments(d / "reference.ali", self.reference, self.frame_shift_ms)
        lm = NGramLm.from_counts([u.words for u in self.utterances], sorted(self.lexicon.words))
        lm.write_arpa(d / "lm.arpa")


def _geometric(rng, loop: float) -> int:
    return int(rng.geometric(1.0 - loop))


def generate(
    seed: int = 0,
    num_utts: int = 50,
    words_per_utt: tuple[int, int] = (2, 4),
    speech_loop: float = 7 / 8,
    silence_loop: float = 5 / 6,
    pause_prob: float = 0.5,
    noise: float = 0.1,
    frame_shift_ms: float = 10.0,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    lexicon = Lexicon.from_strings(PHONEMES, WORDS)
    vocab = lexicon.words
    sil = len(PHONEMES)
    utts, refs = [], {}
    for n in range(num_utts):
        utt_id = f"syn{n:04d}"
        words = [vocab[i] for i in rng.integers(len(vocab), size=rng.integers(words_per_utt[0], words_per_utt[1] + 1))]
        labels: list[int] = []
        segments, kinds, word_segments = [], [], []

        def add(label, dur, name, kind):
            segments.append((name, len(labels), len(labels) + dur))
            kinds.append(kind)
            labels.extend([label] * dur)

        add(sil, _geometric(rng, silence_loop), SILENCE, "silence")
        for i, w in enumerate(words):
            if i and rng.random() < pause_prob:
                add(sil, _geometric(rng, silence_loop), SILENCE, "silence")
            start = len(labels)
            for p in lexicon.pronunciation(w):
                add(p, _geometric(rng, speech_loop), PHONEMES[p], "phoneme")
            word_segments.append((w, start, len(labels)))
        add(sil, _geometric(rng, silence_loop), SILENCE, "silence")
        lab = np.array(labels, dtype=np.int64)
        feats = np.eye(sil + 1)[lab] + noise * rng.standard_normal((len(lab), sil + 1))
        # stored as f32 on disk; keep the in-memory copy identical
        feats = feats.astype(np.float32).astype(np.float64)
        utts.append(Utterance(utt_id, len(lab) * frame_shift_ms, words, feats))
        refs[utt_id] = HardAlignment(lab, segments, kinds, word_segments, frame_shift_ms)
    return SyntheticCorpus(lexicon, utts, refs, frame_shift_ms)
