"""Utterances and the plain-text corpus, lexicon and inventory files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fullsum.topology import RESERVED_NAMES, Lexicon


@dataclass
class Utterance:
    utt_id: str
    duration_ms: float
    words: list[str]
    features: np.ndarray | None = None


def read_inventory(path) -> list[str]:
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line in RESERVED_NAMES:
            raise ValueError(f"{path}: reserved name {line} in phoneme inventory")
        names.append(line)
    return names


def write_inventory(path, phonemes):
    Path(path).write_text("".join(p + "\n" for p in phonemes), encoding="utf-8")


def read_lexicon(path, phonemes: list[str]) -> Lexicon:
    """``WORD<TAB>PH1 PH2 ...`` per line; repeated words add variants."""
    index = {p: i for i, p in enumerate(phonemes)}
    entries: dict[str, list[list[int]]] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            word, pron = line.split("\t", 1)
        except ValueError:
            raise ValueError(f"{path}:{n}: expected WORD<TAB>PHONEMES") from None
        try:
            ids = [index[p] for p in pron.split()]
        except KeyError as e:
            raise ValueError(f"{path}:{n}: unknown phoneme {e.args[0]!r}") from None
        if not ids:
            raise ValueError(f"{path}:{n}: word {word!r} has an empty pronunciation")
        entries.setdefault(word.strip(), []).append(ids)
    return Lexicon(list(phonemes), entries)


def write_lexicon(path, lexicon: Lexicon):
    lines = []
    for word, prons in lexicon.entries.items():
        for pron in prons:
            lines.append(word + "\t" + " ".join(lexicon.phonemes[p] for p in pron) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_corpus(path) -> list[Utterance]:
    """``utt-id<TAB>duration-ms<TAB>words...`` per line."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ValueError(f"{path}:{n}: expected utt-id<TAB>duration-ms<TAB>transcript")
        out.append(Utterance(parts[0], float(parts[1]), parts[2].split()))
    return out


def write_corpus(path, utterances):
    lines = [f"{u.utt_id}\t{u.duration_ms:g}\t{' '.join(u.words)}\n" for u in utterances]
    Path(path).write_text("".join(lines), encoding="utf-8")
