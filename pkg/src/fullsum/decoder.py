"""Word decoding over a lexical prefix tree with a back-off bigram LM.

Arc conventions match the alignment automata: every arc consumes one
frame and carries the label of the state it enters, and transition
classes are assigned exactly as in :mod:`fullsum.topology`. A word is
emitted on an arc that leaves one of its word-end states, and the LM
score is added there. Sentence end is scored when a hypothesis finishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fullsum.io import atomic_open
from fullsum.lattice import FrameScores
from fullsum.models import ConfigurationError, ModelVariant, PriorModel, Scales, TransitionModel, Variant
from fullsum.topology import ArcClass, LabelSpace, LabelUnit, Lexicon, Topology, UnitKind

BOS, EOS = "<s>", "</s>"
_LN10 = math.log(10.0)


@dataclass
class NGramLm:
    """Back-off LM of order 1 or 2 with natural-log probabilities."""

    vocab: list[str]
    unigrams: dict[str, float]
    bigrams: dict[tuple[str, str], float] = field(default_factory=dict)
    backoff: dict[str, float] = field(default_factory=dict)
    order: int = 2

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError(f"LM order {self.order} not supported (1 or 2)")
        if self.order == 1 and self.bigrams:
            raise ValueError("unigram LM with bigram entries")

    def logprob(self, word: str, history: str = BOS) -> float:
        if self.order == 2:
            lp = self.bigrams.get((history, word))
            if lp is not None:
                return lp
            bow = self.backoff.get(history, 0.0)
        else:
            bow = 0.0
        return bow + self.unigrams.get(word, -math.inf)

    def sentence_logprob(self, words) -> float:
        h, total = BOS, 0.0
        for w in list(words) + [EOS]:
            total += self.logprob(w, h)
            h = w
        return total

    @classmethod
    def uniform(cls, vocab) -> "NGramLm":
        vocab = list(vocab)
        lp = -math.log(len(vocab) + 1)
        return cls(vocab, {w: lp for w in vocab + [EOS]}, order=1)

    @classmethod
    def from_counts(cls, sentences, vocab=None, discount: float = 0.5) -> "NGramLm":
        """Add-one unigrams; absolutely discounted bigrams backing off to them."""
        sentences = [list(s) for s in sentences]
        if vocab is None:
            vocab = sorted({w for s in sentences for w in s})
        vocab = list(vocab)
        events = vocab + [EOS]
        uni = dict.fromkeys(events, 0)
        big: dict[tuple[str, str], int] = {}
        for s in sentences:
            toks = [BOS] + s + [EOS]
            for h, w in zip(toks, toks[1:]):
                if w not in uni:
                    raise ValueError(f"word {w!r} not in vocabulary")
                uni[w] += 1
                big[(h, w)] = big.get((h, w), 0) + 1
        n = sum(uni.values())
        p_uni = {w: (c + 1) / (n + len(events)) for w, c in uni.items()}
        bigrams, backoff = {}, {}
        for h in [BOS] + vocab:
            seen = {w: c for (hh, w), c in big.items() if hh == h}
            if not seen:
                continue
            total = sum(seen.values())
            rest = 1.0 - sum(p_uni[w] for w in seen)
            d = discount if rest > 1e-12 else 0.0
            for w, c in seen.items():
                bigrams[(h, w)] = math.log((c - d) / total)
            if d:
                backoff[h] = math.log(d * len(seen) / total / rest)
        return cls(vocab, {w: math.log(p) for w, p in p_uni.items()}, bigrams, backoff, 2)

    def check_normalized(self, atol: float = 1e-6):
        events = self.vocab + [EOS]
        for h in [BOS] + self.vocab:
            s = sum(math.exp(self.logprob(w, h)) for w in events)
            if abs(s - 1) > atol:
                raise ValueError(f"probabilities after {h!r} sum to {s}")

    def write_arpa(self, path):
        def f(x):
            return "-99" if x == -math.inf else f"{x / _LN10:.12g}"

        lines = ["\\data\\", f"ngram 1={len(self.unigrams) + 1}"]
        if self.order == 2:
            lines.append(f"ngram 2={len(self.bigrams)}")
        lines += ["", "\\1-grams:"]
        for w in [BOS] + list(self.unigrams):
            lp = self.unigrams.get(w, -math.inf)
            row = f"{f(lp)}\t{w}"
            if w in self.backoff:
                row += f"\t{f(self.backoff[w])}"
            lines.append(row)
        if self.order == 2:
            lines += ["", "\\2-grams:"]
            lines += [f"{f(lp)}\t{h} {w}" for (h, w), lp in self.bigrams.items()]
        lines += ["", "\\end\\", ""]
        with atomic_open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines))

    @classmethod
    def read_arpa(cls, path, max_order: int = 2) -> "NGramLm":
        uni, big, bow = {}, {}, {}
        order = 0
        section = None
        for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
            elif line == "\\end\\":
                break
            elif line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:-7])
                if section > max_order:
                    raise ValueError(f"{path}:{n}: {section}-grams exceed the supported order {max_order}")
                order = max(order, section)
            elif section == "data":
                continue
            elif section in (1, 2):
                parts = line.split()
                try:
                    lp = float(parts[0]) * _LN10
                    words = parts[1 : 1 + section]
                    b = float(parts[1 + section]) * _LN10 if len(parts) > 1 + section else None
                except (ValueError, IndexError):
                    raise ValueError(f"{path}:{n}: malformed {section}-gram line") from None
                if len(words) != section:
                    raise ValueError(f"{path}:{n}: malformed {section}-gram line")
                if section == 1:
                    if words[0] != BOS:
                        uni[words[0]] = lp
                    if b is not None:
                        bow[words[0]] = b
                else:
                    big[tuple(words)] = lp
            else:
                raise ValueError(f"{path}:{n}: unexpected line outside a section")
        if not uni:
            raise ValueError(f"{path}: no unigrams")
        vocab = [w for w in uni if w != EOS]
        return cls(vocab, uni, big, bow if order == 2 else {}, max(order, 1))


@dataclass
class _Node:
    label: int
    children: dict = field(default_factory=dict)
    words: list = field(default_factory=list)
    first: int = -1
    last: int = -1
    blank: int = -1


@dataclass
class DecodingGraph:
    """Prefix tree expanded into emitting states.

    ``out[q]`` lists arcs ``(dst, arc class, word id or -1)``;
    ``pending[q]`` are the words that end when a path stops in ``q``;
    ``silence_final`` marks states that end a sentence without a word.
    """

    space: LabelSpace
    topology: Topology
    words: list[str]
    state_label: list[int]
    out: list[list[tuple[int, int, int]]]
    pending: dict[int, list[int]]
    silence_final: set[int]
    min_duration: int = 1
    root: _Node | None = None

    @property
    def num_states(self) -> int:
        return len(self.state_label)


def _pronunciation_labels(pron, space: LabelSpace) -> list[int]:
    out = []
    for j, pid in enumerate(pron):
        last = space.eow and j == len(pron) - 1
        for pos in range(space.states):
            out.append(space.index(LabelUnit(UnitKind.PHONEME, pid, last, pos)))
    return out


def build_decoding_graph(
    lexicon: Lexicon, variant, space: LabelSpace | None = None, min_duration: int = 1
) -> DecodingGraph:
    """Prefix tree over all pronunciation variants, composed with the
    blank (CTC) or silence (HMM) topology of ``variant``."""
    if isinstance(variant, ModelVariant):
        topology = variant.topology
    elif isinstance(variant, Topology):
        topology = variant
    else:
        try:
            topology = Variant(variant).topology
        except ValueError:
            topology = Topology(variant)
    if min_duration < 1:
        raise ValueError(f"minimum duration must be >= 1, got {min_duration}")
    if not lexicon.words:
        raise ValueError("empty lexicon")
    if space is None:
        space = LabelSpace.for_topology(lexicon.phonemes, topology)
    words = sorted(lexicon.words)
    root = _Node(-1)
    for wid, w in enumerate(words):
        for pron in lexicon.entries[w]:
            if not pron:
                raise ValueError(f"word {w!r} has an empty pronunciation")
            node = root
            for lab in _pronunciation_labels(pron, space):
                node = node.children.setdefault(lab, _Node(lab))
            if wid not in node.words:
                node.words.append(wid)

    labels = [-1]
    out: list[list] = [[]]

    def state(label):
        labels.append(label)
        out.append([])
        return len(labels) - 1

    def arc(s, d, cls, w=-1):
        out[s].append((d, int(cls), w))

    k = min_duration
    nodes = []

    def expand(node):
        for lab in sorted(node.children):
            child = node.children[lab]
            prev = child.first = state(lab)
            for _ in range(k - 1):
                q = state(lab)
                arc(prev, q, ArcClass.SPEECH_FORWARD)
                prev = q
            child.last = prev
            arc(prev, prev, ArcClass.SPEECH_LOOP)
            nodes.append(child)
            expand(child)

    expand(root)
    roots = [root.children[l] for l in sorted(root.children)]
    pending: dict[int, list[int]] = {}
    silence_final: set[int] = set()

    if topology is Topology.CTC:
        blank = space.blank
        if blank is None:
            raise ValueError("CTC decoding needs a label space with blank")
        start_blank = state(blank)
        arc(0, start_blank, ArcClass.BLANK)
        arc(start_blank, start_blank, ArcClass.BLANK)
        for c in roots:
            arc(0, c.first, ArcClass.SPEECH_FORWARD)
            arc(start_blank, c.first, ArcClass.SPEECH_FORWARD)
        for n in nodes:
            n.blank = state(blank)
            arc(n.last, n.blank, ArcClass.BLANK)
            arc(n.blank, n.blank, ArcClass.BLANK)
            for c in (n.children[l] for l in sorted(n.children)):
                if c.label != n.label:
                    arc(n.last, c.first, ArcClass.SPEECH_FORWARD)
                arc(n.blank, c.first, ArcClass.SPEECH_FORWARD)
            for w in n.words:
                for c in roots:
                    if c.label != n.label:
                        arc(n.last, c.first, ArcClass.SPEECH_FORWARD, w)
                    arc(n.blank, c.first, ArcClass.SPEECH_FORWARD, w)
            if n.words:
                pending[n.last] = pending[n.blank] = list(n.words)
    else:
        sil = space.silence
        if sil is None:
            raise ValueError("HMM decoding needs a label space with silence")
        s = state(sil)
        arc(0, s, ArcClass.SPEECH_FORWARD)
        arc(s, s, ArcClass.SILENCE_LOOP)
        silence_final.add(s)
        for c in roots:
            arc(0, c.first, ArcClass.SPEECH_FORWARD)
            arc(s, c.first, ArcClass.SILENCE_FORWARD)
        for n in nodes:
            for c in (n.children[l] for l in sorted(n.children)):
                arc(n.last, c.first, ArcClass.SPEECH_FORWARD)
            for w in n.words:
                for c in roots:
                    arc(n.last, c.first, ArcClass.SPEECH_FORWARD, w)
                arc(n.last, s, ArcClass.SPEECH_FORWARD, w)
            if n.words:
                pending[n.last] = list(n.words)
    return DecodingGraph(space, topology, words, labels, out, pending, silence_final, k, root)


@dataclass
class DecodeResult:
    words: list[str]
    score: float


def _static_weights(graph, scales: Scales, prior, transitions, L):
    offset = np.zeros(L)
    if scales.alpha != 0:
        if prior is None:
            raise ConfigurationError("alpha > 0 needs a prior model")
        if len(prior) != L:
            raise ConfigurationError(f"prior has {len(prior)} entries for {L} labels")
        offset = -scales.alpha * prior.log()
    cls_w = np.zeros(5)
    if scales.beta != 0:
        if transitions is None:
            raise ConfigurationError("beta > 0 needs a transition model")
        cls_w = scales.beta * transitions.log_table()
    return offset, cls_w


def decode(
    posteriors,
    graph: DecodingGraph,
    lm: NGramLm,
    scales: Scales | None = None,
    prior: PriorModel | None = None,
    transitions: TransitionModel | None = None,
    beam: float = math.inf,
) -> DecodeResult:
    """Best word sequence under
    ``sum_t [gamma*log y - alpha*log prior + beta*log T] + lam*log P_LM(W)``.

    Recombination keeps the best token per (state, LM history); exact ties
    keep the lexicographically smaller word sequence. ``beam`` prunes
    tokens more than ``beam`` below the best one after every frame.
    """
    scales = scales or Scales()
    if not beam > 0:
        raise ValueError("beam must be positive")
    post = posteriors if isinstance(posteriors, FrameScores) else FrameScores(posteriors)
    if post.L != graph.space.size:
        raise ValueError(f"posteriors have {post.L} labels, the graph uses {graph.space.size}")
    missing = [w for w in graph.words if w not in lm.unigrams]
    if missing:
        raise ValueError(f"words missing from the LM: {', '.join(missing)}")
    offset, cls_w = _static_weights(graph, scales, prior, transitions, post.L)
    lam = scales.lam
    emis = (scales.gamma * post.scores if scales.gamma != 0 else np.zeros_like(post.scores)) + offset
    words = graph.words

    def lm_score(w, h):
        return lam * lm.logprob(w, h) if lam != 0 else 0.0

    tokens = {(0, BOS): (0.0, ())}
    for t in range(post.T):
        row = emis[t]
        new: dict = {}
        for (q, h), (sc, ws) in tokens.items():
            for d, c, w in graph.out[q]:
                s = sc + row[graph.state_label[d]] + cls_w[c]
                if w >= 0:
                    wn = words[w]
                    s += lm_score(wn, h)
                    key, nws = (d, wn), ws + (wn,)
                else:
                    key, nws = (d, h), ws
                if s == -math.inf:
                    continue
                old = new.get(key)
                if old is None or s > old[0] or (s == old[0] and nws < old[1]):
                    new[key] = (s, nws)
        if new and beam != math.inf:
            best = max(v[0] for v in new.values())
            new = {k: v for k, v in new.items() if v[0] >= best - beam}
        tokens = new
    best = None
    for (q, h), (sc, ws) in tokens.items():
        cands = []
        for w in graph.pending.get(q, ()):
            wn = words[w]
            cands.append((sc + lm_score(wn, h) + lm_score(EOS, wn), ws + (wn,)))
        if q in graph.silence_final and h != BOS:
            cands.append((sc + lm_score(EOS, h), ws))
        for s, cws in cands:
            if s == -math.inf:
                continue
            if best is None or s > best[0] or (s == best[0] and cws < best[1]):
                best = (s, cws)
    if best is None:
        raise ValueError(
            "no complete hypothesis survived"
            + (f" the beam of {beam}; try a larger beam" if beam != math.inf else "; T may be too short")
        )
    return DecodeResult(list(best[1]), float(best[0]))


def write_hypotheses(path, results: dict):
    """``utt-id<TAB>word sequence<TAB>score`` per line."""
    with atomic_open(path, "w", encoding="utf-8") as f:
        for utt, r in results.items():
            f.write(f"{utt}\t{' '.join(r.words)}\t{r.score!r}\n")


def read_hypotheses(path) -> dict[str, list[str]]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"{path}:{n}: expected utt-id<TAB>words[<TAB>score]")
        out[parts[0]] = parts[1].split()
    return out
