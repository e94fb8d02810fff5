"""Label units, lexica and alignment automata for CTC and HMM-0-1 topologies.

Automata are stored in Mealy form: every arc consumes exactly one frame and
carries the emission label of that frame. State 0 is a non-emitting start
state; every other state is entered only through arcs with a single label, so
a state sequence through the unrolled lattice is equivalent to a frame-level
alignment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SILENCE = "[SILENCE]"
BLANK = "[BLANK]"
RESERVED_NAMES = (SILENCE, BLANK)


class UnitKind(enum.Enum):
    PHONEME = "phoneme"
    SILENCE = "silence"
    BLANK = "blank"


class ArcClass(enum.IntEnum):
    """Transition class of an arc; indexes the pooled transition table."""

    SPEECH_LOOP = 0
    SPEECH_FORWARD = 1
    SILENCE_LOOP = 2
    SILENCE_FORWARD = 3
    BLANK = 4


class Topology(str, enum.Enum):
    CTC = "ctc"
    HMM01 = "hmm01"


@dataclass(frozen=True)
class LabelUnit:
    kind: UnitKind
    phoneme_id: int | None = None
    eow: bool = False
    state_pos: int = 0

    def __post_init__(self):
        if self.kind is not UnitKind.PHONEME:
            if self.phoneme_id is not None or self.eow or self.state_pos != 0:
                raise ValueError(f"{self.kind.value} unit carries no phoneme, eow or state")
        elif self.phoneme_id is None or self.phoneme_id < 0:
            raise ValueError("phoneme unit needs a non-negative phoneme id")
        if self.state_pos not in (0, 1, 2):
            raise ValueError(f"state position must be 0, 1 or 2, got {self.state_pos}")


class LabelSpace:
    """Bijection between label units and emission-label indices.

    Speech units come first, ordered by (phoneme, eow, state); silence and
    blank, when present, take the next indices in that order.
    """

    def __init__(
        self,
        phonemes: Sequence[str],
        eow: bool = True,
        states: int = 1,
        silence: bool = False,
        blank: bool = False,
    ):
        if states not in (1, 3):
            raise ValueError(f"states per phoneme must be 1 or 3, got {states}")
        if blank and states != 1:
            raise ValueError("CTC label spaces use one state per phoneme")
        phonemes = list(phonemes)
        if not phonemes:
            raise ValueError("empty phoneme inventory")
        for name in phonemes:
            if name in RESERVED_NAMES:
                raise ValueError(f"reserved name {name} in phoneme inventory")
        if len(set(phonemes)) != len(phonemes):
            raise ValueError("duplicate phoneme in inventory")
        self.phonemes = phonemes
        self.eow = eow
        self.states = states
        self._n_eow = 2 if eow else 1
        self.num_speech = len(phonemes) * self._n_eow * states
        nxt = self.num_speech
        self.silence: int | None = None
        self.blank: int | None = None
        if silence:
            self.silence, nxt = nxt, nxt + 1
        if blank:
            self.blank, nxt = nxt, nxt + 1
        self.size = nxt
        self._phoneme_index = {p: i for i, p in enumerate(phonemes)}

    @classmethod
    def for_topology(cls, phonemes, topology, eow=True, states=1) -> "LabelSpace":
        topology = Topology(topology)
        return cls(
            phonemes,
            eow=eow,
            states=states,
            silence=topology is Topology.HMM01,
            blank=topology is Topology.CTC,
        )

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, LabelSpace):
            return NotImplemented
        return self.config() == other.config()

    def __hash__(self):
        return hash(repr(self.config()))

    def config(self) -> dict:
        return {
            "phonemes": list(self.phonemes),
            "eow": self.eow,
            "states": self.states,
            "silence": self.silence is not None,
            "blank": self.blank is not None,
        }

    def phoneme_id(self, name: str) -> int:
        try:
            return self._phoneme_index[name]
        except KeyError:
            raise KeyError(f"unknown phoneme {name!r}") from None

    def index(self, unit: LabelUnit) -> int:
        if unit.kind is UnitKind.SILENCE:
            if self.silence is None:
                raise ValueError("label space has no silence")
            return self.silence
        if unit.kind is UnitKind.BLANK:
            if self.blank is None:
                raise ValueError("label space has no blank")
            return self.blank
        if unit.phoneme_id >= len(self.phonemes):
            raise ValueError(f"phoneme id {unit.phoneme_id} outside inventory")
        if unit.eow and not self.eow:
            raise ValueError("eow unit in a space without eow augmentation")
        if unit.state_pos >= self.states:
            raise ValueError(f"state position {unit.state_pos} with {self.states}-state phonemes")
        return (unit.phoneme_id * self._n_eow + int(unit.eow)) * self.states + unit.state_pos

    def unit(self, index: int) -> LabelUnit:
        if index == self.silence:
            return LabelUnit(UnitKind.SILENCE)
        if index == self.blank:
            return LabelUnit(UnitKind.BLANK)
        if not 0 <= index < self.num_speech:
            raise ValueError(f"label index {index} outside label space of size {self.size}")
        rest, pos = divmod(index, self.states)
        pid, eow = divmod(rest, self._n_eow)
        return LabelUnit(UnitKind.PHONEME, pid, bool(eow), pos)

    def name(self, index: int) -> str:
        u = self.unit(index)
        if u.kind is UnitKind.SILENCE:
            return SILENCE
        if u.kind is UnitKind.BLANK:
            return BLANK
        s = self.phonemes[u.phoneme_id] + ("#" if u.eow else "")
        if self.states == 3:
            s += f".{u.state_pos}"
        return s

    def names(self) -> list[str]:
        return [self.name(i) for i in range(self.size)]

    def is_speech(self, index: int) -> bool:
        return 0 <= index < self.num_speech


@dataclass
class Lexicon:
    """Word to pronunciation map over a phoneme inventory.

    Only the first pronunciation of a word is used; later variants are kept
    for round-tripping files.
    """

    phonemes: list[str]
    entries: dict[str, list[list[int]]] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.phonemes:
            if name in RESERVED_NAMES:
                raise ValueError(f"reserved name {name} in phoneme inventory")
        n = len(self.phonemes)
        for word, prons in self.entries.items():
            if not prons:
                raise ValueError(f"word {word!r} has no pronunciation")
            for pron in prons:
                if not pron:
                    raise ValueError(f"word {word!r} has an empty pronunciation")
                if any(not 0 <= p < n for p in pron):
                    raise ValueError(f"word {word!r} references a phoneme outside the inventory")

    @classmethod
    def from_strings(cls, phonemes: Sequence[str], entries: Mapping[str, Sequence[str]]):
        """Build from ``{word: "PH1 PH2"}`` or ``{word: ["PH1", "PH2"]}``."""
        index = {p: i for i, p in enumerate(phonemes)}
        out = {}
        for word, pron in entries.items():
            names = pron.split() if isinstance(pron, str) else list(pron)
            try:
                out[word] = [[index[p] for p in names]]
            except KeyError as e:
                raise ValueError(f"word {word!r} uses unknown phoneme {e.args[0]!r}") from None
        return cls(list(phonemes), out)

    def __contains__(self, word):
        return word in self.entries

    def pronunciation(self, word: str) -> list[int]:
        return self.entries[word][0]

    @property
    def words(self) -> list[str]:
        return list(self.entries)


@dataclass(frozen=True)
class LabelSequence:
    """Speech label units of one utterance, with word membership.

    ``word_ends[i]`` is the index of the last unit of word ``i``.
    """

    units: tuple[LabelUnit, ...]
    word_ends: tuple[int, ...]
    words: tuple[str, ...]
    space: LabelSpace

    def __post_init__(self):
        if not self.units:
            raise ValueError("empty label sequence")
        if len(self.word_ends) != len(self.words):
            raise ValueError("one word end per word required")
        if list(self.word_ends) != sorted(set(self.word_ends)) or self.word_ends[-1] != len(self.units) - 1:
            raise ValueError("word ends must be increasing and close the sequence")

    @property
    def S(self) -> int:
        return len(self.units)

    def __len__(self):
        return len(self.units)

    @property
    def labels(self) -> np.ndarray:
        return np.array([self.space.index(u) for u in self.units], dtype=np.int64)

    @property
    def word_starts(self) -> tuple[int, ...]:
        return (0,) + tuple(e + 1 for e in self.word_ends[:-1])

    def word_of_unit(self) -> np.ndarray:
        out = np.empty(self.S, dtype=np.int64)
        start = 0
        for w, end in enumerate(self.word_ends):
            out[start : end + 1] = w
            start = end + 1
        return out

    @classmethod
    def from_labels(
        cls,
        space: LabelSpace,
        labels: Sequence[int],
        word_ends: Sequence[int] | None = None,
        words: Sequence[str] | None = None,
    ) -> "LabelSequence":
        """Wrap raw speech-label indices; default is a single word."""
        units = tuple(space.unit(int(i)) for i in labels)
        if any(u.kind is not UnitKind.PHONEME for u in units):
            raise ValueError("label sequences hold speech labels only")
        if word_ends is None:
            word_ends = (len(units) - 1,)
        if words is None:
            words = tuple(f"w{i}" for i in range(len(word_ends)))
        return cls(units, tuple(word_ends), tuple(words), space)


def build_label_sequence(
    transcript: Sequence[str] | str,
    lexicon: Lexicon,
    space: LabelSpace,
    utt_id: str | None = None,
) -> LabelSequence:
    """Expand a word transcript into speech label units.

    EOW marking and the states per phoneme are taken from ``space``.
    """
    if isinstance(transcript, str):
        transcript = transcript.split()
    where = f" in utterance {utt_id!r}" if utt_id else ""
    if not transcript:
        raise ValueError(f"empty transcript{where}")
    if list(space.phonemes) != list(lexicon.phonemes):
        raise ValueError("label space and lexicon use different phoneme inventories")
    units: list[LabelUnit] = []
    ends = []
    for word in transcript:
        if word not in lexicon:
            raise KeyError(f"unknown word {word!r}{where}")
        pron = lexicon.pronunciation(word)
        for j, pid in enumerate(pron):
            last = space.eow and j == len(pron) - 1
            for pos in range(space.states):
                units.append(LabelUnit(UnitKind.PHONEME, pid, last, pos))
        ends.append(len(units) - 1)
    return LabelSequence(tuple(units), tuple(ends), tuple(transcript), space)


@dataclass(frozen=True, eq=False)
class AlignmentFsa:
    """Alignment automaton of one label sequence.

    ``state_unit[q]`` is the position in the label sequence a state belongs
    to, or -1 for start, silence and blank states. ``state_word[q]`` is the
    word index for speech states and -1 otherwise.
    """

    num_states: int
    src: np.ndarray
    dst: np.ndarray
    label: np.ndarray
    cls: np.ndarray
    initial: frozenset
    finals: frozenset
    topology: Topology
    min_duration: int
    state_unit: np.ndarray
    state_label: np.ndarray
    seq: LabelSequence

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    def arcs(self) -> list[tuple[int, int, int, ArcClass]]:
        return [
            (int(s), int(d), int(l), ArcClass(int(c)))
            for s, d, l, c in zip(self.src, self.dst, self.label, self.cls)
        ]

    def final_array(self) -> np.ndarray:
        return np.array(sorted(self.finals), dtype=np.int64)

    def min_frames(self) -> int:
        """Length of the shortest accepted path (breadth-first over arcs)."""
        dist = np.full(self.num_states, -1)
        frontier = list(self.initial)
        for q in frontier:
            dist[q] = 0
        head = 0
        while head < len(frontier):
            q = frontier[head]
            head += 1
            for d in self.dst[self.src == q]:
                if dist[d] < 0:
                    dist[d] = dist[q] + 1
                    frontier.append(int(d))
        reach = [dist[f] for f in self.finals if dist[f] >= 0]
        return int(min(reach)) if reach else -1


class _Builder:
    def __init__(self):
        self.arcs: list[tuple[int, int, int, int]] = []
        self.state_unit = [-1]
        self.state_label = [-1]

    def add_state(self, unit: int, label: int) -> int:
        self.state_unit.append(unit)
        self.state_label.append(label)
        return len(self.state_unit) - 1

    def arc(self, s, d, label, cls):
        self.arcs.append((s, d, label, int(cls)))

    def build(self, finals, topology, k, seq) -> AlignmentFsa:
        a = np.array(self.arcs, dtype=np.int64).reshape(-1, 4)
        return AlignmentFsa(
            num_states=len(self.state_unit),
            src=a[:, 0].copy(),
            dst=a[:, 1].copy(),
            label=a[:, 2].copy(),
            cls=a[:, 3].copy(),
            initial=frozenset({0}),
            finals=frozenset(finals),
            topology=topology,
            min_duration=k,
            state_unit=np.array(self.state_unit, dtype=np.int64),
            state_label=np.array(self.state_label, dtype=np.int64),
            seq=seq,
        )


def _speech_chain(b: _Builder, pos: int, label: int, k: int) -> tuple[int, int]:
    """Chain of ``k`` states for one unit; only the last one loops."""
    first = prev = b.add_state(pos, label)
    for _ in range(k - 1):
        q = b.add_state(pos, label)
        b.arc(prev, q, label, ArcClass.SPEECH_FORWARD)
        prev = q
    b.arc(prev, prev, label, ArcClass.SPEECH_LOOP)
    return first, prev


def build_ctc_fsa(seq: LabelSequence, min_duration: int = 1) -> AlignmentFsa:
    """CTC alignment automaton: optional blanks around every unit, mandatory
    between identical neighbours."""
    if min_duration < 1:
        raise ValueError(f"minimum duration must be >= 1, got {min_duration}")
    blank = seq.space.blank
    if blank is None:
        raise ValueError("CTC topology needs a label space with blank")
    labels = seq.labels
    k = min_duration
    b = _Builder()

    def blank_state():
        q = b.add_state(-1, blank)
        b.arc(q, q, blank, ArcClass.BLANK)
        return q

    # exits: states that may be left towards the next unit, with flag "is blank"
    prev_blank = blank_state()
    b.arc(0, prev_blank, blank, ArcClass.BLANK)
    prev_last = 0  # start state acts as the exit of an empty prefix
    prev_label = -1
    for pos, lab in enumerate(labels):
        first, last = _speech_chain(b, pos, int(lab), k)
        b.arc(prev_blank, first, int(lab), ArcClass.SPEECH_FORWARD)
        if lab != prev_label:
            b.arc(prev_last, first, int(lab), ArcClass.SPEECH_FORWARD)
        nb = blank_state()
        b.arc(last, nb, blank, ArcClass.BLANK)
        prev_blank, prev_last, prev_label = nb, last, int(lab)
    return b.build({prev_last, prev_blank}, Topology.CTC, k, seq)


def build_hmm_fsa(
    seq: LabelSequence, silence: str | None = "word-boundaries", min_duration: int = 1
) -> AlignmentFsa:
    """HMM-0-1 automaton: loop and forward arcs only, optional silence at
    every word boundary including sentence begin and end."""
    if min_duration < 1:
        raise ValueError(f"minimum duration must be >= 1, got {min_duration}")
    if silence in (None, "none"):
        use_sil = False
    elif silence == "word-boundaries":
        use_sil = True
        if seq.space.silence is None:
            raise ValueError("silence requested but label space has no silence")
    else:
        raise ValueError(f"unknown silence mode {silence!r}")
    sil = seq.space.silence
    labels = seq.labels
    ends = set(seq.word_ends)
    k = min_duration
    b = _Builder()

    def silence_state(entries):
        q = b.add_state(-1, sil)
        for e in entries:
            b.arc(e, q, sil, ArcClass.SPEECH_FORWARD)
        b.arc(q, q, sil, ArcClass.SILENCE_LOOP)
        return q

    # (state, is_silence) pairs that may enter the next unit
    exits = [(0, False)]
    if use_sil:
        exits.append((silence_state([0]), True))
    for pos, lab in enumerate(labels):
        first, last = _speech_chain(b, pos, int(lab), k)
        for q, is_sil in exits:
            b.arc(q, first, int(lab), ArcClass.SILENCE_FORWARD if is_sil else ArcClass.SPEECH_FORWARD)
        exits = [(last, False)]
        if use_sil and pos in ends:
            exits.append((silence_state([last]), True))
    return b.build({q for q, _ in exits}, Topology.HMM01, k, seq)


def apply_min_duration(fsa: AlignmentFsa, k: int) -> AlignmentFsa:
    """Rebuild ``fsa`` so every speech unit lasts at least ``k`` frames.

    Blank and silence keep their free loops. Durations compose with an
    existing constraint: the result requires ``max(k, fsa.min_duration)``.
    """
    if k < 1:
        raise ValueError(f"minimum duration must be >= 1, got {k}")
    k = max(k, fsa.min_duration)
    if fsa.topology is Topology.CTC:
        return build_ctc_fsa(fsa.seq, min_duration=k)
    has_sil = bool(np.any(fsa.cls == ArcClass.SILENCE_LOOP))
    return build_hmm_fsa(fsa.seq, "word-boundaries" if has_sil else None, min_duration=k)


def build_fsa(seq: LabelSequence, topology, min_duration: int = 1, silence=True) -> AlignmentFsa:
    """Dispatch on topology name."""
    topology = Topology(topology)
    if topology is Topology.CTC:
        return build_ctc_fsa(seq, min_duration)
    return build_hmm_fsa(seq, "word-boundaries" if silence else None, min_duration)


def collapse(path_labels: Iterable[int], topology, space: LabelSpace) -> list[int]:
    """Map a frame label string to its label sequence.

    CTC removes repeats then blanks; HMM removes silence and merges repeats.
    For HMM strings the result is ambiguous when a unit repeats its
    predecessor, so callers with such sequences should use state paths.
    """
    topology = Topology(topology)
    out: list[int] = []
    prev = None
    for lab in path_labels:
        lab = int(lab)
        if lab != prev:
            if topology is Topology.CTC and lab != space.blank:
                out.append(lab)
            elif topology is Topology.HMM01 and lab != space.silence:
                out.append(lab)
        prev = lab
    return out


def collapse_states(state_path: Sequence[int], fsa: AlignmentFsa) -> list[int]:
    """Recover the unit positions visited by a state path, in order."""
    units = []
    for q in state_path:
        u = int(fsa.state_unit[q])
        if u >= 0 and (not units or units[-1] != u):
            units.append(u)
    return units
