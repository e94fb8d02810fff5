"""Fixed transition and prior probabilities from prior knowledge (P-approx),
and priors marginalised from model posteriors.

Speech durations come from an assumed mean phoneme length; whatever audio
is left in an utterance is taken to be silence, split evenly between a
begin and an end segment. Silence durations are fitted with a geometric
model, ``loop = 1 - 1 / mean_segment_frames``.
"""

from __future__ import annotations

import logging
from typing import Iterable

import numpy as np

from fullsum.models import PriorModel, TransitionModel
from fullsum.topology import LabelSpace, Lexicon, build_label_sequence

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-4


def _speech_loop(mean_phoneme_ms, frame_shift_ms, states):
    if frame_shift_ms <= 0:
        raise ValueError("frame shift must be positive")
    per_state = mean_phoneme_ms / states
    if per_state < frame_shift_ms:
        raise ValueError(
            f"mean duration per state {per_state} ms is shorter than the frame shift {frame_shift_ms} ms"
        )
    return 1.0 - frame_shift_ms / per_state


def _utterance_frames(corpus, lexicon, mean_phoneme_ms, frame_shift_ms):
    """(audio frames, expected speech frames, phoneme count) per utterance."""
    out = []
    for utt in corpus:
        n_ph = 0
        for w in utt.words:
            if w not in lexicon:
                raise KeyError(f"unknown word {w!r} in utterance {utt.utt_id!r}")
            n_ph += len(lexicon.pronunciation(w))
        out.append((utt.duration_ms / frame_shift_ms, n_ph * mean_phoneme_ms / frame_shift_ms, n_ph))
    return out


def p_approx_transitions(
    mean_phoneme_ms: float = 80.0,
    frame_shift_ms: float = 10.0,
    corpus=None,
    lexicon: Lexicon | None = None,
    states: int = 1,
) -> TransitionModel:
    """Pooled transition model from the mean phoneme duration.

    For three-state phonemes each state gets a third of the mean duration.
    """
    speech_loop = _speech_loop(mean_phoneme_ms, frame_shift_ms, states)
    silence_frames = 0.0
    n_utts = 0
    if corpus is not None:
        if lexicon is None:
            raise ValueError("a lexicon is needed to count phonemes in the corpus")
        for audio, speech, _ in _utterance_frames(corpus, lexicon, mean_phoneme_ms, frame_shift_ms):
            silence_frames += max(0.0, audio - speech)
            n_utts += 1
    if silence_frames <= 0:
        log.warning("no silence estimated from the corpus; silence transitions copy speech transitions")
        return TransitionModel.from_loops(speech_loop, speech_loop)
    mean_segment = silence_frames / (2 * n_utts)
    silence_loop = max(0.0, 1.0 - 1.0 / mean_segment)
    return TransitionModel.from_loops(speech_loop, silence_loop)


def apply_floor(probs: np.ndarray, floor: float) -> np.ndarray:
    """Raise entries below ``floor`` to exactly ``floor`` and rescale the rest."""
    p = np.asarray(probs, dtype=np.float64)
    p = p / p.sum()
    if floor <= 0:
        return p
    if floor * p.size >= 1:
        raise ValueError(f"floor {floor} too large for {p.size} labels")
    low = p < floor
    while True:
        rest = p[~low].sum()
        q = np.where(low, floor, p * (1 - floor * low.sum()) / rest)
        grown = low | (q < floor)
        if np.array_equal(grown, low):
            return q
        low = grown


def p_approx_prior(
    corpus,
    lexicon: Lexicon,
    space: LabelSpace,
    mean_phoneme_ms: float = 80.0,
    frame_shift_ms: float = 10.0,
    floor: float = DEFAULT_FLOOR,
) -> PriorModel:
    """Label prior from transcript counts and residual silence.

    Each unit is credited its expected number of frames; silence residuals
    are computed per utterance (clamped at zero) and pooled over the corpus.
    """
    if space.silence is None:
        raise ValueError("P-approx prior needs a label space with silence")
    frames_per_unit = mean_phoneme_ms / space.states / frame_shift_ms
    mass = np.zeros(space.size)
    for utt in corpus:
        seq = build_label_sequence(utt.words, lexicon, space, utt.utt_id)
        np.add.at(mass, seq.labels, frames_per_unit)
        audio = utt.duration_ms / frame_shift_ms
        speech = seq.S * frames_per_unit
        if speech > audio:
            log.warning(
                "utterance %s: expected speech (%.1f frames) exceeds audio (%.1f frames); no silence credited",
                utt.utt_id, speech, audio,
            )
        mass[space.silence] += max(0.0, audio - speech)
    if mass.sum() <= 0:
        raise ValueError("empty corpus")
    return PriorModel(apply_floor(mass, floor), tuple(space.names()))


def marginal_prior(batches: Iterable[np.ndarray], floor: float = DEFAULT_FLOOR, names=None) -> PriorModel:
    """Average softmax posterior over every frame of ``batches``.

    Batches are arrays of log posteriors with shape (T, L).
    """
    total = None
    frames = 0
    for b in batches:
        b = np.asarray(b, dtype=np.float64)
        s = np.exp(b).sum(axis=0)
        total = s if total is None else total + s
        frames += b.shape[0]
    if not frames:
        raise ValueError("marginal prior needs at least one frame")
    return PriorModel(apply_floor(total / frames, floor), names)
