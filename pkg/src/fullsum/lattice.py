"""Forward-backward, occupation probabilities and Viterbi over alignment automata.

Time unrolling is implicit: the kernels iterate frames over the static arc
list of an :class:`~fullsum.topology.AlignmentFsa`. All arithmetic is in the
log domain; ``-inf`` is the semiring zero and propagates absorbingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numba
import numpy as np

from fullsum.topology import AlignmentFsa

NEG_INF = -np.inf


class EmptyLatticeError(ValueError):
    """No path of the requested length through the automaton."""


@dataclass
class FrameScores:
    """T x L matrix of per-frame log scores."""

    scores: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError(f"frame scores must be 2-D, got shape {s.shape}")
        if s.shape[0] < 1:
            raise ValueError("frame scores need at least one frame")
        if np.isnan(s).any() or np.isposinf(s).any():
            raise ValueError("frame scores must be finite or -inf")
        bad = np.flatnonzero(np.all(np.isneginf(s), axis=1))
        if bad.size:
            raise ValueError(f"frame {bad[0]} has no finite score")
        self.scores = s

    @property
    def T(self) -> int:
        return self.scores.shape[0]

    @property
    def L(self) -> int:
        return self.scores.shape[1]


@dataclass
class SoftAlignment:
    """Occupation probabilities q_t(l), one row per frame."""

    probs: np.ndarray
    frame_shift_ms: float = 10.0
    log_likelihood: float = float("nan")

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    def check(self, atol: float = 1e-9):
        sums = self.probs.sum(axis=1)
        worst = np.max(np.abs(sums - 1.0))
        if worst > atol:
            raise ValueError(f"occupation rows do not sum to one (max deviation {worst:.3g})")


@dataclass
class HardAlignment:
    """Per-frame labels of a single path plus its unit and word segments.

    Segments are ``(token, start, end)`` with ``end`` exclusive. ``kinds``
    tags each unit segment as phoneme, silence or blank.
    """

    labels: np.ndarray
    segments: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    word_segments: list = field(default_factory=list)
    frame_shift_ms: float = 10.0
    states: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.labels)


class ArcWeightFn(Protocol):
    def __call__(self, fsa: AlignmentFsa, scores: FrameScores) -> np.ndarray:
        """Return the (T, num_arcs) matrix of arc log weights."""


def emission_weights(fsa: AlignmentFsa, scores: FrameScores) -> np.ndarray:
    """Arc weight = frame score of the arc label; unit transitions."""
    return scores.scores[:, fsa.label]


def _as_scores(scores) -> FrameScores:
    return scores if isinstance(scores, FrameScores) else FrameScores(scores)


def _check(fsa: AlignmentFsa, scores: FrameScores):
    if fsa.num_arcs and fsa.label.max() >= scores.L:
        raise ValueError(f"automaton uses label {fsa.label.max()} but scores have L={scores.L}")


@numba.njit(cache=True)
def _lae(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@numba.njit(cache=True)
def _forward(src, dst, w, num_states, initial):
    T = w.shape[0]
    alpha = np.full((T + 1, num_states), -np.inf)
    for q in initial:
        alpha[0, q] = 0.0
    for t in range(T):
        for a in range(src.shape[0]):
            v = alpha[t, src[a]] + w[t, a]
            if v != -np.inf:
                alpha[t + 1, dst[a]] = _lae(alpha[t + 1, dst[a]], v)
    return alpha


@numba.njit(cache=True)
def _backward(src, dst, w, num_states, finals):
    T = w.shape[0]
    beta = np.full((T + 1, num_states), -np.inf)
    for q in finals:
        beta[T, q] = 0.0
    for t in range(T - 1, -1, -1):
        for a in range(src.shape[0]):
            v = beta[t + 1, dst[a]] + w[t, a]
            if v != -np.inf:
                beta[t, src[a]] = _lae(beta[t, src[a]], v)
    return beta


@numba.njit(cache=True)
def _viterbi(src, dst, w, rank, num_states, initial, finals):
    T = w.shape[0]
    A = src.shape[0]
    delta = np.full(num_states, -np.inf)
    for q in initial:
        delta[q] = 0.0
    back = np.full((T, num_states), -1, dtype=np.int64)
    for t in range(T):
        new = np.full(num_states, -np.inf)
        best = back[t]
        for a in range(A):
            v = delta[src[a]] + w[t, a]
            if v == -np.inf:
                continue
            d = dst[a]
            b = best[d]
            if b < 0 or v > new[d]:
                new[d] = v
                best[d] = a
            elif v == new[d]:
                # tie: lower rank wins, then lower source state
                if rank[a] < rank[b] or (rank[a] == rank[b] and src[a] < src[b]):
                    best[d] = a
        delta = new
    end = -1
    score = -np.inf
    for q in finals:
        if delta[q] > score or (delta[q] == score and score != -np.inf and q < end):
            score = delta[q]
            end = q
    arcs = np.full(T, -1, dtype=np.int64)
    if end < 0:
        return score, arcs
    q = end
    for t in range(T - 1, -1, -1):
        a = back[t, q]
        arcs[t] = a
        q = src[a]
    return score, arcs


def _initial(fsa):
    return np.array(sorted(fsa.initial), dtype=np.int64)


def arc_weight_matrix(fsa: AlignmentFsa, scores, weights: ArcWeightFn | None = None) -> np.ndarray:
    scores = _as_scores(scores)
    _check(fsa, scores)
    fn = weights or emission_weights
    w = np.ascontiguousarray(fn(fsa, scores), dtype=np.float64)
    if w.shape != (scores.T, fsa.num_arcs):
        raise ValueError(f"arc weights have shape {w.shape}, expected {(scores.T, fsa.num_arcs)}")
    return w


def forward_score(fsa: AlignmentFsa, scores, weights: ArcWeightFn | None = None) -> float:
    """log of the summed weight of all accepted paths of length T; -inf if none."""
    w = arc_weight_matrix(fsa, scores, weights)
    alpha = _forward(fsa.src, fsa.dst, w, fsa.num_states, _initial(fsa))
    fin = alpha[-1, fsa.final_array()]
    return float(np.logaddexp.reduce(fin)) if fin.size else NEG_INF


@dataclass
class ForwardBackward:
    alpha: np.ndarray
    beta: np.ndarray
    arc_weights: np.ndarray
    total: float

    def arc_posteriors(self, fsa: AlignmentFsa) -> np.ndarray:
        """(T, num_arcs) probability that the path uses each arc at each frame."""
        T = self.arc_weights.shape[0]
        lp = self.alpha[:T, fsa.src] + self.arc_weights + self.beta[1:, fsa.dst] - self.total
        return np.exp(lp)


def forward_backward(fsa: AlignmentFsa, scores, weights: ArcWeightFn | None = None) -> ForwardBackward:
    w = arc_weight_matrix(fsa, scores, weights)
    alpha = _forward(fsa.src, fsa.dst, w, fsa.num_states, _initial(fsa))
    beta = _backward(fsa.src, fsa.dst, w, fsa.num_states, fsa.final_array())
    fin = alpha[-1, fsa.final_array()]
    total = float(np.logaddexp.reduce(fin)) if fin.size else NEG_INF
    return ForwardBackward(alpha, beta, w, total)


def occupation_probabilities(fsa: AlignmentFsa, scores, weights: ArcWeightFn | None = None) -> SoftAlignment:
    """Baum-Welch soft alignment: per-frame posterior mass of every label."""
    scores = _as_scores(scores)
    fb = forward_backward(fsa, scores, weights)
    if fb.total == NEG_INF:
        raise EmptyLatticeError(
            f"no alignment path: T={scores.T} but the automaton needs at least {fsa.min_frames()} frames"
        )
    post = fb.arc_posteriors(fsa)
    q = np.zeros((scores.T, scores.L))
    # labels are few per automaton: accumulate per distinct label
    for lab in np.unique(fsa.label):
        q[:, lab] = post[:, fsa.label == lab].sum(axis=1)
    return SoftAlignment(q, scores.frame_shift_ms, fb.total)


# forward arcs win ties over loops, loops over silence/blank arcs
_RANK = np.array([1, 0, 2, 2, 2], dtype=np.int64)


def viterbi(fsa: AlignmentFsa, scores, weights: ArcWeightFn | None = None) -> tuple[float, HardAlignment]:
    """Best path and its score.

    Ties prefer speech-forward over speech-loop over silence/blank arcs, then
    the lower source state; among final states the lower index wins.
    """
    scores = _as_scores(scores)
    w = arc_weight_matrix(fsa, scores, weights)
    score, arcs = _viterbi(
        fsa.src, fsa.dst, w, _RANK[fsa.cls], fsa.num_states, _initial(fsa), fsa.final_array()
    )
    if score == NEG_INF:
        raise EmptyLatticeError(
            f"no alignment path: T={scores.T} but the automaton needs at least {fsa.min_frames()} frames"
        )
    states = fsa.dst[arcs]
    return float(score), hard_alignment_from_states(fsa, states, scores.frame_shift_ms)


def hard_alignment_from_states(fsa: AlignmentFsa, states: np.ndarray, frame_shift_ms: float = 10.0) -> HardAlignment:
    """Segment a state path into unit and word segments."""
    space = fsa.seq.space
    labels = fsa.state_label[states]
    units = fsa.state_unit[states]
    segments, kinds = [], []
    start = 0
    T = len(states)
    for t in range(1, T + 1):
        if t == T or units[t] != units[start] or (units[t] < 0 and states[t] != states[start]):
            lab = int(labels[start])
            segments.append((space.name(lab), start, t))
            if lab == space.silence:
                kinds.append("silence")
            elif lab == space.blank:
                kinds.append("blank")
            else:
                kinds.append("phoneme")
            start = t
    word_of_unit = fsa.seq.word_of_unit()
    word_segments = []
    for w, name in enumerate(fsa.seq.words):
        frames = np.flatnonzero((units >= 0) & (word_of_unit[np.maximum(units, 0)] == w))
        if frames.size:
            word_segments.append((name, int(frames[0]), int(frames[-1]) + 1))
    return HardAlignment(
        labels=labels.astype(np.int64),
        segments=segments,
        kinds=kinds,
        word_segments=word_segments,
        frame_shift_ms=frame_shift_ms,
        states=np.asarray(states, dtype=np.int64),
    )


def subsample_scores(scores, factor: int) -> FrameScores:
    """Max-pool frames in windows of ``factor``; the last window may be short."""
    if factor < 1:
        raise ValueError(f"subsampling factor must be >= 1, got {factor}")
    scores = _as_scores(scores)
    if factor == 1:
        return FrameScores(scores.scores.copy(), scores.frame_shift_ms)
    starts = np.arange(0, scores.T, factor)
    pooled = np.maximum.reduceat(scores.scores, starts, axis=0)
    return FrameScores(pooled, scores.frame_shift_ms * factor)


def expand_alignment(ali: HardAlignment, factor: int, T: int | None = None) -> HardAlignment:
    """Map a subsampled alignment back to the original frame rate.

    Coarse frame c covers fine frames [c*factor, (c+1)*factor); the last
    segment is clipped to ``T`` when given.
    """
    if factor == 1:
        return ali
    T_fine = T if T is not None else ali.T * factor

    def scale(segs):
        return [(tok, min(s * factor, T_fine), min(e * factor, T_fine)) for tok, s, e in segs]

    labels = np.repeat(ali.labels, factor)[:T_fine]
    states = None if ali.states is None else np.repeat(ali.states, factor)[:T_fine]
    return HardAlignment(
        labels=labels,
        segments=scale(ali.segments),
        kinds=list(ali.kinds),
        word_segments=scale(ali.word_segments),
        frame_shift_ms=ali.frame_shift_ms / factor,
        states=states,
    )
