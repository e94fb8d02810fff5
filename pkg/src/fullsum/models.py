"""Arc weights, full-sum losses and their gradients for the four model variants.

=========  ===========================================================
variant    per-arc log weight at frame t
=========  ===========================================================
ctc        gamma * log P(y_t | h_t)
p-hmm      gamma * log P(a | h_t) + beta * log T(class)
p-hmm-s    gamma * log P(a | h_t)
h-hmm      gamma * log P(a | h_t) - alpha * log P_prior(a) + beta * log T(class)
=========  ===========================================================

Scales multiply log terms directly; nothing is renormalised afterwards.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from fullsum.lattice import (
    EmptyLatticeError,
    FrameScores,
    forward_backward,
    forward_score,
)
from fullsum.topology import AlignmentFsa, Topology


class ConfigurationError(ValueError):
    pass


class Variant(str, enum.Enum):
    CTC = "ctc"
    P_HMM = "p-hmm"
    P_HMM_S = "p-hmm-s"
    H_HMM = "h-hmm"

    @property
    def topology(self) -> Topology:
        return Topology.CTC if self is Variant.CTC else Topology.HMM01


@dataclass(frozen=True)
class TransitionModel:
    """Pooled loop/forward probabilities for speech and silence states."""

    speech_loop: float
    speech_forward: float
    silence_loop: float
    silence_forward: float

    def __post_init__(self):
        for name in ("speech_loop", "speech_forward", "silence_loop", "silence_forward"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} is not a probability")
        if abs(self.speech_loop + self.speech_forward - 1.0) > 1e-12:
            raise ValueError("speech loop and forward must sum to one")
        if abs(self.silence_loop + self.silence_forward - 1.0) > 1e-12:
            raise ValueError("silence loop and forward must sum to one")

    @classmethod
    def from_loops(cls, speech_loop: float, silence_loop: float) -> "TransitionModel":
        return cls(speech_loop, 1.0 - speech_loop, silence_loop, 1.0 - silence_loop)

    @classmethod
    def uniform(cls) -> "TransitionModel":
        return cls(0.5, 0.5, 0.5, 0.5)

    def log_table(self) -> np.ndarray:
        """Log probability per :class:`ArcClass`; blank arcs carry 0."""
        with np.errstate(divide="ignore"):
            return np.log(
                np.array(
                    [self.speech_loop, self.speech_forward, self.silence_loop, self.silence_forward, 1.0]
                )
            )


@dataclass(frozen=True)
class PriorModel:
    probs: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("prior must be a non-empty vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("prior entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"prior sums to {p.sum()}, not one")
        if self.names is not None and len(self.names) != p.size:
            raise ValueError("one name per prior entry required")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


@dataclass(frozen=True)
class Scales:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"scale {name} must be finite and non-negative, got {v}")


DEFAULT_SCALES = {
    Variant.CTC: Scales(),
    Variant.P_HMM_S: Scales(),
    Variant.P_HMM: Scales(beta=0.1),
    Variant.H_HMM: Scales(alpha=0.3, beta=0.1),
}


@dataclass(frozen=True)
class ModelVariant:
    kind: Variant
    transitions: TransitionModel | None = None
    prior: PriorModel | None = None
    scales: Scales = field(default_factory=Scales)

    @classmethod
    def create(cls, kind, transitions=None, prior=None, **scales) -> "ModelVariant":
        """Variant with the default scales of its kind, overridden by ``scales``."""
        kind = Variant(kind)
        sc = replace(DEFAULT_SCALES[kind], **{k: v for k, v in scales.items() if v is not None})
        if kind is Variant.P_HMM_S and transitions is None:
            transitions = TransitionModel.uniform()
        return cls(kind, transitions, prior, sc)

    @property
    def topology(self) -> Topology:
        return self.kind.topology

    def validate(self, num_labels: int | None = None):
        if self.kind in (Variant.P_HMM, Variant.H_HMM) and self.transitions is None:
            raise ConfigurationError(f"{self.kind.value} needs a transition model")
        if self.kind is Variant.H_HMM:
            if self.prior is None:
                raise ConfigurationError("h-hmm needs a prior model")
            if num_labels is not None and len(self.prior) != num_labels:
                raise ConfigurationError(f"prior has {len(self.prior)} entries for {num_labels} labels")
            if self.scales.alpha > 0 and np.any(self.prior.probs == 0):
                raise ConfigurationError("prior has zero entries; apply a floor before dividing by it")


class LogLinearWeights:
    """Arc weight function ``gamma*score - alpha*log prior + beta*log T``."""

    def __init__(self, gamma: float, class_log: np.ndarray | None = None, label_offset: np.ndarray | None = None):
        self.gamma = gamma
        self.class_log = class_log
        self.label_offset = label_offset

    def __call__(self, fsa: AlignmentFsa, scores: FrameScores) -> np.ndarray:
        if self.gamma == 0:
            w = np.zeros((scores.T, fsa.num_arcs))
        else:
            w = self.gamma * scores.scores[:, fsa.label]
        if self.label_offset is not None:
            w = w + self.label_offset[fsa.label]
        if self.class_log is not None:
            w = w + self.class_log[fsa.cls]
        return w


def arc_weight_fn(variant: ModelVariant, posteriors: FrameScores | None = None) -> LogLinearWeights:
    L = posteriors.L if posteriors is not None else None
    variant.validate(L)
    sc = variant.scales
    if variant.kind in (Variant.CTC, Variant.P_HMM_S):
        return LogLinearWeights(sc.gamma)
    # beta = 0 must drop the term even where a transition is zero (0 * -inf)
    class_log = sc.beta * variant.transitions.log_table() if sc.beta != 0 else None
    offset = None
    if variant.kind is Variant.H_HMM and sc.alpha != 0:
        offset = -sc.alpha * variant.prior.log()
    return LogLinearWeights(sc.gamma, class_log, offset)


def _check_topology(variant: ModelVariant, fsa: AlignmentFsa):
    if fsa.topology is not variant.topology:
        raise ConfigurationError(
            f"variant {variant.kind.value} needs a {variant.topology.value} automaton, got {fsa.topology.value}"
        )


def _empty(fsa, scores, utt_id):
    name = f"utterance {utt_id!r}: " if utt_id else ""
    return EmptyLatticeError(
        f"{name}empty lattice, T={scores.T} but at least {fsa.min_frames()} frames are required"
    )


def _as_scores(posteriors) -> FrameScores:
    return posteriors if isinstance(posteriors, FrameScores) else FrameScores(posteriors)


def full_sum_loss(variant: ModelVariant, fsa: AlignmentFsa, posteriors, utt_id: str | None = None) -> float:
    """Negative log of the summed path weight under the variant's arc weights."""
    _check_topology(variant, fsa)
    posteriors = _as_scores(posteriors)
    score = forward_score(fsa, posteriors, arc_weight_fn(variant, posteriors))
    if score == -np.inf:
        raise _empty(fsa, posteriors, utt_id)
    return -score


def loss_and_gradient(
    variant: ModelVariant, fsa: AlignmentFsa, posteriors, utt_id: str | None = None
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, gradient w.r.t. the logits behind ``posteriors``, and q.

    ``posteriors`` must be log-softmax rows. The gradient is
    ``gamma * (softmax - q)``; prior and transition terms are constants.
    """
    _check_topology(variant, fsa)
    posteriors = _as_scores(posteriors)
    weights = arc_weight_fn(variant, posteriors)
    fb = forward_backward(fsa, posteriors, weights)
    if fb.total == -np.inf:
        raise _empty(fsa, posteriors, utt_id)
    post = fb.arc_posteriors(fsa)
    q = np.zeros_like(posteriors.scores)
    np.add.at(q.T, fsa.label, post.T)
    grad = variant.scales.gamma * (np.exp(posteriors.scores) - q)
    return -fb.total, grad, q


def loss_gradient(variant: ModelVariant, fsa: AlignmentFsa, posteriors, utt_id: str | None = None) -> np.ndarray:
    return loss_and_gradient(variant, fsa, posteriors, utt_id)[1]


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
