"""Full-sum training of a small framewise acoustic model.

The model stacks windows of ``subsample`` input frames into one vector,
then applies one tanh hidden layer and a softmax output.
Optimisation is plain SGD under a one-cycle learning-rate schedule.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from fullsum.estimation import DEFAULT_FLOOR, p_approx_prior, p_approx_transitions
from fullsum.io import atomic_open
from fullsum.lattice import (
    FrameScores,
    expand_alignment,
    forward_score,
    occupation_probabilities,
    viterbi,
)
from fullsum.evaluation import compute_tse
from fullsum.models import (
    ModelVariant,
    PriorModel,
    Scales,
    TransitionModel,
    Variant,
    arc_weight_fn,
    log_softmax,
    loss_and_gradient,
)
from fullsum.topology import LabelSpace, Lexicon, build_fsa, build_label_sequence

log = logging.getLogger(__name__)

MAGIC = b"AMD1"


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "p-hmm-s"
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    subsample: int = 1
    min_duration: int = 1
    epochs: int = 50
    batch_size: int = 2
    peak_lr: float = 4.0
    oclr_fraction: float = 0.9
    min_lr: float = 1e-5
    seed: int = 0
    hidden: int = 64
    eow: bool = False
    mean_phoneme_ms: float = 80.0
    prior_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        Variant(self.variant)
        if not 0 < self.oclr_fraction <= 1:
            raise ValueError(f"oclr_fraction must be in (0, 1], got {self.oclr_fraction}")
        for name in ("subsample", "min_duration", "epochs", "batch_size", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.peak_lr <= 0 or self.min_lr < 0:
            raise ValueError("learning rates must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def lr_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """One-cycle rise from peak/10 to peak and back over the first
    ``oclr_fraction`` of the steps, then constant ``min_lr``."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    peak = config.peak_lr
    low = peak / 10
    span = config.oclr_fraction * total_steps
    mid = span / 2
    if step >= span:
        return config.min_lr
    if step < mid:
        return low + (peak - low) * step / mid
    return peak - (peak - low) * (step - mid) / (span - mid)


@dataclass
class AcousticModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    subsample: int = 1
    space: dict = field(default_factory=dict)

    @classmethod
    def init(cls, dim: int, hidden: int, labels: int, seed: int, subsample: int = 1, space=None):
        """``dim`` is the per-frame feature dimension."""
        rng = np.random.default_rng(seed)
        dim *= subsample
        return cls(
            rng.normal(0, 1 / math.sqrt(dim), (dim, hidden)),
            np.zeros(hidden),
            rng.normal(0, 1 / math.sqrt(hidden), (hidden, labels)),
            np.zeros(labels),
            subsample,
            dict(space or {}),
        )

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def num_labels(self) -> int:
        return self.W2.shape[1]

    def stack(self, features: np.ndarray) -> np.ndarray:
        """Concatenate every ``subsample`` consecutive frames into one input
        row, zero-padding the last window."""
        f = self.subsample
        if f == 1:
            return features
        T, D = features.shape
        Tc = -(-T // f)
        x = np.zeros((Tc * f, D))
        x[:T] = features
        return x.reshape(Tc, f * D)

    def log_posteriors(self, features: np.ndarray) -> np.ndarray:
        h = np.tanh(self.stack(features) @ self.W1 + self.b1)
        return log_softmax(h @ self.W2 + self.b2)

    def scores(self, features: np.ndarray, frame_shift_ms: float = 10.0) -> FrameScores:
        return FrameScores(self.log_posteriors(features), frame_shift_ms * self.subsample)

    def backward(self, features: np.ndarray, dlogits: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given the gradient w.r.t. the output logits."""
        x = self.stack(features)
        h = np.tanh(x @ self.W1 + self.b1)
        da = (dlogits @ self.W2.T) * (1 - h * h)
        return [x.T @ da, da.sum(axis=0), h.T @ dlogits, dlogits.sum(axis=0)]

    def save(self, path, config: dict | None = None, fingerprint: str | None = None):
        meta = {"subsample": self.subsample, "space": self.space, "config": config or {}}
        blob = json.dumps(meta, sort_keys=True).encode()
        fp = bytes.fromhex(fingerprint) if fingerprint else hashlib.sha256(blob).digest()
        with atomic_open(path) as f:
            f.write(MAGIC + fp + struct.pack("<I", len(blob)) + blob)
            for t in self.params:
                f.write(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
                f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> tuple["AcousticModel", dict, str]:
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        fp = data[4:36].hex()
        (n,) = struct.unpack_from("<I", data, 36)
        meta = json.loads(data[40 : 40 + n])
        off = 40 + n
        tensors = []
        for _ in range(4):
            (nd,) = struct.unpack_from("<I", data, off)
            shape = struct.unpack_from(f"<{nd}I", data, off + 4)
            off += 4 + 4 * nd
            size = int(np.prod(shape)) * 8
            tensors.append(np.frombuffer(data[off : off + size], dtype="<f8").reshape(shape).copy())
            off += size
        return cls(*tensors, meta["subsample"], meta["space"]), meta["config"], fp


@dataclass
class _Item:
    utt_id: str
    features: np.ndarray
    fsa: object


@dataclass
class TrainResult:
    model: AcousticModel
    variant: ModelVariant
    space: LabelSpace
    losses: list[float]
    lrs: list[float]
    skipped: list[str]
    fingerprint: str
    descent_checks: list[bool] = field(default_factory=list)

    def epochs_to(self, fraction: float = 0.1) -> int | None:
        """First epoch whose loss is at most ``fraction`` of the initial loss."""
        for e, l in enumerate(self.losses):
            if l <= fraction * self.losses[0]:
                return e
        return None

    def write_trace(self, path):
        with atomic_open(path, "w", encoding="utf-8") as f:
            f.write("epoch,loss,lr\n")
            for e, (l, r) in enumerate(zip(self.losses, self.lrs)):
                f.write(f"{e},{float(l)!r},{float(r)!r}\n")


def label_space(phonemes, config: TrainConfig) -> LabelSpace:
    return LabelSpace.for_topology(phonemes, Variant(config.variant).topology, eow=config.eow)


def make_variant(config: TrainConfig, corpus, lexicon: Lexicon, space: LabelSpace, frame_shift_ms=10.0) -> ModelVariant:
    """Variant with P-approx transitions/prior where the kind needs them."""
    kind = Variant(config.variant)
    transitions = prior = None
    shift = frame_shift_ms * config.subsample
    if kind in (Variant.P_HMM, Variant.H_HMM):
        # mean duration cannot be shorter than one (subsampled) frame
        mean = max(config.mean_phoneme_ms, shift)
        transitions = p_approx_transitions(mean, shift, corpus, lexicon)
        if kind is Variant.H_HMM:
            prior = p_approx_prior(corpus, lexicon, space, mean, shift, config.prior_floor)
    return ModelVariant.create(
        kind, transitions, prior, alpha=config.alpha, beta=config.beta, gamma=config.gamma
    )


def prepare(corpus, lexicon: Lexicon, space: LabelSpace, config: TrainConfig):
    """Build automata, dropping utterances whose lattice would be empty."""
    topo = Variant(config.variant).topology
    items, skipped = [], []
    for u in corpus:
        if u.features is None:
            raise ValueError(f"utterance {u.utt_id!r} has no features")
        seq = build_label_sequence(u.words, lexicon, space, u.utt_id)
        fsa = build_fsa(seq, topo, config.min_duration)
        T = math.ceil(len(u.features) / config.subsample)
        need = fsa.min_frames()
        if need > T:
            log.warning("utterance %s: T=%d but at least %d frames are required, skipped", u.utt_id, T, need)
            skipped.append(u.utt_id)
            continue
        items.append(_Item(u.utt_id, u.features, fsa))
    if not items:
        raise ValueError(f"all {len(skipped)} utterances have empty lattices; nothing to train on")
    if skipped:
        log.warning("%d of %d utterances skipped", len(skipped), len(corpus))
    return items, skipped


def _utt_grad(model, variant, item):
    lp = model.log_posteriors(item.features)
    loss, dlogits, _ = loss_and_gradient(variant, item.fsa, FrameScores(lp), item.utt_id)
    return loss, model.backward(item.features, dlogits), len(lp)


def _batch(model, variant, batch, pool):
    results = list(pool.map(lambda it: _utt_grad(model, variant, it), batch)) if pool else [
        _utt_grad(model, variant, it) for it in batch
    ]
    frames = sum(r[2] for r in results)
    grads = [sum(r[1][i] for r in results) / frames for i in range(4)]
    return sum(r[0] for r in results), grads


def corpus_loss(model, variant, items) -> float:
    """Mean per-utterance loss."""
    total = 0.0
    for it in items:
        lp = FrameScores(model.log_posteriors(it.features))
        total += -forward_score(it.fsa, lp, arc_weight_fn(variant, lp))
    return total / len(items)


def train(
    config: TrainConfig,
    corpus,
    lexicon: Lexicon,
    frame_shift_ms: float = 10.0,
    jobs: int = 1,
    descent_check_every: int = 0,
) -> TrainResult:
    space = label_space(lexicon.phonemes, config)
    variant = make_variant(config, corpus, lexicon, space, frame_shift_ms)
    variant.validate(space.size)
    items, skipped = prepare(corpus, lexicon, space, config)
    dim = items[0].features.shape[1]
    model = AcousticModel.init(dim, config.hidden, space.size, config.seed, config.subsample, space.config())
    rng = np.random.default_rng(config.seed + 1)
    steps_per_epoch = math.ceil(len(items) / config.batch_size)
    total = steps_per_epoch * config.epochs
    losses = [corpus_loss(model, variant, items)]
    lrs = [0.0]
    checks = []
    step = 0
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(items))
            for b in range(steps_per_epoch):
                batch = [items[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
                loss, grads = _batch(model, variant, batch, pool)
                lr = lr_schedule(step, total, config)
                if descent_check_every and step % descent_check_every == 0:
                    checks.append(_descent_holds(model, variant, batch, grads, loss))
                for p, g in zip(model.params, grads):
                    p -= lr * g
                step += 1
            losses.append(corpus_loss(model, variant, items))
            lrs.append(lr)
            if not math.isfinite(losses[-1]):
                log.warning("loss diverged at epoch %d", epoch + 1)
                break
            log.info("epoch %d loss %.4f lr %.3g", epoch + 1, losses[-1], lr)
    finally:
        if pool:
            pool.shutdown()
    return TrainResult(model, variant, space, losses, lrs, skipped, config.fingerprint(), checks)


def _descent_holds(model, variant, batch, grads, loss, eps=1e-4) -> bool:
    """A small step against the gradient must not increase the batch loss."""
    trial = AcousticModel(*[p - eps * g for p, g in zip(model.params, grads)], model.subsample, model.space)
    after = 0.0
    for it in batch:
        lp = FrameScores(trial.log_posteriors(it.features))
        after += -forward_score(it.fsa, lp, arc_weight_fn(variant, lp))
    return after <= loss


def align_corpus(
    model: AcousticModel,
    variant: ModelVariant,
    corpus,
    lexicon: Lexicon,
    space: LabelSpace,
    min_duration: int = 1,
    mode: str = "viterbi",
    frame_shift_ms: float = 10.0,
    expand: bool = True,
):
    """Viterbi (HardAlignment) or Baum-Welch (SoftAlignment) per utterance.

    Viterbi alignments of subsampled models are expanded back to the input
    frame rate when ``expand`` is set.
    """
    out = {}
    for u in corpus:
        seq = build_label_sequence(u.words, lexicon, space, u.utt_id)
        fsa = build_fsa(seq, variant.topology, min_duration)
        scores = model.scores(u.features, frame_shift_ms)
        weights = arc_weight_fn(variant, scores)
        if mode == "viterbi":
            _, ali = viterbi(fsa, scores, weights)
            if expand and model.subsample > 1:
                ali = expand_alignment(ali, model.subsample, len(u.features))
            out[u.utt_id] = ali
        elif mode == "baum-welch":
            out[u.utt_id] = occupation_probabilities(fsa, scores, weights)
        else:
            raise ValueError(f"unknown alignment mode {mode!r}")
    return out


def variant_to_dict(v: ModelVariant) -> dict:
    return {
        "kind": v.kind.value,
        "scales": asdict(v.scales),
        "transitions": None if v.transitions is None else asdict(v.transitions),
        "prior": None if v.prior is None else [float(x) for x in v.prior.probs],
        "prior_names": None if v.prior is None or v.prior.names is None else list(v.prior.names),
    }


def variant_from_dict(d: dict) -> ModelVariant:
    t = TransitionModel(**d["transitions"]) if d.get("transitions") else None
    p = None
    if d.get("prior") is not None:
        names = d.get("prior_names")
        p = PriorModel(np.array(d["prior"]), tuple(names) if names else None)
    return ModelVariant(Variant(d["kind"]), t, p, Scales(**d["scales"]))


def save_checkpoint(path, result: TrainResult, config: TrainConfig):
    meta = {"train": asdict(config), "variant": variant_to_dict(result.variant)}
    result.model.save(path, meta, result.fingerprint)


def load_checkpoint(path):
    """(model, variant, label space, train config dict, fingerprint)."""
    model, meta, fp = AcousticModel.load(path)
    return model, variant_from_dict(meta["variant"]), LabelSpace(**model.space), meta["train"], fp


@dataclass
class SweepCell:
    alpha: float
    beta: float
    gamma: float
    initial_loss: float
    final_loss: float
    tse_ms: float | None
    converged: bool


def scale_sweep(
    base: TrainConfig,
    corpus,
    lexicon: Lexicon,
    alphas,
    betas,
    gamma: float = 1.0,
    reference: dict | None = None,
    tse_bar_ms: float = 20.0,
    frame_shift_ms: float = 10.0,
    jobs: int = 1,
) -> list[SweepCell]:
    """Train one model per (alpha, beta) cell and mark convergence.

    With a reference alignment a cell converged when its Viterbi word
    boundaries are within ``tse_bar_ms`` of the reference; without one,
    when the final loss is finite and below the initial loss.
    """
    from dataclasses import replace

    cells = []
    for a in alphas:
        for b in betas:
            cfg = replace(base, alpha=a, beta=b, gamma=gamma)
            r = train(cfg, corpus, lexicon, frame_shift_ms, jobs)
            final = r.losses[-1]
            tse = None
            if reference is not None and math.isfinite(final):
                ali = align_corpus(r.model, r.variant, corpus, lexicon, r.space, cfg.min_duration, "viterbi", frame_shift_ms)
                tse = compute_tse(ali, reference).mean_ms
                ok = tse <= tse_bar_ms
            else:
                ok = math.isfinite(final) and final < r.losses[0]
            cells.append(SweepCell(a, b, gamma, r.losses[0], final, tse, ok))
    return cells
