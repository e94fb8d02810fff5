"""Alignment and recognition metrics: time-stamp error, WER, alignment plots."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from fullsum.lattice import HardAlignment, SoftAlignment

log = logging.getLogger(__name__)


@dataclass
class TseReport:
    """Time-stamp error summary.

    ``mean_ms`` averages over both boundaries of every matched word:
    total absolute error / (2 * word_count).
    """

    mean_ms: float
    word_count: int
    total_ms: float
    per_utterance: dict = field(default_factory=dict)
    histogram: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def compute_tse(candidate: dict, reference: dict, bin_ms: float = 10.0) -> TseReport:
    """Compare word boundaries of two alignment sets.

    Both sides map utterance ids to :class:`HardAlignment`; each side's own
    frame shift converts frames to ms. Utterances whose word sequences
    differ are skipped and listed in ``skipped``.
    """
    common = [u for u in candidate if u in reference]
    if not common:
        raise ValueError("candidate and reference share no utterances")
    total, words = 0.0, 0
    per_utt, errors, skipped = {}, [], []
    for utt in common:
        cand, ref = candidate[utt], reference[utt]
        cw = [w for w, _, _ in cand.word_segments]
        rw = [w for w, _, _ in ref.word_segments]
        if cw != rw:
            log.warning("utterance %s: word sequences differ, skipped", utt)
            skipped.append(utt)
            continue
        utt_err = 0.0
        for (_, cs, ce), (_, rs, re_) in zip(cand.word_segments, ref.word_segments):
            ds = abs(cs * cand.frame_shift_ms - rs * ref.frame_shift_ms)
            de = abs(ce * cand.frame_shift_ms - re_ * ref.frame_shift_ms)
            errors += [ds, de]
            utt_err += ds + de
        per_utt[utt] = (utt_err, len(cw))
        total += utt_err
        words += len(cw)
    for utt in candidate:
        if utt not in reference:
            skipped.append(utt)
    mean = total / (2 * words) if words else float("nan")
    hist = []
    if errors:
        e = np.asarray(errors)
        top = int(e.max() // bin_ms) + 1
        counts = np.bincount((e // bin_ms).astype(int), minlength=top)
        hist = [(i * bin_ms, int(c)) for i, c in enumerate(counts)]
    return TseReport(mean, words, total, per_utt, hist, skipped)


@dataclass
class WerReport:
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def _edit_counts(ref, hyp) -> tuple[int, int, int]:
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), d[i - 1, j] + 1, d[i, j - 1] + 1)
    # backtrace, preferring substitution/match, then deletion, then insertion
    i, j = n, m
    sub = ins = dele = 0
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            sub += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i, j] == d[i - 1, j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return sub, ins, dele


def compute_wer(hypotheses: dict, references: dict) -> WerReport:
    """Word error rate in percent; inputs map utterance ids to word lists."""
    if not references or not sum(len(r) for r in references.values()):
        raise ValueError("empty reference corpus")
    S = I = D = N = 0
    for utt, ref in references.items():
        if utt not in hypotheses:
            raise ValueError(f"no hypothesis for utterance {utt!r}")
        ref = ref.split() if isinstance(ref, str) else list(ref)
        hyp = hypotheses[utt]
        hyp = hyp.split() if isinstance(hyp, str) else list(hyp)
        s, i, d = _edit_counts(ref, hyp)
        S, I, D, N = S + s, I + i, D + d, N + len(ref)
    return WerReport(100.0 * (S + I + D) / N, S, I, D, N)


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def render_alignment_svg(
    soft: SoftAlignment | None = None,
    hard: HardAlignment | None = None,
    reference: HardAlignment | None = None,
    label_names=None,
    cell: int = 12,
) -> str:
    """SVG heatmap of occupation mass with the hard path as a step line.

    Time runs along x, labels along y. Reference unit boundaries are drawn
    as vertical rules, reference label rows as horizontal rules.
    """
    if soft is None and hard is None:
        raise ValueError("need a soft or a hard alignment")
    Ts = {a.T for a in (soft, hard) if a is not None}
    if reference is not None and reference.segments:
        Ts.add(reference.segments[-1][2])
    if len(Ts) != 1:
        raise ValueError(f"inconsistent frame counts {sorted(Ts)}")
    T = Ts.pop()
    if soft is not None:
        L = soft.probs.shape[1]
    else:
        L = int(hard.labels.max()) + 1
    if label_names is not None:
        L = max(L, len(label_names))
    names = list(label_names) if label_names is not None else [str(i) for i in range(L)]
    left, top = 80, 10
    width, height = left + T * cell + 10, top + L * cell + 30
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="{left}" y="{top}" width="{T * cell}" height="{L * cell}" fill="white" stroke="black"/>',
    ]
    for l in range(L):
        y = top + l * cell
        out.append(
            f'<text x="{left - 4}" y="{y + cell - 2}" font-size="{cell - 2}" text-anchor="end">{escape(names[l])}</text>'
        )
    if soft is not None:
        for t in range(T):
            for l in range(L):
                v = soft.probs[t, l]
                if v > 0.005:
                    out.append(
                        f'<rect x="{left + t * cell}" y="{top + l * cell}" width="{cell}" height="{cell}" '
                        f'fill="black" fill-opacity="{_fmt(v)}"/>'
                    )
    if reference is not None:
        bounds = sorted({s for _, s, _ in reference.segments} | {e for _, _, e in reference.segments})
        for b in bounds:
            x = left + b * cell
            out.append(f'<line x1="{x}" y1="{top}" x2="{x}" y2="{top + L * cell}" stroke="blue" stroke-width="1"/>')
        if len(reference.labels) and reference.labels.min() >= 0:
            for l in sorted(set(int(x) for x in reference.labels)):
                y = top + l * cell + cell / 2
                out.append(
                    f'<line x1="{left}" y1="{_fmt(y)}" x2="{left + T * cell}" y2="{_fmt(y)}" '
                    f'stroke="blue" stroke-width="0.5" stroke-dasharray="2,2"/>'
                )
    if hard is not None:
        pts = []
        for t, l in enumerate(hard.labels):
            y = top + int(l) * cell + cell / 2
            pts += [f"{left + t * cell},{_fmt(y)}", f"{left + (t + 1) * cell},{_fmt(y)}"]
        out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="red" stroke-width="2"/>')
    for t in range(0, T + 1, 5):
        x = left + t * cell
        out.append(
            f'<text x="{x}" y="{top + L * cell + 14}" font-size="{cell - 2}" text-anchor="middle">{t}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_alignment_plot(out_path, soft=None, hard=None, reference=None, label_names=None) -> Path:
    from fullsum.io import atomic_open

    svg = render_alignment_svg(soft, hard, reference, label_names)
    with atomic_open(out_path, "w", encoding="utf-8") as f:
        f.write(svg)
    return Path(out_path)
