"""Binary score/alignment containers, the alignment text format, atomic writes.

Binary containers are little-endian: 4-byte magic, u32 T, u32 L, f32 frame
shift in ms, then the payload (``FSC1`` and ``SAL1``: T*L f32 row-major;
``HAL1``: T u32 label indices).
"""

from __future__ import annotations

import contextlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from fullsum.lattice import FrameScores, HardAlignment, SoftAlignment
from fullsum.models import PriorModel, TransitionModel

_HEADER = struct.Struct("<4sIIf")


@contextlib.contextmanager
def atomic_open(path, mode="wb", **kw):
    """Write to a temporary file next to ``path`` and rename on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **kw) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _write(path, magic: bytes, T, L, shift, payload: bytes):
    with atomic_open(path) as f:
        f.write(_HEADER.pack(magic, T, L, shift))
        f.write(payload)


def _read(path, magic: bytes):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    got, T, L, shift = _HEADER.unpack_from(data)
    if got != magic:
        raise ValueError(f"{path}: expected magic {magic!r}, found {got!r}")
    return T, L, float(shift), data[_HEADER.size :]


def write_frame_scores(path, scores: FrameScores, magic=b"FSC1"):
    s = np.ascontiguousarray(scores.scores, dtype="<f4")
    _write(path, magic, s.shape[0], s.shape[1], scores.frame_shift_ms, s.tobytes())


def read_frame_scores(path, magic=b"FSC1") -> FrameScores:
    T, L, shift, body = _read(path, magic)
    if len(body) != 4 * T * L:
        raise ValueError(f"{path}: payload size does not match T={T}, L={L}")
    return FrameScores(np.frombuffer(body, dtype="<f4").reshape(T, L).astype(np.float64), shift)


def write_features(path, features: np.ndarray, frame_shift_ms=10.0):
    """Feature matrices share the FSC1 container (rows are frames)."""
    f = np.ascontiguousarray(features, dtype="<f4")
    _write(path, b"FSC1", f.shape[0], f.shape[1], frame_shift_ms, f.tobytes())


def read_features(path, with_shift: bool = False):
    T, D, shift, body = _read(path, b"FSC1")
    feats = np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float64)
    return (feats, shift) if with_shift else feats


def write_soft_alignment(path, soft: SoftAlignment):
    soft.check()
    p = np.ascontiguousarray(soft.probs, dtype="<f4")
    _write(path, b"SAL1", p.shape[0], p.shape[1], soft.frame_shift_ms, p.tobytes())


def read_soft_alignment(path) -> SoftAlignment:
    T, L, shift, body = _read(path, b"SAL1")
    return SoftAlignment(np.frombuffer(body, dtype="<f4").reshape(T, L).astype(np.float64), shift)


def write_hard_alignment(path, ali: HardAlignment, num_labels: int):
    lab = np.ascontiguousarray(ali.labels, dtype="<u4")
    _write(path, b"HAL1", len(lab), num_labels, ali.frame_shift_ms, lab.tobytes())


def read_hard_alignment(path) -> HardAlignment:
    T, _, shift, body = _read(path, b"HAL1")
    return HardAlignment(np.frombuffer(body, dtype="<u4").astype(np.int64), frame_shift_ms=shift)


def write_alignments(path, alignments: dict, frame_shift_ms: float | None = None):
    """Segment text format, one line per segment:
    ``utt-id<TAB>start<TAB>end<TAB>token<TAB>kind`` with exclusive ends."""
    shifts = {a.frame_shift_ms for a in alignments.values()}
    if frame_shift_ms is None:
        if len(shifts) > 1:
            raise ValueError("alignments use different frame shifts")
        frame_shift_ms = shifts.pop() if shifts else 10.0
    lines = [f"#frame_shift_ms {frame_shift_ms:g}\n"]
    for utt, ali in alignments.items():
        rows = [(s, e, tok, kind) for (tok, s, e), kind in zip(ali.segments, ali.kinds)]
        rows += [(s, e, tok, "word") for tok, s, e in ali.word_segments]
        # words before their first phoneme at equal start
        rows.sort(key=lambda r: (r[0], r[3] != "word", r[1]))
        lines += [f"{utt}\t{s}\t{e}\t{tok}\t{kind}\n" for s, e, tok, kind in rows]
    with atomic_open(path, "w", encoding="utf-8") as f:
        f.writelines(lines)


def read_alignments(path) -> dict[str, HardAlignment]:
    shift = None
    found: dict[str, HardAlignment] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "frame_shift_ms":
                shift = float(parts[1])
            continue
        try:
            utt, s, e, tok, kind = line.split("\t")
            s, e = int(s), int(e)
        except ValueError:
            raise ValueError(f"{path}:{n}: expected utt<TAB>start<TAB>end<TAB>token<TAB>kind") from None
        if kind not in ("word", "phoneme", "silence", "blank"):
            raise ValueError(f"{path}:{n}: unknown segment kind {kind!r}")
        ali = found.setdefault(utt, HardAlignment(np.zeros(0, dtype=np.int64)))
        if kind == "word":
            ali.word_segments.append((tok, s, e))
        else:
            ali.segments.append((tok, s, e))
            ali.kinds.append(kind)
    if shift is None:
        raise ValueError(f"{path}: missing '#frame_shift_ms' header")
    for ali in found.values():
        ali.frame_shift_ms = shift
        T = max([e for _, _, e in ali.segments + ali.word_segments], default=0)
        ali.labels = np.full(T, -1, dtype=np.int64)
    return found


_TRANSITION_KEYS = ("speech_loop", "speech_forward", "silence_loop", "silence_forward")


def write_transitions(path, t: TransitionModel):
    """Four ``key value`` lines."""
    with atomic_open(path, "w", encoding="utf-8") as f:
        f.writelines(f"{k} {float(getattr(t, k))!r}\n" for k in _TRANSITION_KEYS)


def read_transitions(path) -> TransitionModel:
    vals = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            key, value = line.split()
            vals[key] = float(value)
        except ValueError:
            raise ValueError(f"{path}:{n}: expected 'key value'") from None
    missing = [k for k in _TRANSITION_KEYS if k not in vals]
    if missing:
        raise ValueError(f"{path}: missing {', '.join(missing)}")
    return TransitionModel(*(vals[k] for k in _TRANSITION_KEYS))


def write_prior(path, prior: PriorModel):
    """One ``label probability`` line per label, in index order."""
    names = prior.names or [str(i) for i in range(len(prior))]
    with atomic_open(path, "w", encoding="utf-8") as f:
        f.writelines(f"{n} {float(p)!r}\n" for n, p in zip(names, prior.probs))


def read_prior(path) -> PriorModel:
    names, probs = [], []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            name, value = line.split()
            probs.append(float(value))
        except ValueError:
            raise ValueError(f"{path}:{n}: expected 'label probability'") from None
        names.append(name)
    return PriorModel(np.array(probs), tuple(names))
