import itertools

import numpy as np
import pytest

from fullsum.topology import LabelSequence, LabelSpace


def fsa_paths(fsa, T):
    """All accepted length-T state paths, by depth-first search over arcs."""
    out_arcs = {}
    for a, (s, d) in enumerate(zip(fsa.src, fsa.dst)):
        out_arcs.setdefault(int(s), []).append(int(d))
    paths = []

    def walk(q, path):
        if len(path) == T:
            if q in fsa.finals:
                paths.append(tuple(path))
            return
        for d in out_arcs.get(q, []):
            walk(d, path + [d])

    for q in fsa.initial:
        walk(q, [])
    return paths


def fsa_strings(fsa, T):
    return {tuple(int(fsa.state_label[q]) for q in p) for p in fsa_paths(fsa, T)}


def fsa_unit_paths(fsa, T):
    return {tuple((int(fsa.state_label[q]), int(fsa.state_unit[q])) for q in p) for p in fsa_paths(fsa, T)}


@pytest.fixture
def abc_ctc():
    return LabelSpace(["A", "B", "C"], eow=False, states=1, blank=True)


@pytest.fixture
def abc_hmm():
    return LabelSpace(["A", "B", "C"], eow=False, states=1, silence=True)


def small_sequences(max_s=3, n_sym=3):
    for S in range(1, max_s + 1):
        yield from itertools.product(range(n_sym), repeat=S)


def seq_of(space, labels, word_ends=None):
    return LabelSequence.from_labels(space, labels, word_ends)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
