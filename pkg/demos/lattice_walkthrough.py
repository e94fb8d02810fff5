"""Build CTC and HMM alignment automata for one word and compare the
full-sum score with the single best path.

    python3 demos/lattice_walkthrough.py
"""

import numpy as np

from fullsum.lattice import FrameScores, forward_score, occupation_probabilities, viterbi
from fullsum.topology import LabelSpace, Lexicon, build_fsa, build_label_sequence

lexicon = Lexicon.from_strings(["B", "AA", "D"], {"bad": "B AA D"})
rng = np.random.default_rng(0)

for topology in ("ctc", "hmm01"):
    space = LabelSpace.for_topology(lexicon.phonemes, topology, eow=False)
    seq = build_label_sequence(["bad"], lexicon, space)
    for k in (1, 2):
        fsa = build_fsa(seq, topology, min_duration=k)
        logits = rng.normal(size=(9, space.size))
        scores = FrameScores(logits - np.logaddexp.reduce(logits, axis=1, keepdims=True))
        total = forward_score(fsa, scores)
        best, ali = viterbi(fsa, scores)
        soft = occupation_probabilities(fsa, scores)
        path = " ".join(space.name(int(i)) for i in ali.labels)
        print(f"{topology} k={k}: {fsa.num_states} states, {len(fsa.src)} arcs")
        print(f"  log full-sum {total:.4f}  log best path {best:.4f}")
        print(f"  best path   {path}")
        print(f"  frame 4 occupation {np.round(soft.probs[4], 3)}")
