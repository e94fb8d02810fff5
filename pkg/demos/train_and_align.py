"""Train on the planted-alignment synthetic corpus and measure how well
Viterbi alignments recover the planted word boundaries.

Frame-level training (factor 1) is compared with 4x frame stacking, the
setting in which the transition-free posterior HMM reliably converges.

    python3 demos/train_and_align.py
"""

from fullsum.evaluation import compute_tse
from fullsum.synthetic import generate
from fullsum.trainer import TrainConfig, align_corpus, train

corpus = generate(seed=0, num_utts=50)

for variant, factor in [("ctc", 4), ("p-hmm-s", 4), ("p-hmm-s", 1), ("h-hmm", 1)]:
    r = train(TrainConfig(variant=variant, subsample=factor), corpus.utterances, corpus.lexicon)
    ali = align_corpus(r.model, r.variant, corpus.utterances, corpus.lexicon, r.space)
    tse = compute_tse(ali, corpus.reference)
    reached = r.epochs_to(0.1)
    print(
        f"{variant:8s} x{factor}: loss {r.losses[0]:9.2f} -> {r.losses[-1]:9.2f}, "
        f"10% bar at epoch {reached}, TSE {tse.mean_ms:.1f} ms over {tse.word_count} words"
    )
