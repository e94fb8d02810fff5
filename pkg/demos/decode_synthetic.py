"""Decode the synthetic corpus with a bigram LM estimated from its own
transcripts and score the result.

    python3 demos/decode_synthetic.py
"""

from fullsum.decoder import NGramLm, build_decoding_graph, decode
from fullsum.evaluation import compute_wer
from fullsum.models import Scales
from fullsum.synthetic import generate
from fullsum.trainer import TrainConfig, train

corpus = generate(seed=0, num_utts=50)
train_set, test_set = corpus.utterances[:40], corpus.utterances[40:]
r = train(TrainConfig(variant="p-hmm-s", subsample=4), train_set, corpus.lexicon)

vocab = sorted(corpus.lexicon.words)
lm = NGramLm.from_counts([u.words for u in train_set], vocab)
graph = build_decoding_graph(corpus.lexicon, r.variant, r.space)

hyps, refs = {}, {}
for u in test_set:
    out = decode(r.model.scores(u.features).scores, graph, lm, Scales(), beam=20.0)
    hyps[u.utt_id], refs[u.utt_id] = out.words, u.words
    print(f"{u.utt_id}  ref: {' '.join(u.words):24s} hyp: {' '.join(out.words)}")

w = compute_wer(hyps, refs)
print(f"WER {w.wer:.2f}% (S={w.substitutions} I={w.insertions} D={w.deletions}, N={w.ref_words})")
