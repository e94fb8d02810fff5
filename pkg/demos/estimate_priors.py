"""Fix transition and prior probabilities from prior knowledge instead of
learning them.

    python3 demos/estimate_priors.py
"""

from fullsum.estimation import p_approx_prior, p_approx_transitions
from fullsum.synthetic import generate
from fullsum.topology import LabelSpace

corpus = generate(seed=0, num_utts=50)

t = p_approx_transitions(80.0, 10.0)
print(f"80 ms phonemes at 10 ms frames: speech loop {t.speech_loop} (7/8)")

t = p_approx_transitions(80.0, 10.0, corpus.utterances, corpus.lexicon)
print(f"with residual silence from the corpus: silence loop {t.silence_loop:.4f}")

t = p_approx_transitions(80.0, 40.0)
print(f"after 4x subsampling: speech loop {t.speech_loop}")

space = LabelSpace(corpus.lexicon.phonemes, eow=False, silence=True)
prior = p_approx_prior(corpus.utterances, corpus.lexicon, space)
for name, p in zip(space.names(), prior.probs):
    print(f"  prior {name:10s} {p:.4f}")
