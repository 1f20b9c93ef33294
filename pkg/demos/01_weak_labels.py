"""Generate a planted corpus and see what dictionary matching gets wrong.

The generator knows the truth for every span, so the weak labels can be
scored directly: some matches are noise (the phrase is used as a plain word)
and some true entities are missed because their phrase was withheld from
the dictionary.
"""

from collections import Counter

from hgl.corpus import weak_label
from hgl.synth import SynthConfig, synth_generate

config = SynthConfig(types=("PER", "LOC"), noise={"PER": 0.3, "LOC": 0.6}, fn=0.2, instances=500)
data = synth_generate(config, seed=0)

print(f"{len(data.train)} training sentences, {len(data.dev)} dev sentences")
print("example:", " ".join(data.train[0].tokens))

instances = weak_label(data.train, data.dictionary)
counts = Counter((i.entity_type, i.gold) for i in instances)
for etype in config.types:
    right, wrong = counts[(etype, True)], counts[(etype, False)]
    print(f"{etype}: {right + wrong} matches, {wrong / (right + wrong):.1%} of them noise")

noisy = next(i for i in instances if not i.gold)
print("a noisy match:", " ".join(noisy.sentence.tokens), "->", " ".join(noisy.phrase))

matched = {(i.sent_index, i.span.start, i.span.end, i.entity_type) for i in instances}
missed = [m for m in data.train.gold_mentions() if m not in matched]
print(f"{len(missed)} gold mentions never matched (false negatives)")
