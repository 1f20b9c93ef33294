"""Estimate per-type label accuracy from a small gold dev set.

The estimate is snapped to a 5% grid, and the training-pool size is stored
alongside it: together they fix how many correct labels the pool is
expected to contain.
"""

from hgl.corpus import estimate_noise_rate, weak_label
from hgl.hypergeom import correct_count
from hgl.synth import SynthConfig, synth_generate

data = synth_generate(SynthConfig(noise="PER=0.22,LOC=0.41,ORG=0.68", instances=1000, dev_instances=300), seed=1)
train = weak_label(data.train, data.dictionary)
dev = weak_label(data.dev, data.dictionary)

for etype in data.dictionary.types:
    pool = sum(i.entity_type == etype for i in train)
    entry = estimate_noise_rate(dev, etype, population=pool)
    print(f"{etype}: accuracy {entry.accuracy:.2f} over N={entry.population}, "
          f"expected correct K={correct_count(entry.population, entry.accuracy)}")
