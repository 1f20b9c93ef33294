"""Recover dictionary misses with a phrase classifier and joint training.

Capitalized runs that the dictionary did not match become candidates.  A
character-shape classifier trained on dictionary phrases ranks them, the top
10% form the block, and the block joins training as a second noisy pool with
its own accuracy (estimated on dev).
"""

from hgl.blocking import (
    block_instances,
    build_block,
    estimate_block_accuracy,
    extract_candidates,
    joint_train,
    train_phrase_classifier,
)
from hgl.corpus import Instance, Span, weak_label
from hgl.denoiser import score_instances, sentence_vocab
from hgl.evaluation import RankedResult, pr_auc
from hgl.synth import SynthConfig, synth_generate
from hgl.training import TrainConfig, train

data = synth_generate(SynthConfig(types=("PER", "LOC"), noise=0.3, fn=0.5, instances=1000, dev_instances=300), seed=0)
matched = weak_label(data.train, data.dictionary)
dev_matched = weak_label(data.dev, data.dictionary)
vocab = sentence_vocab(data.train.sentences)

candidates = extract_candidates(data.train, data.dictionary, "PER", matched=matched)
classifier = train_phrase_classifier(data.dictionary, "PER", candidates, seed=0)
block = build_block(candidates, classifier, keep_fraction=0.10)
print(f"{len(candidates)} candidate phrases, {len(block)} admitted")
print("top of the block:", [" ".join(c.phrase) for c in block.admitted[:5]])

blocked = block_instances(block, data.train, "PER")
dev_block = build_block(extract_candidates(data.dev, data.dictionary, "PER", matched=dev_matched), classifier, 0.10)
p_blk = estimate_block_accuracy(block_instances(dev_block, data.dev, "PER"))
print(f"block accuracy on dev: {p_blk:.2f}")

positives = [i for i in matched if i.entity_type == "PER"]
config = TrainConfig(epochs=10, seed=0, context=1)
joint, _ = joint_train(positives, blocked, 0.7, p_blk, config, entity_type="PER", vocab=vocab)
plain = train({"PER": positives}, {"PER": 0.7}, config, vocab=vocab).models["PER"]

# Held-out weak labels plus the dev mentions the dictionary missed.
evaluation = [i for i in dev_matched if i.entity_type == "PER"] + [
    Instance(data.dev[s], s, Span(a, b), t, gold=True)
    for s, a, b, t in data.dev.gold_mentions()
    if t == "PER" and ("PER", data.dev[s].tokens[a:b]) not in data.dictionary
]
for name, model in (("positive-only", plain), ("joint", joint)):
    ranked = RankedResult.from_instances(evaluation, score_instances(model, evaluation))
    print(f"{name:>13}: AP {pr_auc(ranked).auc:.3f}")
