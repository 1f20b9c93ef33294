"""Mention blocking: recover likely false negatives for a second denoising pool.

Candidate phrases that the dictionary did not label are scored by a
context-free phrase classifier trained on the dictionary itself.  The top
fraction forms a *block* whose members are mostly non-mentions; the
denoiser is then trained jointly on the weakly labeled pool and the block,
each with the hypergeometric loss at its own accuracy.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import math
import warnings

import numpy as np
from scipy.special import expit

from .corpus import BLOCKED_CANDIDATE, Instance, Span, snap_to_grid, weak_label
from .errors import ConfigError, ParameterError
from .training import AdamState, Pool, adam_step, fit, new_model, weighted_bce
from .denoiser import build_vocab

__all__ = [
    "MAX_CANDIDATE_LENGTH",
    "PhraseCandidate",
    "PhraseClassifier",
    "Block",
    "capitalized_runs",
    "extract_candidates",
    "phrase_features",
    "train_phrase_classifier",
    "build_block",
    "block_instances",
    "estimate_block_accuracy",
    "joint_train",
    "write_block",
]

MAX_CANDIDATE_LENGTH = 6
MIN_POSITIVES = 20


@dataclass
class PhraseCandidate:
    phrase: tuple
    # (sentence index, Span) for every occurrence, in corpus order.
    occurrences: tuple
    score: float = float("nan")


def capitalized_runs(tokens, max_len=MAX_CANDIDATE_LENGTH):
    """Maximal runs of capitalized tokens; runs longer than ``max_len`` are dropped."""
    spans, i = [], 0
    while i < len(tokens):
        if tokens[i][:1].isupper():
            j = i
            while j < len(tokens) and tokens[j][:1].isupper():
                j += 1
            if j - i <= max_len:
                spans.append(Span(i, j))
            i = j
        else:
            i += 1
    return spans


def extract_candidates(corpus, dictionary, entity_type, chunker="auto", matched=None):
    """Unlabeled candidate phrases for ``entity_type``, deduplicated and sorted.

    ``chunker`` is ``"capitalized"``, ``"column"`` (the corpus chunk column)
    or ``"auto"`` (the column when any sentence has one).  Spans overlapping
    a weak label of this type, and dictionary phrases of the type, are
    excluded.  ``matched`` may pass precomputed ``weak_label`` output.
    """
    if chunker not in ("auto", "capitalized", "column"):
        raise ConfigError(f"unknown chunker {chunker!r}")
    if chunker == "auto":
        chunker = "column" if any(s.chunks is not None for s in corpus) else "capitalized"
    if matched is None:
        matched = weak_label(corpus, dictionary)
    labeled = {}
    for inst in matched:
        if inst.entity_type == entity_type:
            labeled.setdefault(inst.sent_index, []).append(inst.span)
    found = {}
    for si, sent in enumerate(corpus):
        spans = (sent.chunks or ()) if chunker == "column" else capitalized_runs(sent.tokens)
        for span in spans:
            span = Span(*span)
            if any(span.overlaps(other) for other in labeled.get(si, ())):
                continue
            phrase = sent.tokens[span.start:span.end]
            if (entity_type, phrase) in dictionary:
                continue
            found.setdefault(phrase, []).append((si, span))
    return [PhraseCandidate(p, tuple(occ)) for p, occ in sorted(found.items())]


def _shape(token):
    out = []
    for ch in token:
        c = "X" if ch.isupper() else "x" if ch.islower() else "d" if ch.isdigit() else ch
        if not out or out[-1] != c:
            out.append(c)
    return "".join(out)


def phrase_features(phrase):
    """Sparse features of a phrase: identity, shape, suffixes and length."""
    feats = [f"len={min(len(phrase), MAX_CANDIDATE_LENGTH)}"]
    for i, tok in enumerate(phrase):
        last = "L" if i == len(phrase) - 1 else "M"
        feats.append(f"w={tok}")
        feats.append(f"shape={_shape(tok)}")
        for n in (2, 3, 4):
            if len(tok) > n:
                feats.append(f"suf{n}{last}={tok[-n:]}")
    return feats


class PhraseClassifier:
    """Mean-pooled feature embeddings scored by an affine + sigmoid head."""

    def __init__(self, features, params):
        self.features = dict(features)
        self.params = params

    def _ids(self, phrase):
        ids = [self.features[f] for f in phrase_features(phrase) if f in self.features]
        return ids or [0]

    def _pool(self, phrases):
        emb = self.params["embeddings"]
        return np.stack([emb[self._ids(p)].mean(axis=0) for p in phrases])

    def score(self, phrases):
        phrases = [tuple(p) for p in phrases]
        if not phrases:
            return np.empty(0)
        return expit(self._pool(phrases) @ self.params["w"] + self.params["b"])


def train_phrase_classifier(dictionary, entity_type, candidates, seed=0, epochs=40, lr=1e-2, dim=16, batch_size=32):
    """Dictionary phrases of the type against an equal-size sample of other phrases."""
    positives = sorted(dictionary.phrases(entity_type))
    if not positives:
        raise ParameterError(f"no dictionary phrases of type {entity_type!r} to train on")
    if len(positives) < MIN_POSITIVES:
        warnings.warn(f"only {len(positives)} dictionary phrases of type {entity_type!r}; classifier will be weak",
                      stacklevel=2)
    pos_set = set(positives)
    others = {tuple(c.phrase) for c in candidates}
    for etype in dictionary.types:
        if etype != entity_type:
            others.update(dictionary.phrases(etype))
    others = sorted(others - pos_set)
    rng = np.random.default_rng(seed)
    n_neg = min(len(positives), len(others))
    negatives = [others[i] for i in sorted(rng.choice(len(others), size=n_neg, replace=False))] if n_neg else []

    phrases = positives + negatives
    labels = np.array([1.0] * len(positives) + [0.0] * len(negatives))
    names = sorted({f for p in phrases for f in phrase_features(p)})
    features = {"[UNK]": 0, **{f: i + 1 for i, f in enumerate(names)}}
    clf = PhraseClassifier(features, {
        "embeddings": rng.uniform(-0.1, 0.1, size=(len(features), dim)),
        "w": rng.uniform(-1.0, 1.0, size=dim) / np.sqrt(dim),
        "b": np.zeros(()),
    })
    ids = [clf._ids(p) for p in phrases]
    state = AdamState()
    for _ in range(epochs):
        for rows in np.array_split(rng.permutation(len(phrases)), max(1, math.ceil(len(phrases) / batch_size))):
            emb, w = clf.params["embeddings"], clf.params["w"]
            pooled = np.stack([emb[ids[r]].mean(axis=0) for r in rows])
            f = expit(pooled @ w + clf.params["b"])
            _, df, _ = weighted_bce(f, labels[rows])
            dz = df * f * (1.0 - f)
            d_emb = np.zeros_like(emb)
            for k, r in enumerate(rows):
                np.add.at(d_emb, ids[r], dz[k] * w / len(ids[r]))
            grads = {"embeddings": d_emb, "w": pooled.T @ dz, "b": np.asarray(dz.sum())}
            adam_step(clf.params, grads, state, lr)
    return clf


@dataclass
class Block:
    admitted: list
    keep_fraction: float
    # Fraction of block instances that are true mentions; None until estimated or supplied.
    accuracy: float = None
    ranked: list = field(default_factory=list)

    def __len__(self):
        return len(self.admitted)


def build_block(candidates, classifier, keep_fraction=0.1, accuracy=None):
    """Score ``candidates`` and admit the top ``ceil(keep_fraction * count)``."""
    if not 0.0 <= keep_fraction <= 1.0:
        raise ConfigError("keep_fraction must lie in [0, 1]")
    if not candidates:
        return Block([], keep_fraction, accuracy, [])
    scores = classifier.score([c.phrase for c in candidates])
    scored = [PhraseCandidate(c.phrase, c.occurrences, float(s)) for c, s in zip(candidates, scores)]
    scored.sort(key=lambda c: (-c.score, c.phrase))
    # Exact arithmetic: 0.1 * 100 in floats rounds up to 11.
    keep = math.ceil(Fraction(repr(float(keep_fraction))) * len(scored))
    return Block(scored[:keep], keep_fraction, accuracy, scored)


def block_instances(block, corpus, entity_type):
    """One instance per occurrence of every admitted phrase, gold flags when known."""
    out = []
    for cand in block.admitted:
        for si, span in cand.occurrences:
            sent = corpus[si]
            flag = None if sent.gold is None else (span.start, span.end, entity_type) in sent.gold_set()
            out.append(Instance(sent, si, Span(*span), entity_type, BLOCKED_CANDIDATE, flag))
    return out


def estimate_block_accuracy(instances):
    """Gold fraction of block instances that are true mentions, on the 5% grid."""
    flags = [i.gold for i in instances]
    if not flags or any(f is None for f in flags):
        raise ParameterError("block accuracy needs gold flags on every block instance; supply it explicitly")
    return snap_to_grid(Fraction(sum(flags), len(flags)))


def joint_train(instances, blocked, accuracy, block_accuracy, config, block_weight=1.0, entity_type="", vocab=None):
    """One denoiser trained on the weakly labeled pool plus the block.

    Returns ``(model, log)``.  With ``block_weight`` 0 or an empty block the
    trajectory is identical to plain training with the same vocabulary.
    """
    if not instances:
        raise ParameterError("joint training needs a non-empty weakly labeled pool")
    if block_accuracy is None and blocked:
        raise ConfigError("block accuracy must be estimated or supplied")
    if vocab is None:
        vocab = build_vocab(list(instances) + list(blocked))
    model = new_model(instances, config, entity_type=entity_type, vocab=vocab)
    pool = Pool(model, instances, accuracy)
    block_pool = Pool(model, blocked, block_accuracy) if blocked else None
    records = fit(model, pool, config, block=block_pool, block_weight=block_weight,
                  log_prefix={"type": entity_type})
    return model, records


def write_block(block, path):
    """Audit dump of every scored candidate: ``phrase<TAB>score<TAB>admitted``."""
    admitted = {tuple(c.phrase) for c in block.admitted}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cand in block.ranked:
            fh.write(f"{' '.join(cand.phrase)}\t{cand.score!r}\t{int(tuple(cand.phrase) in admitted)}\n")
