"""Ranking metrics, span F1 and export of the denoised corpus."""

from dataclasses import dataclass
import json

import numpy as np

from .corpus import Corpus, Sentence, write_corpus
from .errors import UndefinedMetricError
from .hypergeom import correct_count

__all__ = [
    "RECALL_LEVELS",
    "RankedResult",
    "PRCurve",
    "pr_auc",
    "precision_at_recall",
    "span_f1",
    "select_denoised",
    "export_denoised",
    "write_metrics",
    "write_pr_curve",
]

RECALL_LEVELS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class RankedResult:
    """Items sorted by score, descending; ties keep dataset order."""

    scores: np.ndarray
    gold: np.ndarray
    # Dataset index of each ranked item.
    index: np.ndarray
    # Per-item weight for token-level metrics (span length); ones otherwise.
    weights: np.ndarray

    @classmethod
    def from_scores(cls, scores, gold, weights=None):
        scores = np.asarray(scores, dtype=np.float64)
        gold = np.asarray(gold, dtype=bool)
        if scores.shape != gold.shape or scores.ndim != 1:
            raise ValueError("scores and gold flags must be 1-d and equally long")
        weights = np.ones(len(scores)) if weights is None else np.asarray(weights, dtype=np.float64)
        order = np.lexsort((np.arange(len(scores)), -scores))
        return cls(scores[order], gold[order], order, weights[order])

    @classmethod
    def from_instances(cls, instances, scores):
        """Rank weakly labeled instances; weights are span lengths."""
        gold = [bool(i.gold) for i in instances]
        lengths = [i.span.end - i.span.start for i in instances]
        return cls.from_scores(scores, gold, lengths)

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class PRCurve:
    # (rank, recall, precision) at every prefix ending in a gold positive.
    points: tuple
    auc: float


def pr_auc(ranked):
    """Average precision: mean precision over the ranks of gold positives."""
    g = ranked.gold
    if not g.any():
        raise UndefinedMetricError("no gold positives in the ranking")
    hits = np.cumsum(g)
    ranks = np.flatnonzero(g) + 1
    total = int(hits[-1])
    points = tuple((int(r), int(hits[r - 1]) / total, int(hits[r - 1]) / int(r)) for r in ranks)
    auc = float(np.mean([p for _, _, p in points]))
    return PRCurve(points, auc)


def precision_at_recall(ranked, levels=RECALL_LEVELS, token_level=False, total_positive=None):
    """Precision of the shortest prefix reaching each recall level.

    Unreachable levels map to ``None``.  ``total_positive`` counts gold
    positives absent from the ranking (recall then tops out below 1).
    With ``token_level`` each item counts as its span length.
    """
    w = ranked.weights if token_level else np.ones(len(ranked))
    pos = np.cumsum(np.where(ranked.gold, w, 0.0))
    seen = np.cumsum(w)
    total = float(pos[-1]) if len(pos) else 0.0
    if total_positive is not None:
        total = float(total_positive)
    if total <= 0:
        raise UndefinedMetricError("no gold positives to measure recall against")
    out = {}
    for level in levels:
        # Integer comparison avoids float drift in recall = hits / total.
        reach = np.flatnonzero(pos >= level * total - 1e-12 * total)
        out[level] = None if len(reach) == 0 else float(pos[reach[0]] / seen[reach[0]])
    return out


def span_f1(predicted, gold):
    """Exact-match micro precision, recall and F1 over mention tuples."""
    predicted, gold = set(predicted), set(gold)
    tp = len(predicted & gold)
    p = tp / len(predicted) if predicted else 0.0
    r = tp / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def select_denoised(scored, profile):
    """Kept mentions as ``(sent_index, start, end, type)`` after cross-type resolution.

    ``scored`` maps type -> list of ``(instance, confidence)``; ``profile``
    maps type -> accuracy (or ``NoiseEntry``).  Each type keeps its top
    ``round(N * p)``; overlapping spans across types go to the higher
    confidence, ties to the lexicographically smaller type.
    """
    kept = []
    for etype in sorted(scored):
        items = scored[etype]
        accuracy = getattr(profile[etype], "accuracy", profile[etype])
        n_keep = correct_count(len(items), accuracy)
        order = sorted(range(len(items)), key=lambda i: (-items[i][1], items[i][0].key))
        kept.extend((items[i][1], etype, items[i][0]) for i in order[:n_keep])
    kept.sort(key=lambda t: (-t[0], t[1], t[2].key))
    taken = {}
    out = []
    for _, etype, inst in kept:
        spans = taken.setdefault(inst.sent_index, [])
        if any(inst.span.overlaps(s) for s in spans):
            continue
        spans.append(inst.span)
        out.append((inst.sent_index, inst.span.start, inst.span.end, etype))
    return sorted(out)


def export_denoised(corpus, scored, profile, dest=None):
    """Corpus whose tags are the denoised mentions; written to ``dest`` if given."""
    by_sent = {}
    for si, start, end, etype in select_denoised(scored, profile):
        by_sent.setdefault(si, []).append((start, end, etype))
    sentences = tuple(
        Sentence(s.tokens, s.doc_id, s.sent_id, tuple(by_sent.get(i, ())), s.chunks) for i, s in enumerate(corpus)
    )
    out = Corpus(sentences)
    if dest is not None:
        write_corpus(out, dest)
    return out


def write_metrics(report, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_pr_curve(curve, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank,recall,precision\n")
        for rank, recall, precision in curve.points:
            fh.write(f"{rank},{recall!r},{precision!r}\n")
