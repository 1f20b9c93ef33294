"""Losses, Adam and the per-type training loop.

The hypergeometric loss ranks a batch by detached confidence and trains the
rank-``i`` instance toward the tail weight ``omega_i`` with binary
cross-entropy.  Baselines share the same weighted cross-entropy core:
``naive`` (target 1), ``instance_em`` (target = detached confidence) and
``xr`` (KL between a target proportion and the batch-mean confidence).

Losses return ``(value, d value / d f)`` with ``f`` in batch order.  Batch
reductions use ``math.fsum`` so values do not depend on summation order.
"""

from dataclasses import asdict, dataclass, field
import logging
import math
import time

import numpy as np
from scipy.special import xlogy

from .denoiser import DenoiserModel, backward, build_vocab, forward, mark_instance, window_batch
from .errors import ConfigError, NumericError
from .hypergeom import HypergeomParams, correct_count, tail_weights

__all__ = [
    "LOSS_KINDS",
    "REFERENCE_LEARNING_RATE",
    "TrainConfig",
    "AdamState",
    "RankedBatch",
    "rank_by_confidence",
    "rank_batch",
    "weighted_bce",
    "naive_loss",
    "hgl_loss",
    "instance_em_loss",
    "xr_loss",
    "adam_step",
    "Pool",
    "TrainResult",
    "fit",
    "new_model",
    "train",
]

log = logging.getLogger(__name__)

LOSS_KINDS = ("hgl", "instance_em", "xr", "naive")
REFERENCE_LEARNING_RATE = 1e-5
CLAMP = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = 150
    lr: float = 1e-3
    epochs: int = 20
    seed: int = 0
    loss: str = "hgl"
    dim: int = 16
    hidden: tuple = (None,)
    context: int = 0
    # "batch": rank by a detached forward pass under the current parameters;
    # "epoch": rank by confidences frozen at the start of each epoch.
    ranking: str = "batch"
    em_snapshot: str = "batch"

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if int(self.epochs) < 0:
            raise ConfigError("epochs must be >= 0")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.ranking not in ("batch", "epoch") or self.em_snapshot not in ("batch", "epoch"):
            raise ConfigError("ranking and em_snapshot must be 'batch' or 'epoch'")
        self.hidden = tuple(self.hidden)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# ranking


@dataclass(frozen=True)
class RankedBatch:
    """``order[i]`` is the batch position of the rank-``i + 1`` instance."""

    order: np.ndarray
    confidences: np.ndarray
    keys: np.ndarray

    def __len__(self):
        return len(self.order)


def rank_by_confidence(confidences, keys=None):
    """Stable descending sort; ties broken by ascending ``keys`` (dataset index)."""
    conf = np.asarray(confidences, dtype=np.float64)
    keys = np.arange(len(conf)) if keys is None else np.asarray(keys)
    order = np.lexsort((keys, -conf))
    return RankedBatch(order, conf[order], keys[order])


def rank_batch(model, instances, keys=None):
    """Rank ``instances`` by the model's confidence, computed without gradients."""
    marked = [mark_instance(model, inst) for inst in instances]
    f, _ = forward(model, window_batch(model, marked))
    return rank_by_confidence(f, keys)


# --------------------------------------------------------------------------
# losses


def _clamp(f):
    fc = np.clip(f, CLAMP, 1.0 - CLAMP)
    return fc, int(np.count_nonzero(fc != f))


def weighted_bce(f, targets):
    """``-(1/B) sum [t ln f + (1 - t) ln(1 - f)]`` and its gradient in ``f``.

    Confidences are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is evaluated
    at the clamped value.  Returns ``(loss, grad, n_clamped)``.
    """
    f = np.asarray(f, dtype=np.float64)
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64), f.shape)
    fc, clamped = _clamp(f)
    B = len(f)
    terms = t * np.log(fc) + (1.0 - t) * np.log1p(-fc)
    loss = -math.fsum(terms.tolist()) / B
    grad = -(t / fc - (1.0 - t) / (1.0 - fc)) / B
    return loss, grad, clamped


def naive_loss(f):
    return weighted_bce(f, 1.0)


def hgl_loss(f, omega, ranked):
    """Hypergeometric loss: rank ``i`` is trained toward ``omega[i]``.

    ``f`` are live confidences in batch order and ``ranked`` the detached
    ranking of the same batch.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if len(omega) != len(f) or len(ranked) != len(f):
        raise ValueError(f"batch of {len(f)} with {len(omega)} weights and {len(ranked)} ranks")
    targets = np.empty(len(f))
    targets[ranked.order] = omega
    return weighted_bce(f, targets)


def instance_em_loss(f, f_snapshot):
    """Self-training loss with the detached snapshot confidence as target."""
    return weighted_bce(f, f_snapshot)


def xr_loss(f, accuracy):
    """``KL(Bernoulli(p) || Bernoulli(mean f))`` and its gradient in ``f``."""
    f = np.asarray(f, dtype=np.float64)
    p = float(accuracy)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {p}")
    B = len(f)
    raw = math.fsum(f.tolist()) / B
    p_hat = min(max(raw, CLAMP), 1.0 - CLAMP)
    loss = float(xlogy(p, p) - xlogy(p, p_hat) + xlogy(1 - p, 1 - p) - xlogy(1 - p, 1 - p_hat))
    d_phat = -p / p_hat + (1.0 - p) / (1.0 - p_hat)
    return loss, np.full(B, d_phat / B), int(p_hat != raw)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update of ``params`` in place.

    A non-finite gradient aborts the step before anything is modified.
    """
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])} for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# --------------------------------------------------------------------------
# training loop


class Pool:
    """Instances of one type with precomputed windows for a given model."""

    def __init__(self, model, instances, accuracy):
        if not instances:
            raise ValueError("empty training pool")
        self.instances = list(instances)
        self.accuracy = float(accuracy)
        self.windows = window_batch(model, [mark_instance(model, inst) for inst in self.instances])
        self.correct = correct_count(len(self.instances), self.accuracy)

    def __len__(self):
        return len(self.instances)

    def weights(self, size):
        return tail_weights(HypergeomParams(len(self), self.correct, size))

    def batches(self, rng, batch_size):
        perm = rng.permutation(len(self))
        return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]

    def confidences(self, model, chunk=4096):
        out = np.empty(len(self))
        for lo in range(0, len(self), chunk):
            rows = np.arange(lo, min(lo + chunk, len(self)))
            out[rows], _ = forward(model, self.windows.take(rows))
        return out


@dataclass
class TrainResult:
    models: dict
    log: list


def _batch_loss(kind, model, pool, rows, snapshot):
    f, cache = forward(model, pool.windows.take(rows))
    omega_sum = float("nan")
    if kind == "hgl":
        conf = f if snapshot is None else snapshot[rows]
        ranked = rank_by_confidence(conf, rows)
        weights = pool.weights(len(rows))
        omega_sum = math.fsum(weights.omega.tolist())
        loss, grad, clamped = hgl_loss(f, weights.omega, ranked)
    elif kind == "naive":
        loss, grad, clamped = naive_loss(f)
    elif kind == "instance_em":
        target = f.copy() if snapshot is None else snapshot[rows]
        loss, grad, clamped = instance_em_loss(f, target)
    else:
        loss, grad, clamped = xr_loss(f, pool.accuracy)
    return loss, backward(model, cache, grad), omega_sum, clamped


def _uses_snapshot(config):
    if config.loss == "hgl":
        return config.ranking == "epoch"
    if config.loss == "instance_em":
        return config.em_snapshot == "epoch"
    return False


def fit(model, pool, config, block=None, block_weight=1.0, log_prefix=None):
    """Train ``model`` in place on ``pool``; returns per-epoch log records.

    ``block`` is an optional second pool trained jointly with the hypergeometric
    loss at its own accuracy; its loss is added with weight ``block_weight``.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.default_rng(seeds[1])
    block_rng = np.random.default_rng(seeds[2])
    use_block = block is not None and len(block) > 0 and block_weight != 0
    block_queue = []
    state = AdamState()
    records = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        snapshot = pool.confidences(model) if _uses_snapshot(config) else None
        block_snapshot = block.confidences(model) if use_block and config.ranking == "epoch" else None
        losses, omega_sums, clamped_total = [], [], 0
        for rows in pool.batches(rng, config.batch_size):
            loss, grads, omega_sum, clamped = _batch_loss(config.loss, model, pool, rows, snapshot)
            clamped_total += clamped
            if use_block:
                if not block_queue:
                    block_queue = block.batches(block_rng, config.batch_size)
                brows = block_queue.pop(0)
                bconf = block_snapshot
                b_loss, b_grads, _, b_clamped = _batch_loss("hgl", model, block, brows, bconf)
                clamped_total += b_clamped
                loss = loss + block_weight * b_loss
                for name, g in b_grads.items():
                    grads[name] = grads[name] + block_weight * g
            adam_step(model.params, grads, state, config.lr)
            model.bump()
            losses.append(loss)
            omega_sums.append(omega_sum)
        record = {
            "epoch": epoch,
            "loss_mean": math.fsum(losses) / len(losses),
            "omega_sum_mean": math.fsum(omega_sums) / len(omega_sums) if config.loss == "hgl" else None,
            "batches": len(losses),
            "clamped": clamped_total,
            "batch_losses": losses,
        }
        if log_prefix is not None:
            record = {**log_prefix, **record}
        if clamped_total:
            log.info("epoch %d: %d confidences clamped before log", epoch, clamped_total)
        log.debug("epoch %d loss %.6f (%.3fs)", epoch, record["loss_mean"], time.perf_counter() - started)
        records.append(record)
    return records


def new_model(instances, config, entity_type="", vocab=None):
    """Freshly initialized model; the vocabulary defaults to the instances' tokens."""
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    if vocab is None:
        vocab = build_vocab(instances)
    return DenoiserModel.initialize(
        vocab, dim=config.dim, hidden=config.hidden, entity_type=entity_type, context=config.context, seed=init_seed
    )


def train(pools, profile, config, vocab=None):
    """Train one denoiser per entity type.

    ``pools`` maps type -> weakly labeled instances; ``profile`` maps type ->
    accuracy (or a ``NoiseEntry``).  The hypergeometric population is the
    pool size.  A shared ``vocab`` (e.g. built over a whole corpus) replaces
    the per-pool default.
    """
    models, records = {}, []
    for etype in sorted(pools):
        if etype not in profile:
            raise ConfigError(f"no noise-rate estimate for type {etype!r}")
        accuracy = getattr(profile[etype], "accuracy", profile[etype])
        model = new_model(pools[etype], config, entity_type=etype, vocab=vocab)
        pool = Pool(model, pools[etype], accuracy)
        records.extend(fit(model, pool, config, log_prefix={"type": etype}))
        models[etype] = model
    return TrainResult(models, records)
