"""Shared test utilities: random models/instances and a finite-difference oracle."""

import numpy as np

from hgl.corpus import Instance, Sentence, Span
from hgl.denoiser import SPECIALS, DenoiserModel, backward, forward, mark_instance, window_batch
from hgl.hypergeom import HypergeomParams, tail_weights
from hgl.training import hgl_loss, rank_by_confidence

WORDS = [f"w{i}" for i in range(17)]


def random_vocab():
    return {tok: i for i, tok in enumerate(SPECIALS + tuple(WORDS))}


def random_model(rng, dim=16, context=0, hidden=(None,), scale=1.0):
    model = DenoiserModel.initialize(random_vocab(), dim=dim, hidden=hidden, context=context, seed=int(rng.integers(2**31)))
    for name, arr in model.params.items():
        # Nonzero biases and larger weights exercise every gradient path.
        arr[...] = arr + scale * rng.normal(0.0, 0.3, size=arr.shape)
    return model


def random_instance(rng, vocab_words=WORDS, oov_rate=0.1):
    n = int(rng.integers(1, 9))
    toks = tuple(
        "unseen" if rng.random() < oov_rate else vocab_words[int(rng.integers(len(vocab_words)))] for _ in range(n)
    )
    start = int(rng.integers(0, n))
    stop = int(rng.integers(start + 1, n + 1))
    return Instance(Sentence(toks), 0, Span(start, stop), "PER")


def central_difference(fn, params, eps=1e-5, rows=None):
    """d fn / d params[name] by central differences, touching every element.

    ``rows`` optionally restricts the embedding matrix to the given row ids
    (other rows are left as NaN).
    """
    grads = {}
    for name, arr in params.items():
        g = np.full(arr.shape, np.nan) if (name == "embeddings" and rows is not None) else np.zeros(arr.shape)
        it = np.ndindex(arr.shape) if arr.shape else [()]
        for ix in it:
            if name == "embeddings" and rows is not None and ix[0] not in rows:
                continue
            old = arr[ix].copy()
            arr[ix] = old + eps
            up = fn()
            arr[ix] = old - eps
            down = fn()
            arr[ix] = old
            g[ix] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def relative_error(analytic, numeric, floor=1e-6):
    """Norm-relative error.

    ``floor`` sits at the resolution of an eps=1e-5 central difference, so an
    exactly-zero gradient (the attention bias, which softmax ignores) compares
    its rounding noise against that resolution instead of against zero.
    """
    mask = ~np.isnan(numeric)
    a, n = np.asarray(analytic)[mask], numeric[mask]
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def pipeline_gradient_case(rng, B=8, dim=16):
    """Worst relative error between analytic and numeric gradients of the
    ranked loss over every parameter, with the ranking held fixed."""
    model = random_model(rng, dim=dim)
    insts = [random_instance(rng) for _ in range(B)]
    windows = window_batch(model, [mark_instance(model, i) for i in insts])
    omega = tail_weights(HypergeomParams(40, int(rng.integers(0, 41)), B)).omega
    f0, _ = forward(model, windows)
    ranked = rank_by_confidence(f0)

    def loss_fn():
        f, _ = forward(model, windows)
        return hgl_loss(f, omega, ranked)[0]

    f, cache = forward(model, windows)
    _, grad_f, _ = hgl_loss(f, omega, ranked)
    analytic = backward(model, cache, grad_f)
    rows = set(np.unique(windows.idx[windows.cmask > 0]).tolist())
    numeric = central_difference(loss_fn, model.params, rows=rows)
    return max(relative_error(analytic[k], numeric[k]) for k in analytic)
