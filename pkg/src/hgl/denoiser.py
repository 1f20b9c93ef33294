"""Per-type confidence model: marked instance -> attention pooling -> MLP -> sigmoid.

The encoder is a learned embedding lookup, optionally averaged over a
``context``-token neighbourhood in the marked sequence.  Attention pools
the window from ``[BEG]`` to ``[END]`` inclusive, and an MLP with a softplus
hidden nonlinearity maps the pooled vector to one logit.

Everything is vectorised over a batch of padded windows; the single-instance
functions are thin wrappers.  Gradients are analytic.
"""

from dataclasses import dataclass
import json

import numpy as np
from scipy.special import expit

from .errors import NumericError, ParseError, UsageError

__all__ = [
    "OOV",
    "BEG",
    "END",
    "build_vocab",
    "sentence_vocab",
    "DenoiserModel",
    "MarkedInstance",
    "WindowBatch",
    "mark_instance",
    "window_batch",
    "forward",
    "encode_and_score",
    "backward",
    "score_instances",
    "save_model",
    "load_model",
]

OOV = "[OOV]"
BEG = "[BEG]"
END = "[END]"
SPECIALS = (OOV, BEG, END)
CHECKPOINT_FORMAT = "hgl-denoiser"
CHECKPOINT_VERSION = 1


def build_vocab(instances, min_count=1):
    """Token -> id map over the sentences of ``instances``; ids are deterministic."""
    return sentence_vocab((inst.sentence for inst in instances), min_count)


def sentence_vocab(sentences, min_count=1):
    """Token -> id map over distinct sentences; specials first, then sorted tokens."""
    counts = {}
    seen = set()
    for sent in sentences:
        if sent in seen:
            continue
        seen.add(sent)
        for tok in sent.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    tokens = sorted(t for t, c in counts.items() if c >= min_count and t not in SPECIALS)
    return {tok: i for i, tok in enumerate(SPECIALS + tuple(tokens))}


class DenoiserModel:
    """Parameters of one entity type's denoiser.

    ``params`` maps names to float64 arrays: ``embeddings`` (V x d),
    ``attn_w`` (d,), ``attn_b`` (scalar), and ``mlp.{i}.W`` / ``mlp.{i}.b``
    for each affine layer.  ``version`` increases on every in-place update
    so stale backward caches can be detected.
    """

    def __init__(self, vocab, params, entity_type="", context=0):
        self.vocab = dict(vocab)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.entity_type = entity_type
        self.context = int(context)
        self.version = 0
        self._check()

    def _check(self):
        for tok in SPECIALS:
            if tok not in self.vocab:
                raise ValueError(f"vocabulary lacks reserved token {tok}")
        emb = self.params["embeddings"]
        if emb.ndim != 2 or emb.shape[0] != len(self.vocab) or emb.shape[1] < 1:
            raise ValueError(f"bad embedding shape {emb.shape} for vocabulary of {len(self.vocab)}")
        if self.mlp_sizes[-1] != 1:
            raise ValueError("output layer must have width 1")
        if self.mlp_sizes[0] != self.dim:
            raise ValueError("first MLP layer must take the embedding width")
        if self.context < 0:
            raise ValueError("context must be non-negative")

    @classmethod
    def initialize(cls, vocab, dim=16, hidden=(None,), entity_type="", context=0, seed=0):
        """Seeded initialization; ``hidden`` widths default to ``dim`` when None."""
        rng = np.random.default_rng(seed)
        sizes = [dim] + [dim if h is None else int(h) for h in hidden] + [1]
        params = {
            "embeddings": rng.uniform(-0.1, 0.1, size=(len(vocab), dim)),
            "attn_w": rng.uniform(-1.0, 1.0, size=dim) / np.sqrt(dim),
            "attn_b": np.zeros(()),
        }
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            params[f"mlp.{i}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"mlp.{i}.b"] = np.zeros(fan_out)
        return cls(vocab, params, entity_type=entity_type, context=context)

    @property
    def dim(self):
        return self.params["embeddings"].shape[1]

    @property
    def n_layers(self):
        return sum(1 for k in self.params if k.startswith("mlp.") and k.endswith(".W"))

    @property
    def mlp_sizes(self):
        n = self.n_layers
        sizes = [self.params[f"mlp.{i}.W"].shape[0] for i in range(n)]
        return sizes + [self.params[f"mlp.{n - 1}.W"].shape[1]]

    def token_id(self, token):
        return self.vocab.get(token, self.vocab[OOV])

    def copy(self):
        other = DenoiserModel(self.vocab, {k: v.copy() for k, v in self.params.items()}, self.entity_type, self.context)
        return other

    def bump(self):
        self.version += 1


@dataclass(frozen=True)
class MarkedInstance:
    ids: tuple
    beg: int
    end: int


def mark_instance(model, inst):
    """Token ids with ``[BEG]`` before the span and ``[END]`` after it."""
    toks = inst.sentence.tokens
    start, stop = inst.span
    ids = (
        [model.token_id(t) for t in toks[:start]]
        + [model.vocab[BEG]]
        + [model.token_id(t) for t in toks[start:stop]]
        + [model.vocab[END]]
        + [model.token_id(t) for t in toks[stop:]]
    )
    return MarkedInstance(tuple(ids), start, stop + 1)


@dataclass
class WindowBatch:
    """Padded attention windows: ``idx``/``cmask`` are (n, L, 2c+1), ``wmask`` (n, L)."""

    idx: np.ndarray
    cmask: np.ndarray
    wmask: np.ndarray

    def __len__(self):
        return len(self.idx)

    def take(self, rows):
        return WindowBatch(self.idx[rows], self.cmask[rows], self.wmask[rows])


def window_batch(model, marked):
    """Stack marked instances into padded window arrays for ``model.context``."""
    c = model.context
    width = 2 * c + 1
    L = max(m.end - m.beg + 1 for m in marked)
    idx = np.zeros((len(marked), L, width), dtype=np.int64)
    cmask = np.zeros((len(marked), L, width))
    wmask = np.zeros((len(marked), L), dtype=bool)
    for n, m in enumerate(marked):
        ids = m.ids
        for p, pos in enumerate(range(m.beg, m.end + 1)):
            wmask[n, p] = True
            for j, q in enumerate(range(pos - c, pos + c + 1)):
                if 0 <= q < len(ids):
                    idx[n, p, j] = ids[q]
                    cmask[n, p, j] = 1.0
    return WindowBatch(idx, cmask, wmask)


def _softplus(x):
    return np.logaddexp(0.0, x)


def forward(model, batch):
    """Confidences for a :class:`WindowBatch`; returns ``(f, cache)``."""
    p = model.params
    cnt = np.maximum(batch.cmask.sum(axis=2), 1.0)
    g = p["embeddings"][batch.idx] * batch.cmask[..., None]
    h = g.sum(axis=2) / cnt[..., None]

    logits = h @ p["attn_w"] + p["attn_b"]
    logits = np.where(batch.wmask, logits, -np.inf)
    shift = logits.max(axis=1, keepdims=True)
    a = np.where(batch.wmask, np.exp(logits - shift), 0.0)
    alpha = a / a.sum(axis=1, keepdims=True)
    r = np.einsum("nl,nld->nd", alpha, h)

    inputs, pre = [], []
    x = r
    n_layers = model.n_layers
    for i in range(n_layers):
        inputs.append(x)
        z = x @ p[f"mlp.{i}.W"] + p[f"mlp.{i}.b"]
        pre.append(z)
        x = _softplus(z) if i < n_layers - 1 else z
    logit = x[:, 0]
    f = expit(logit)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(r))):
        raise NumericError("non-finite activation in denoiser forward pass")
    cache = {
        "model": id(model),
        "version": model.version,
        "batch": batch,
        "cnt": cnt,
        "h": h,
        "alpha": alpha,
        "inputs": inputs,
        "pre": pre,
        "f": f,
    }
    return f, cache


def encode_and_score(model, minst):
    """Confidence of a single :class:`MarkedInstance` and its backward cache."""
    f, cache = forward(model, window_batch(model, [minst]))
    return float(f[0]), cache


def backward(model, cache, upstream):
    """Parameter gradients given ``d(loss)/d(f)`` per cached instance."""
    if cache["model"] != id(model) or cache["version"] != model.version:
        raise UsageError("backward cache does not match the current model parameters")
    p = model.params
    f = cache["f"]
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), f.shape)
    grads = {}

    dz = (up * f * (1.0 - f))[:, None]
    for i in reversed(range(model.n_layers)):
        x = cache["inputs"][i]
        grads[f"mlp.{i}.W"] = x.T @ dz
        grads[f"mlp.{i}.b"] = dz.sum(axis=0)
        dx = dz @ p[f"mlp.{i}.W"].T
        if i > 0:
            dz = dx * expit(cache["pre"][i - 1])
    dr = dx

    h, alpha = cache["h"], cache["alpha"]
    dh = alpha[..., None] * dr[:, None, :]
    dalpha = np.einsum("nld,nd->nl", h, dr)
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    grads["attn_w"] = np.einsum("nl,nld->d", ds, h)
    grads["attn_b"] = np.asarray(ds.sum())
    dh = dh + ds[..., None] * p["attn_w"]

    batch = cache["batch"]
    contrib = (dh / cache["cnt"][..., None])[:, :, None, :] * batch.cmask[..., None]
    d_emb = np.zeros_like(p["embeddings"])
    np.add.at(d_emb, batch.idx.reshape(-1), contrib.reshape(-1, model.dim))
    grads["embeddings"] = d_emb
    return grads


def score_instances(model, instances, chunk=2048):
    """Confidences for a list of instances, evaluated in chunks."""
    out = np.empty(len(instances))
    for lo in range(0, len(instances), chunk):
        marked = [mark_instance(model, inst) for inst in instances[lo:lo + chunk]]
        out[lo:lo + len(marked)], _ = forward(model, window_batch(model, marked))
    return out


def save_model(model, path):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "entity_type": model.entity_type,
        "context": model.context,
        "vocab": sorted(model.vocab, key=model.vocab.get),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in sorted(model.params.items())
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a denoiser checkpoint", path=str(path))
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {payload.get('version')}", path=str(path))
    vocab = {tok: i for i, tok in enumerate(payload["vocab"])}
    params = {
        name: np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in payload["params"].items()
    }
    return DenoiserModel(vocab, params, payload["entity_type"], payload["context"])
