"""Embedding + MLP network with hand-written backprop, Adam, and a training loop.

Everything is float64 numpy. The backward pass returns, besides parameter
gradients, the per-record gradient of each record's own loss with respect to
its field embeddings (the "tape"), which the Taylor scorer consumes.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import hashing
from .metrics import UndefinedMetricError, auc, logloss

log = logging.getLogger(__name__)

EPS_P = 1e-7
DENSE_ROW_LIMIT = 1 << 20


class NumericError(ArithmeticError):
    """Non-finite values appeared during training or scoring."""


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    p = np.clip(probs, EPS_P, 1.0 - EPS_P)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


class EmbeddingTable:
    """``n_rows x dim`` lookup table.

    Rows are initialised from a counter-based hash of (table salt, row, column),
    so the initial value of any row is known without storing it. Tables above
    ``DENSE_ROW_LIMIT`` rows only store rows that were reserved (the training
    vocabulary actually seen); other rows read back their initial value.
    """

    def __init__(self, n_rows: int, dim: int, name: str, init_scale: float = 0.05, dense_limit: int = DENSE_ROW_LIMIT):
        if n_rows < 1 or dim < 1:
            raise ValueError("embedding table needs at least one row and one column")
        self.n_rows = int(n_rows)
        self.dim = int(dim)
        self.name = name
        self.init_scale = float(init_scale)
        self._salt = hashing.salt("emb:" + name)
        if self.n_rows <= dense_limit:
            self.keys: np.ndarray | None = None
            self.values = self.initial_rows(np.arange(self.n_rows, dtype=np.int64))
        else:
            self.keys = np.empty(0, dtype=np.int64)
            self.values = np.empty((0, self.dim), dtype=np.float64)

    @property
    def dense(self) -> bool:
        return self.keys is None

    def initial_rows(self, rows: np.ndarray) -> np.ndarray:
        counter = rows.astype(np.uint64)[:, None] * np.uint64(self.dim) + np.arange(self.dim, dtype=np.uint64)
        with np.errstate(over="ignore"):
            u = hashing.uniform01(counter + self._salt)
        return (2.0 * u - 1.0) * self.init_scale

    def _check(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_rows):
            raise IndexError(f"table {self.name!r}: index out of range [0, {self.n_rows})")

    def slots(self, ids: np.ndarray) -> np.ndarray:
        """Storage slot per id; -1 where the row is not stored."""
        ids = np.asarray(ids, dtype=np.int64)
        self._check(ids)
        if self.dense:
            return ids
        pos = np.searchsorted(self.keys, ids)
        pos_c = np.minimum(pos, max(len(self.keys) - 1, 0))
        hit = (pos < len(self.keys)) & (self.keys[pos_c] == ids) if len(self.keys) else np.zeros(ids.shape, bool)
        return np.where(hit, pos_c, -1)

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        s = self.slots(ids)
        if self.dense:
            return self.values[s]
        out = np.empty((len(s), self.dim), dtype=np.float64)
        hit = s >= 0
        out[hit] = self.values[s[hit]]
        if not hit.all():
            out[~hit] = self.initial_rows(np.asarray(ids, dtype=np.int64)[~hit])
        return out

    def reserve(self, ids: np.ndarray) -> None:
        """Make sure ``ids`` are stored (no-op for dense tables). Re-sorts slots."""
        if self.dense:
            return
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        self._check(ids)
        new = np.setdiff1d(ids, self.keys, assume_unique=True)
        if not len(new):
            return
        keys = np.concatenate([self.keys, new])
        vals = np.concatenate([self.values, self.initial_rows(new)])
        order = np.argsort(keys, kind="stable")
        self.keys, self.values = keys[order], vals[order]


@dataclass
class SparseRows:
    """Gradient for a subset of an embedding table's storage slots."""

    slots: np.ndarray
    grad: np.ndarray


@dataclass
class DNNModel:
    """Per-field embedding tables feeding an MLP (ReLU hidden layers, linear logit)."""

    fields: list[str]
    tables: list[EmbeddingTable]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    backward_passes: int = 0

    @property
    def dim(self) -> int:
        return self.tables[0].dim

    @property
    def num_fields(self) -> int:
        return len(self.fields)

    def parameters(self) -> list[np.ndarray]:
        return [t.values for t in self.tables] + [a for wb in zip(self.weights, self.biases) for a in wb]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        f = len(self.tables)
        for t, v in zip(self.tables, params[:f]):
            t.values = v
        rest = params[f:]
        self.weights = list(rest[0::2])
        self.biases = list(rest[1::2])


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(in_dim: int, hidden: Sequence[int], seed: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden, 1]
    weights = [xavier_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return weights, biases


@dataclass
class ForwardCache:
    idx: np.ndarray
    embeds: np.ndarray  # (n, F, d)
    pre: list[np.ndarray]  # pre-activations of hidden layers
    acts: list[np.ndarray]  # inputs to each layer (acts[0] = flattened embeds)
    logits: np.ndarray
    probs: np.ndarray


def forward_from_embeddings(model: DNNModel, embeds: np.ndarray) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Logits for an (n, F, d) embedding block; also returns layer caches."""
    n = embeds.shape[0]
    h = embeds.reshape(n, -1)
    acts, pre = [h], []
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    return logits, pre, acts


def embed(model: DNNModel, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != model.num_fields:
        raise IndexError(f"batch has shape {idx.shape}, model expects (n, {model.num_fields})")
    return np.stack([t.lookup(idx[:, i]) for i, t in enumerate(model.tables)], axis=1)


def forward(model: DNNModel, idx: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    embeds = embed(model, idx)
    logits, pre, acts = forward_from_embeddings(model, embeds)
    probs = sigmoid(logits)
    return probs, ForwardCache(np.asarray(idx, dtype=np.int64), embeds, pre, acts, logits, probs)


def _scatter_rows(slots: np.ndarray, grads: np.ndarray) -> SparseRows:
    uniq, inv = np.unique(slots, return_inverse=True)
    out = np.zeros((len(uniq), grads.shape[1]))
    np.add.at(out, inv, grads)
    return SparseRows(uniq, out)


def backward(model: DNNModel, cache: ForwardCache, labels: np.ndarray, target: str = "loss") -> tuple[list, np.ndarray]:
    """Gradients of the mean batch loss, plus the per-record embedding tape.

    ``target="loss"`` differentiates each record's BCE term, ``"logit"`` the raw
    logit. Parameter gradients always refer to the mean BCE loss.
    Returns ``(grads, tape)`` with ``tape.shape == (n, F, d)``; ``grads`` lines
    up with ``model.parameters()`` and holds ``SparseRows`` for tables.
    """
    n = cache.logits.shape[0]
    y = np.asarray(labels, dtype=np.float64)
    delta_loss = cache.probs - y
    model.backward_passes += 1

    def propagate(delta: np.ndarray, want_params: bool):
        # delta: d(output)/d(logit) per record, shape (n,)
        dW, db = [], []
        g = delta[:, None]
        L = len(model.weights)
        for layer in range(L - 1, -1, -1):
            if want_params:
                dW.append(cache.acts[layer].T @ g)
                db.append(g.sum(axis=0))
            g = g @ model.weights[layer].T
            if layer > 0:
                g = g * (cache.pre[layer - 1] > 0)
        return g, dW[::-1], db[::-1]

    g_in, dW, db = propagate(delta_loss / n, want_params=True)
    if target == "loss":
        tape = (g_in * n).reshape(n, model.num_fields, model.dim)
    elif target == "logit":
        g_logit, _, _ = propagate(np.ones(n), want_params=False)
        tape = g_logit.reshape(n, model.num_fields, model.dim)
    else:
        raise ValueError(f"unknown target {target!r}")

    g_emb = g_in.reshape(n, model.num_fields, model.dim)
    grads: list = []
    for i, t in enumerate(model.tables):
        grads.append(_scatter_rows(t.slots(cache.idx[:, i]), g_emb[:, i, :]))
    for w, b in zip(dW, db):
        grads.extend([w, b])
    return grads, tape


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    params_shapes: list[tuple[int, ...]]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        st = cls([p.shape for p in params], **kw)
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
        return st


def adam_step(params: list[np.ndarray], grads: list, state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update, in place. Returns ``params``.

    ``SparseRows`` gradients update only the listed rows and their moments
    (lazy Adam); untouched rows keep their values and moments.
    """
    if len(params) != len(grads) or [p.shape for p in params] != [tuple(s) for s in state.params_shapes]:
        raise ValueError("parameter / gradient / state shapes do not match")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr = state.lr * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if isinstance(g, SparseRows):
            if g.grad.shape[1:] != p.shape[1:]:
                raise ValueError("sparse gradient width mismatch")
            s = g.slots
            m[s] = b1 * m[s] + (1.0 - b1) * g.grad
            v[s] = b2 * v[s] + (1.0 - b2) * g.grad**2
            p[s] -= corr * m[s] / (np.sqrt(v[s]) + state.eps * np.sqrt(1.0 - b2**t))
        else:
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g**2
            p -= corr * m / (np.sqrt(v) + state.eps * np.sqrt(1.0 - b2**t))
    return params


# -------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 2
    embedding_l2: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


def predict_proba(model: DNNModel, idx: np.ndarray, batch_size: int = 65536) -> np.ndarray:
    out = [forward(model, idx[i : i + batch_size])[0] for i in range(0, len(idx), batch_size)]
    return np.concatenate(out) if out else np.empty(0)


def validation_score(labels: np.ndarray, probs: np.ndarray) -> tuple[float, float, float]:
    """(auc, logloss, auc - logloss); auc is nan for single-class labels."""
    ll = logloss(labels, probs)
    try:
        a = auc(labels, probs)
    except UndefinedMetricError:
        return float("nan"), ll, -ll
    return a, ll, a - ll


def train(model: DNNModel, train_idx: np.ndarray, train_y: np.ndarray, val_idx: np.ndarray, val_y: np.ndarray, config: TrainConfig):
    """Mini-batch Adam on mean BCE with early stopping on validation (AUC - Logloss).

    Stops once the validation metric has not improved for ``config.patience``
    consecutive epochs; returns the best-epoch model (a copy) and the history.
    """
    config.validate()
    if len(train_idx) == 0:
        raise ValueError("empty training set")
    for i, t in enumerate(model.tables):
        t.reserve(train_idx[:, i])
    params = model.parameters()
    state = AdamState.for_params(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    y = np.asarray(train_y, dtype=np.float64)
    n = len(train_idx)

    best_metric, best_model, stale = -np.inf, copy.deepcopy(model), 0
    history: list[dict] = []
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            b = perm[start : start + config.batch_size]
            probs, cache = forward(model, train_idx[b])
            total += bce_loss(probs, y[b]) * len(b)
            grads, _ = backward(model, cache, y[b])
            if config.embedding_l2 > 0:
                for t, g in zip(model.tables, grads):
                    g.grad += config.embedding_l2 * t.values[g.slots]
            adam_step(params, grads, state)
        train_loss = total / n
        if not np.isfinite(train_loss) or not all(np.isfinite(p).all() for p in params):
            raise NumericError(f"non-finite values in epoch {epoch}")
        v_auc, v_ll, metric = validation_score(val_y, predict_proba(model, val_idx))
        history.append({"epoch": epoch, "train_loss": train_loss, "val_auc": v_auc, "val_logloss": v_ll, "val_metric": metric})
        log.info("epoch %d train_loss=%.5f val_auc=%.5f val_logloss=%.5f", epoch, train_loss, v_auc, v_ll)
        if metric > best_metric:
            best_metric, best_model, stale = metric, copy.deepcopy(model), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best_model.backward_passes = model.backward_passes
    return best_model, history
