"""The DNN recommender and the one-hot logistic-regression surrogate."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import hashlib

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from . import nn
from .data import Dataset, FieldSchema
from .nn import sigmoid


# ------------------------------------------------------------------- DNN


def build_dnn(schemas: Sequence[FieldSchema], dim: int = 16, hidden: Sequence[int] = (64, 64), seed: int = 0) -> nn.DNNModel:
    """Fresh model over ``schemas``. Table init depends only on (seed, field name)."""
    tables = [nn.EmbeddingTable(s.cardinality, dim, f"{seed}:{s.name}") for s in schemas]
    weights, biases = nn.init_mlp(len(schemas) * dim, hidden, seed)
    return nn.DNNModel([s.name for s in schemas], tables, weights, biases)


def model_inputs(model: nn.DNNModel, dataset: Dataset) -> np.ndarray:
    """Index block of the model's active fields, looked up by name."""
    return dataset.columns(model.fields)


def dnn_predict(model: nn.DNNModel, dataset: Dataset) -> np.ndarray:
    return nn.predict_proba(model, model_inputs(model, dataset))


def train_dnn(model: nn.DNNModel, train: Dataset, val: Dataset, config: nn.TrainConfig):
    return nn.train(model, model_inputs(model, train), train.labels, model_inputs(model, val), val.labels, config)


# -------------------------------------------------------------------- LR


@dataclass
class LRConfig:
    l2: float = 1e-6
    l1: float = 1e-4  # only on fields passed as ``l1_fields``
    max_iter: int = 1000
    tol: float = 1e-14


@dataclass
class LRModel:
    """sigmoid(bias + sum_f w_f[value_f]); one weight per categorical value.

    Only values seen in training are stored (``keys``); every other value of a
    field's ``cardinality`` has weight 0.
    """

    fields: list[str]
    cardinalities: list[int]
    bias: float
    keys: list[np.ndarray]
    weights: list[np.ndarray]
    objective_history: list[float] = field(default_factory=list)

    def weights_for(self, i: int, ids: np.ndarray) -> np.ndarray:
        keys, w = self.keys[i], self.weights[i]
        if not len(keys):
            return np.zeros(len(ids))
        pos = np.minimum(np.searchsorted(keys, ids), len(keys) - 1)
        return np.where(keys[pos] == ids, w[pos], 0.0)

    def weight_vector(self, i: int) -> np.ndarray:
        out = np.zeros(self.cardinalities[i])
        out[self.keys[i]] = self.weights[i]
        return out

    def checksum(self) -> str:
        h = hashlib.sha256(np.float64(self.bias).tobytes())
        for k, w in zip(self.keys, self.weights):
            h.update(k.tobytes())
            h.update(w.tobytes())
        return h.hexdigest()


def lr_train(dataset: Dataset, fields: Sequence[str], config: LRConfig | None = None, l1_fields: Sequence[str] = (), init: LRModel | None = None) -> LRModel:
    """Full-batch fit of mean BCE + (l2/2)|w|^2 + l1 |w_{l1_fields}|_1 with L-BFGS-B.

    Values are one-hot columns of a sparse design matrix restricted to values
    seen in ``dataset``. Weights under L1 are split into non-negative parts
    so the penalty is smooth and exact zeros sit on the bounds. ``init``
    warm-starts from a model whose fields overlap ``fields``.
    """
    config = config or LRConfig()
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    y = dataset.labels.astype(np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    fields = list(fields)
    cols = dataset.columns(fields)
    cards = [dataset.schemas[dataset.field_index(f)].cardinality for f in fields]
    l1_set = set(l1_fields)

    keys, offsets, inv_cols = [], [0], []
    for j in range(len(fields)):
        k, iv = np.unique(cols[:, j], return_inverse=True)
        keys.append(k)
        inv_cols.append(iv + offsets[-1])
        offsets.append(offsets[-1] + len(k))
    m = offsets[-1]
    X = sp.csr_matrix(
        (np.ones(n * len(fields)), np.column_stack(inv_cols).ravel(), np.arange(0, n * len(fields) + 1, len(fields))),
        shape=(n, m),
    )
    penal = np.zeros(m, dtype=bool)
    for j, f in enumerate(fields):
        if f in l1_set:
            penal[offsets[j] : offsets[j + 1]] = True
    split_idx = np.flatnonzero(penal)
    n_split = len(split_idx)

    w0 = np.zeros(m)
    bias0 = 0.0
    if init is not None:
        bias0 = init.bias
        for j, f in enumerate(fields):
            if f in init.fields:
                w0[offsets[j] : offsets[j + 1]] = init.weights_for(init.fields.index(f), keys[j])

    # x = [bias, w (L1 entries held at 0 here), w_plus, w_minus]
    def unpack(x):
        w = x[1 : 1 + m].copy()
        w[split_idx] = x[1 + m : 1 + m + n_split] - x[1 + m + n_split :]
        return x[0], w

    def fun(x):
        b, w = unpack(x)
        z = b + X @ w
        loss = float(np.sum(np.logaddexp(0.0, z) - y * z)) / n
        r = (sigmoid(z) - y) / n
        gw = X.T @ r + config.l2 * w
        obj = loss + 0.5 * config.l2 * float(w @ w) + config.l1 * float(x[1 + m :].sum())
        grad = np.empty_like(x)
        grad[0] = r.sum()
        grad[1 : 1 + m] = np.where(penal, 0.0, gw)
        grad[1 + m : 1 + m + n_split] = gw[split_idx] + config.l1
        grad[1 + m + n_split :] = -gw[split_idx] + config.l1
        return obj, grad

    x0 = np.concatenate([[bias0], np.where(penal, 0.0, w0), np.maximum(w0[split_idx], 0), np.maximum(-w0[split_idx], 0)])
    bounds = [(None, None)] * (1 + m) + [(0.0, None)] * (2 * n_split)
    for i in split_idx:
        bounds[1 + i] = (0.0, 0.0)
    history = [fun(x0)[0]]
    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
        callback=lambda xk: history.append(fun(xk)[0]),
        options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-12, "maxcor": 20},
    )
    b, w = unpack(res.x)
    if not np.isfinite(res.fun):
        raise nn.NumericError("LR objective is not finite")
    weights = [w[offsets[j] : offsets[j + 1]] for j in range(len(fields))]
    return LRModel(fields, cards, float(b), keys, weights, history)


def lr_logits(model: LRModel, dataset: Dataset) -> np.ndarray:
    cols = dataset.columns(model.fields)
    z = np.full(len(dataset), model.bias)
    for j in range(len(model.fields)):
        z += model.weights_for(j, cols[:, j])
    return z


def lr_predict(model: LRModel, dataset: Dataset) -> np.ndarray:
    return sigmoid(lr_logits(model, dataset))
