"""Gradient-product importance scores for 2nd- and 3rd-order field combinations.

For each record the per-field signal ``s_i = J_i . (e_i - x0_i)`` is obtained
from a single backward pass (``J_i`` is the gradient of the record's loss with
respect to field ``i``'s embedding). The mixed Taylor term of a combination is
then approximated by the product of its fields' signals, so every pair and
triple is scored from the same ``(n, F)`` signal matrix:

    score(i, j)    = mean_r |s_i s_j|
    score(i, j, k) = mean_r |s_i s_j s_k|

Both families carry coefficient 1 in the expansion (1/2! * 2 for pairs,
1/3! * 6 for distinct triples), so the two lists are ranked together.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn
from .data import Dataset
from .models import model_inputs


@dataclass(frozen=True)
class ComboScore:
    fields: tuple[int, ...]
    score: float

    @property
    def order(self) -> int:
        return len(self.fields)


def compute_expansion_point(model: nn.DNNModel, idx: np.ndarray, mode: str = "records") -> np.ndarray:
    """Per-field reference embedding, shape (F, d).

    ``mode="records"``: mean embedding over the given records (frequency weighted).
    ``mode="table"``: unweighted mean over the rows of the records' vocabulary.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("expansion point needs at least one record")
    out = np.zeros((model.num_fields, model.dim))
    for i, t in enumerate(model.tables):
        ids = idx[:, i]
        if mode == "records":
            uniq, counts = np.unique(ids, return_counts=True)
            out[i] = (counts[:, None] * t.lookup(uniq)).sum(axis=0) / len(ids)
        elif mode == "table":
            out[i] = t.lookup(np.unique(ids)).mean(axis=0)
        else:
            raise ValueError(f"unknown expansion mode {mode!r}")
    return out


def field_signals(model: nn.DNNModel, x0: np.ndarray, idx: np.ndarray, labels: np.ndarray, batch_size: int = 4096, target: str = "loss") -> np.ndarray:
    """Signal matrix (n, F): one forward/backward pass per batch, in batch order."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.empty((len(idx), model.num_fields))
    for start in range(0, len(idx), batch_size):
        sl = slice(start, start + batch_size)
        _, cache = nn.forward(model, idx[sl])
        _, tape = nn.backward(model, cache, labels[sl], target=target)
        out[sl] = np.einsum("nfd,nfd->nf", tape, cache.embeds - x0[None])
    if not np.isfinite(out).all():
        raise nn.NumericError("non-finite field signals")
    return out


def score_order2(signals: np.ndarray) -> list[ComboScore]:
    s = np.abs(np.asarray(signals, dtype=np.float64))
    if s.shape[0] == 0:
        raise ValueError("no signals")
    m = (s.T @ s) / s.shape[0]
    f = s.shape[1]
    return [ComboScore((i, j), float(m[i, j])) for i in range(f) for j in range(i + 1, f)]


def score_order3(signals: np.ndarray, chunk: int = 8192) -> list[ComboScore]:
    s = np.abs(np.asarray(signals, dtype=np.float64))
    n, f = s.shape
    if n == 0:
        raise ValueError("no signals")
    t = np.zeros((f, f, f))
    for start in range(0, n, chunk):
        c = s[start : start + chunk]
        t += np.einsum("ni,nj,nk->ijk", c, c, c, optimize=True)
    t /= n
    return [ComboScore((i, j, k), float(t[i, j, k])) for i, j, k in itertools.combinations(range(f), 3)]


def rank_combinations(order2: Sequence[ComboScore], order3: Sequence[ComboScore] = ()) -> list[ComboScore]:
    """Descending score; ties go to the lower order, then the smaller field tuple."""
    return sorted([*order2, *order3], key=lambda c: (-c.score, c.order, c.fields))


@dataclass
class ScoreRun:
    ranked: list[ComboScore]
    x0: np.ndarray
    n_records: int
    backward_passes: int


def score_dataset(model: nn.DNNModel, dataset: Dataset, od_max: int = 3, fraction: float = 1.0, seed: int = 0, batch_size: int = 4096, target: str = "loss", expansion: str = "records") -> ScoreRun:
    """Score every pair (and triple if ``od_max == 3``) of the model's fields on ``dataset``."""
    if od_max not in (2, 3):
        raise ValueError("od_max must be 2 or 3")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    idx = model_inputs(model, dataset)
    labels = dataset.labels
    if fraction < 1:
        keep = np.sort(np.random.default_rng(seed).permutation(len(idx))[: max(1, int(round(fraction * len(idx))))])
        idx, labels = idx[keep], labels[keep]
    x0 = compute_expansion_point(model, idx, expansion)
    before = model.backward_passes
    s = field_signals(model, x0, idx, labels, batch_size, target)
    passes = model.backward_passes - before
    o3 = score_order3(s) if od_max >= 3 else []
    return ScoreRun(rank_combinations(score_order2(s), o3), x0, len(idx), passes)


# ------------------------------------------------------------ test oracle

MAX_ORACLE_FIELDS = 8
MAX_ORACLE_DIM = 4


def mixed_partial_importance(fn: Callable[[np.ndarray], float], x0: np.ndarray, deltas: np.ndarray, combo: Sequence[int], h: float = 1e-3) -> float:
    """mean_r |D^k fn_r(x0)[dx_i, dx_j, ...]| by nested central differences.

    ``fn(E, r)`` evaluates record r's function at embeddings ``E`` (F, d);
    ``deltas`` is (n, F, d). The k-th mixed directional derivative along each
    combo field's own deviation is a 2^k-point stencil over +/- h.
    """
    combo = tuple(combo)
    k = len(combo)
    total = 0.0
    n = deltas.shape[0]
    for r in range(n):
        acc = 0.0
        for signs in itertools.product((1.0, -1.0), repeat=k):
            e = x0.copy()
            for sgn, fld in zip(signs, combo):
                e[fld] = e[fld] + sgn * h * deltas[r, fld]
            acc += float(np.prod(signs)) * fn(e, r)
        total += abs(acc / (2.0 * h) ** k)
    return total / n


def exact_importance_oracle(model: nn.DNNModel, x0: np.ndarray, idx: np.ndarray, labels: np.ndarray, combo: Sequence[int], target: str = "loss", h: float = 1e-3) -> float:
    """Finite-difference mixed partial of the per-record loss (or logit) at ``x0``. Tiny models only."""
    if model.num_fields > MAX_ORACLE_FIELDS or model.dim > MAX_ORACLE_DIM:
        raise ValueError(f"oracle is limited to F <= {MAX_ORACLE_FIELDS}, d <= {MAX_ORACLE_DIM}")
    deltas = nn.embed(model, idx) - x0[None]
    y = np.asarray(labels, dtype=np.float64)

    def fn(e: np.ndarray, r: int) -> float:
        z = nn.forward_from_embeddings(model, e[None])[0][0]
        if target == "logit":
            return float(z)
        return float(np.logaddexp(0.0, z) - y[r] * z)

    return mixed_partial_importance(fn, x0, deltas, combo, h)
