import itertools
import math

import numpy as np
import pytest

from fcsel import nn
from fcsel.models import build_dnn
from fcsel.scoring import (
    ComboScore,
    compute_expansion_point,
    exact_importance_oracle,
    field_signals,
    mixed_partial_importance,
    rank_combinations,
    score_dataset,
    score_order2,
    score_order3,
)


def naive_pair_scores(model, x0, idx, labels):
    """One backward pass per record, then an explicit double loop over pairs."""
    F = model.num_fields
    per_record = []
    for r in range(len(idx)):
        _, cache = nn.forward(model, idx[r : r + 1])
        _, tape = nn.backward(model, cache, labels[r : r + 1])
        s = [float(tape[0, i] @ (cache.embeds[0, i] - x0[i])) for i in range(F)]
        per_record.append(s)
    out = {}
    for i in range(F):
        for j in range(i + 1, F):
            out[(i, j)] = sum(abs(s[i] * s[j]) for s in per_record) / len(per_record)
    return out


def test_expansion_point_constant_and_symmetric(make_tiny_model):
    m = make_tiny_model(2, 3, (4,), [3, 2], 0)
    idx = np.array([[1, 0], [1, 1], [1, 0], [1, 1]])
    x0 = compute_expansion_point(m, idx)
    np.testing.assert_allclose(x0[0], m.tables[0].values[1])
    np.testing.assert_allclose(x0[1], (m.tables[1].values[0] + m.tables[1].values[1]) / 2)
    with pytest.raises(ValueError):
        compute_expansion_point(m, idx[:0])


def test_expansion_point_table_mode(make_tiny_model):
    m = make_tiny_model(1, 2, (2,), [3], 0)
    idx = np.array([[0], [0], [0], [2]])
    np.testing.assert_allclose(compute_expansion_point(m, idx, "table")[0], m.tables[0].values[[0, 2]].mean(0))
    np.testing.assert_allclose(compute_expansion_point(m, idx, "records")[0], (3 * m.tables[0].values[0] + m.tables[0].values[2]) / 4)


def test_single_record_signals_vanish(make_tiny_model):
    m = make_tiny_model(3, 2, (4,), [3, 3, 3], 1)
    idx = np.array([[2, 1, 0]])
    s = field_signals(m, compute_expansion_point(m, idx), idx, np.array([1.0]))
    np.testing.assert_array_equal(s, 0.0)


def test_signal_is_dot_product():
    t = nn.EmbeddingTable(2, 1, "x")
    t.values = np.array([[0.0], [1.0]])
    m = nn.DNNModel(["a"], [t], [np.array([[2.0]])], [np.zeros(1)])
    s = field_signals(m, np.array([[4.0]]), np.array([[1]]), np.array([0.0]), target="logit")
    assert s[0, 0] == pytest.approx(-6.0)  # J = 2, dx = 1 - 4


@pytest.mark.parametrize("target", ["loss", "logit"])
def test_batched_matches_naive_loop(make_tiny_model, target):
    m = make_tiny_model(5, 2, (6,), [3, 4, 3, 2, 5], 4)
    rng = np.random.default_rng(4)
    idx = np.column_stack([rng.integers(0, c, 60) for c in [3, 4, 3, 2, 5]])
    y = rng.integers(0, 2, 60).astype(float)
    x0 = compute_expansion_point(m, idx)
    batched = {c.fields: c.score for c in score_order2(field_signals(m, x0, idx, y, batch_size=17, target=target))}
    if target == "loss":
        naive = naive_pair_scores(m, x0, idx, y)
        for k, v in naive.items():
            assert abs(batched[k] - v) <= 1e-10
    # batch size must not matter
    again = {c.fields: c.score for c in score_order2(field_signals(m, x0, idx, y, batch_size=60, target=target))}
    for k in batched:
        assert abs(batched[k] - again[k]) <= 1e-12


def test_order2_examples():
    s = np.array([[1.0, 2.0, 0.0], [3.0, -1.0, 1.0]])
    sc = {c.fields: c.score for c in score_order2(s)}
    assert sc[(0, 1)] == 2.5
    assert sc[(1, 2)] == 0.5
    assert len(score_order2(np.ones((2, 10)))) == 45


def test_order3_examples():
    sc = score_order3(np.array([[1.0, -2.0, 3.0]]))
    assert len(sc) == 1 and sc[0].fields == (0, 1, 2) and sc[0].score == 6.0
    assert len(score_order3(np.ones((3, 10)))) == 120


def test_zero_signal_absorption_and_nonnegativity():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(30, 5))
    s[:, 2] = 0.0
    for c in score_order2(s) + score_order3(s):
        assert c.score >= 0
        if 2 in c.fields:
            assert c.score == 0.0


def test_order3_matches_loop():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(25, 5))
    sc = {c.fields: c.score for c in score_order3(s, chunk=7)}
    for i, j, k in itertools.combinations(range(5), 3):
        assert sc[(i, j, k)] == pytest.approx(np.mean(np.abs(s[:, i] * s[:, j] * s[:, k])), abs=1e-12)


def test_rank_examples():
    r = rank_combinations([ComboScore((0, 1), 2.5), ComboScore((0, 2), 1.0)], [ComboScore((0, 1, 2), 3.0)])
    assert [c.fields for c in r] == [(0, 1, 2), (0, 1), (0, 2)]
    r = rank_combinations([ComboScore((0, 1), 1.0)], [ComboScore((0, 1, 2), 1.0)])
    assert [c.fields for c in r] == [(0, 1), (0, 1, 2)]
    r = rank_combinations([ComboScore((1, 2), 1.0), ComboScore((0, 3), 1.0)])
    assert [c.fields for c in r] == [(0, 3), (1, 2)]


def test_score_dataset_counts_and_passes(make_dataset):
    ds = make_dataset(1000, [3] * 10, 0, "val")
    m = build_dnn(ds.schemas, 2, (4,), 0)
    r3 = score_dataset(m, ds, od_max=3, batch_size=300)
    r2 = score_dataset(m, ds, od_max=2, batch_size=300)
    assert len(r3.ranked) == 165 and len(r2.ranked) == 45
    assert r3.backward_passes == r2.backward_passes == math.ceil(1000 / 300)
    scores = [c.score for c in r3.ranked]
    assert scores == sorted(scores, reverse=True)
    sub = score_dataset(m, ds, od_max=2, fraction=0.1, seed=1)
    assert sub.n_records == 100
    with pytest.raises(ValueError):
        score_dataset(m, ds, od_max=4)


def test_oracle_quadratic_toy():
    rng = np.random.default_rng(0)
    x0 = np.zeros((2, 1))
    deltas = rng.normal(size=(20, 2, 1))
    got = mixed_partial_importance(lambda e, r: e[0, 0] * e[1, 0], x0, deltas, (0, 1))
    assert got == pytest.approx(np.mean(np.abs(deltas[:, 0, 0] * deltas[:, 1, 0])), rel=1e-8)


def test_oracle_ignored_field_and_symmetry(make_tiny_model):
    m = make_tiny_model(4, 2, (5,), [3, 3, 3, 3], 2)
    m.weights[0][4:6] = 0.0  # field 2 has no fan-out
    rng = np.random.default_rng(2)
    idx = rng.integers(0, 3, (8, 4))
    y = rng.integers(0, 2, 8).astype(float)
    x0 = compute_expansion_point(m, idx)
    assert exact_importance_oracle(m, x0, idx, y, (0, 2)) < 1e-6
    a = exact_importance_oracle(m, x0, idx, y, (0, 1, 3))
    b = exact_importance_oracle(m, x0, idx, y, (3, 0, 1))
    assert abs(a - b) <= 1e-9


def test_oracle_size_guard(make_tiny_model):
    m = make_tiny_model(9, 1, (2,), [2] * 9, 0)
    with pytest.raises(ValueError):
        exact_importance_oracle(m, np.zeros((9, 1)), np.zeros((1, 9), int), np.zeros(1), (0, 1))
