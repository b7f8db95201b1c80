"""Acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line (also repeated
in the terminal summary) and then asserts the criterion.
"""

import hashlib
import math
import os
import struct
import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from acceptance_log import LINES
from conftest import small_config, tiny_model, write_config
from gradcheck import check_model
from test_metrics import brute_auc
from test_scoring import naive_pair_scores

from fcsel import artifacts as art
from fcsel import cli, nn, pipeline
from fcsel.combiner import TAU, CombinationSpec, combined_value_id, materialize
from fcsel.config import PipelineConfig
from fcsel.data import DataError, FieldSchema, Dataset, PlantedCombo, SyntheticSpec, generate_synthetic, split
from fcsel.elimination import SelectionConfig, run_lre
from fcsel.metrics import auc, rel_imp
from fcsel.models import build_dnn, train_dnn
from fcsel.scoring import compute_expansion_point, exact_importance_oracle, field_signals, score_dataset, score_order2

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def test_criterion_1_gradient_correctness(report):
    t = time.time()
    results = [check_model(seed) for seed in range(50)]
    worst = max(r for r, _ in results)
    passed = sum(ok for _, ok in results)
    elapsed = time.time() - t
    ok = passed == 50 and worst <= 1e-3 and elapsed < 60
    report(1, ok, f"{passed}/50 tiny models within tolerance, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_backward_pass_economy(report):
    t = time.time()
    rng = np.random.default_rng(0)
    n, batch = 5000, 512
    schemas = tuple(FieldSchema(i, f"f{i}", 5) for i in range(10))
    ds = Dataset(schemas, rng.integers(0, 5, (n, 10)), rng.integers(0, 2, n).astype(np.int8), "val")
    model = build_dnn(schemas, 4, (16,), 0)
    r3 = score_dataset(model, ds, od_max=3, batch_size=batch)
    r2 = score_dataset(model, ds, od_max=2, batch_size=batch)
    want = math.ceil(n / batch)
    elapsed = time.time() - t
    ok = len(r3.ranked) == 165 and r3.backward_passes == want and r2.backward_passes == want and elapsed < 60
    report(2, ok, f"165 combos scored with {r3.backward_passes} backward passes (expected {want}); Od_max=2 used {r2.backward_passes}; {elapsed:.1f}s")
    assert ok


def _planted_rank(target, n_records, seed):
    spec = SyntheticSpec(8, 4, (PlantedCombo(target, "xor", 3.0),), noise=0.5, n_records=n_records, seed=seed)
    ds = generate_synthetic(spec)
    tr, va, _ = split(ds, (0.7, 0.2, 0.1), seed)
    model = build_dnn(ds.schemas, 8, (32, 32), seed)
    model, _ = train_dnn(model, tr, va, nn.TrainConfig(lr=3e-3, batch_size=256, max_epochs=30, seed=seed))
    same_order = [c.fields for c in score_dataset(model, va, od_max=3).ranked if c.order == len(target)]
    return same_order.index(target)


def test_criterion_3_planted_interaction_recovery(report):
    t = time.time()
    pair_ranks = [_planted_rank((2, 5), 20_000, s) for s in range(10)]
    triple_ranks = [_planted_rank((1, 3, 6), 30_000, s) for s in range(10)]
    pair_hits = sum(r == 0 for r in pair_ranks)
    triple_hits = sum(r < 3 for r in triple_ranks)
    elapsed = time.time() - t
    ok = pair_hits >= 9 and triple_hits >= 8 and elapsed < 600
    report(3, ok, f"pair ranked #1 in {pair_hits}/10 seeds, triple in top 3 of triples in {triple_hits}/10 seeds; {elapsed:.1f}s")
    assert ok


def test_criterion_4_lre_redundancy_elimination(report):
    t = time.time()
    dup_evicted = informative_kept = 0
    order = [(2, 5), (0, 7), (1, 3), (3, 4), (0, 6), (4, 6), (1, 2), (3, 6), (0, 3), (2, 4), (5, 6)]
    for seed in range(10):
        # field 7 is constant, so the combination f0 x f7 is an exact relabelling of f0
        spec = SyntheticSpec(8, (6, 4, 4, 4, 4, 4, 4, 1), (PlantedCombo((2, 5), "xor", 3.0),), 1.0, (0, 1), 0.5, 0.0, 20_000, seed)
        ds = generate_synthetic(spec)
        tr, va, _ = split(ds, (0.7, 0.2, 0.1), seed)
        ranked = [CombinationSpec.of(f, ds.schemas) for f in order]
        res = run_lre(ranked, tr, va, SelectionConfig(k=5, window=10, t_iter=1, seed=seed))
        gains = res.reports[0].gains
        dup_evicted += gains["f0×f7"] <= 0 and any(e["name"] == "f0×f7" for e in res.evictions)
        informative_kept += gains["f2×f5"] > 0 and "f2×f5" in [c.name for c in res.selected]
    elapsed = time.time() - t
    ok = dup_evicted >= 9 and informative_kept >= 9 and elapsed < 300
    report(4, ok, f"duplicate evicted in {dup_evicted}/10 seeds, planted combo kept in {informative_kept}/10; {elapsed:.1f}s")
    assert ok


def test_criterion_5_metric_oracles(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 300))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding forces ties
        worst = max(worst, abs(auc(y, s) - brute_auc(y, s)))
    ri = rel_imp(0.9868, 0.9735)
    ok = worst <= 1e-12 and abs(ri - 2.81) <= 0.01
    report(5, ok, f"AUC vs brute force on 100 instances: max |diff| {worst:.1e}; rel_imp(0.9868, 0.9735) = {ri:.4f}%")
    assert ok


def _frappe_csv():
    env = os.environ.get("FCSEL_FRAPPE_CSV")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).parent / "data" / "frappe.csv")
    return next((p for p in candidates if p.is_file()), None)


def test_criterion_6_frappe_reproduction(report, tmp_path):
    src = _frappe_csv()
    if src is None:
        report(6, False, "Frappe CSV not available (set FCSEL_FRAPPE_CSV or place tests/data/frappe.csv); criterion not evaluated")
        pytest.fail("Frappe dataset is not available in this environment")
    t = time.time()
    results = {}
    for window in (10, 20):
        cfg = PipelineConfig.model_validate(
            {
                "seed": 0,
                "out": str(tmp_path / f"w{window}"),
                "data": {"path": str(src), "label_column": "label"},
                "scoring": {"od_max": 3},
                "selection": {"k": 5, "window": window, "t_iter": 1},
            }
        )
        rep = pipeline.run_pipeline(cfg)["report"]
        results[window] = (rep["base"]["auc"], rep["augmented"]["auc"])
    base = results[10][0]
    best_gain = max(a - b for b, a in results.values())
    elapsed = time.time() - t
    ok = abs(base - 0.9735) <= 0.015 and best_gain >= 0.005
    detail = ", ".join(f"S_w={w}: base {b:.4f} -> augmented {a:.4f}" for w, (b, a) in results.items())
    report(6, ok, f"{detail}; {elapsed / 60:.1f} min")
    assert ok


def _ids_checksum(ids):
    return hashlib.sha256(struct.pack(f"<{len(ids)}q", *[int(v) for v in ids])).hexdigest()


# sha256 of 1000 hashed ids for the combination "u×i" (3000 x 3000 values),
# computed with the pure-Python reference hash in test_hashing.py
GOLDEN_IDS = "4257bf017f82532e9551ecf3945c76f3e6299b5e729967a02db73c96a53a1225"


def test_criterion_7_hashing_contract(report):
    schemas = (FieldSchema(0, "u", 3000), FieldSchema(1, "i", 3000))
    i = np.arange(1000)
    values = np.column_stack([(i * 7919) % 3000, (i * 104729) % 3000])
    ds = Dataset(schemas, values, np.zeros(1000, np.int8), "train")
    aug = materialize(ds, [CombinationSpec.of((0, 1), schemas)])
    model = build_dnn(aug.schemas, 4, (8,), 0)
    rows = model.tables[2].n_rows
    run1 = _ids_checksum(aug.values[:, 2])
    run2 = _ids_checksum(combined_value_id(CombinationSpec.of((0, 1), schemas), values, schemas))
    wide = [FieldSchema(k, f"w{k}", 2**40) for k in range(3)]
    big = combined_value_id(CombinationSpec.of((0, 1, 2), wide), np.array([[2**40 - 1] * 3]), wide)
    ok = rows == TAU and aug.schemas[2].cardinality == TAU and run1 == run2 == GOLDEN_IDS and 0 <= big[0] < TAU
    report(7, ok, f"9.0e6-value combination -> table of {rows:,} rows; id checksum {run1[:16]}... matches reference: {run1 == GOLDEN_IDS}")
    assert ok


def test_criterion_8_determinism(report, tmp_path):
    runs = []
    for name in ("a", "b"):
        cfg = write_config(tmp_path / f"{name}.yaml", small_config(tmp_path / name))
        assert cli.main(["pipeline", "--config", str(cfg), "--threads", "1"]) == 0
        runs.append(tmp_path / name)
    same = {f: (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes() for f in ("scores.json", "selection.json", "report.json")}
    ok = all(same.values())
    report(8, ok, "byte-identical across two runs: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


def test_criterion_9_scorer_oracle_spot_check(report):
    worst, agreements = 0.0, []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        F, d = 6, 2
        cards = [3] * F
        model = tiny_model(F, d, (8,), cards, seed)
        idx = rng.integers(0, 3, (40, F))
        y = rng.integers(0, 2, 40).astype(float)
        x0 = compute_expansion_point(model, idx)
        approx = {c.fields: c.score for c in score_order2(field_signals(model, x0, idx, y, batch_size=16))}
        naive = naive_pair_scores(model, x0, idx, y)
        worst = max(worst, max(abs(approx[k] - naive[k]) for k in naive))
        exact = {k: exact_importance_oracle(model, x0, idx, y, k) for k in naive}
        keys = sorted(naive)
        a = np.argsort(np.argsort([approx[k] for k in keys]))
        e = np.argsort(np.argsort([exact[k] for k in keys]))
        agreements.append(float(np.corrcoef(a, e)[0, 1]))
    ok = worst <= 1e-10
    report(9, ok, f"batched vs naive pair scores max |diff| {worst:.1e}; rank correlation with finite-difference oracle (reported only): {', '.join(f'{r:.2f}' for r in agreements)}")
    assert ok
