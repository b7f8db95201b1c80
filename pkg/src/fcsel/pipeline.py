"""Stage runners behind the CLI.

Every stage writes its outputs plus a JSON manifest into the output
directory. A manifest records the stage's config hash, the sha256 of each
upstream file it consumed and of each file it produced. A stage refuses to
start if an upstream manifest was written under a different config or its
files changed since; ``pipeline`` skips stages whose manifest is still valid.
"""

from __future__ import annotations

import logging
from pathlib import Path

from . import artifacts as art
from .combiner import CombinationSpec, combo_metadata, materialize
from .config import PipelineConfig, config_hash, stage_hash
from .data import build_vocab_and_encode, generate_synthetic, load_csv, split, synthetic_rows, write_csv
from .elimination import run_lre
from .hashing import HASH_ALGORITHM
from .metrics import MetricsReport, append_results, evaluate
from .models import build_dnn, dnn_predict, train_dnn
from .scoring import score_dataset

log = logging.getLogger(__name__)

STAGES = ("prepare", "train-base", "score", "select", "augment")
MANIFESTS = {
    "prepare": "prepare.json",
    "train-base": "base_report.json",
    "score": "scores.json",
    "select": "selection.json",
    "augment": "report.json",
}
SPLITS = ("train", "val", "test")
RESULTS = "results.jsonl"


class Workspace:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)

    def path(self, name: str) -> Path:
        return self.out / name

    def manifest(self, stage: str) -> Path:
        return self.path(MANIFESTS[stage])

    def hashes(self, names) -> dict[str, str]:
        return {n: art.sha256_file(self.path(n)) for n in names}

    def check(self, stage: str) -> dict:
        """Load a stage manifest and verify it against the current config and files."""
        mpath = self.manifest(stage)
        if not mpath.is_file():
            raise art.ProvenanceError(f"{mpath} is missing; run the {stage!r} stage first")
        m = art.read_json(mpath)
        want = stage_hash(self.cfg, stage)
        if m.get("config_hash") != want:
            raise art.ProvenanceError(f"{mpath} was produced under a different config ({m.get('config_hash', '?')[:12]} != {want[:12]})")
        for group in ("upstream", "outputs"):
            for name, sha in m.get(group, {}).items():
                p = self.path(name)
                if not p.is_file() or art.sha256_file(p) != sha:
                    raise art.ProvenanceError(f"{p} does not match the hash recorded in {mpath}")
        return m

    def is_done(self, stage: str) -> bool:
        try:
            self.check(stage)
            return True
        except (art.ProvenanceError, ValueError, KeyError):
            return False

    def load_splits(self):
        return tuple(art.load_dataset(self.path(f"{s}.bin")) for s in SPLITS)


# ---------------------------------------------------------------- stages


def synthesize(cfg: PipelineConfig) -> Path:
    """Write the configured synthetic dataset as a CSV and return its path."""
    if cfg.data.synthetic is None:
        raise ValueError("config has no data.synthetic block")
    target = Path(cfg.data.path) if cfg.data.path else Path(cfg.out) / "synthetic.csv"
    ds = generate_synthetic(cfg.data.synthetic.to_spec())
    write_csv(synthetic_rows(ds), target, cfg.data.label_column, cfg.data.delimiter)
    log.info("wrote %d synthetic records to %s", len(ds), target)
    return target


def data_source(cfg: PipelineConfig) -> Path:
    src = Path(cfg.data.path) if cfg.data.path else Path(cfg.out) / "synthetic.csv"
    if not src.is_file() and cfg.data.synthetic is not None:
        synthesize(cfg)
    return src


def prepare(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    src = data_source(cfg)
    schemas, rows = load_csv(src, cfg.data.label_column, cfg.data.delimiter)
    vocab, encoded = build_vocab_and_encode(*split(rows, cfg.data.ratios, cfg.seed))
    h = stage_hash(cfg, "prepare")
    for ds in encoded:
        art.save_dataset(ws.path(f"{ds.split_tag}.bin"), ds, {"config_hash": h})
    art.save_vocab(ws.path("vocab.json"), vocab)
    outputs = [f"{s}.bin" for s in SPLITS] + ["vocab.json"]
    manifest = {
        "stage": "prepare",
        "config_hash": h,
        "source": {"name": src.name, "sha256": art.sha256_file(src)},
        "sizes": {ds.split_tag: len(ds) for ds in encoded},
        "fields": [[s.name, s.cardinality] for s in encoded[0].schemas],
        "upstream": {},
        "outputs": ws.hashes(outputs),
    }
    art.write_json(ws.manifest("prepare"), manifest)
    log.info("prepared splits %s", manifest["sizes"])
    return manifest


def train_base(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    ws.check("prepare")
    train, val, test = ws.load_splits()
    model = build_dnn(train.schemas, cfg.model.embedding_dim, cfg.model.hidden, cfg.seed)
    model, history = train_dnn(model, train, val, cfg.train_config())
    h = stage_hash(cfg, "train-base")
    upstream = ws.hashes([MANIFESTS["prepare"]])
    art.save_dnn(ws.path("base.ckpt"), model, train.schemas, {"config_hash": h, "upstream": upstream})
    val_rep = evaluate("base", val.labels, dnn_predict(model, val), "val")
    test_rep = evaluate("base", test.labels, dnn_predict(model, test), "test")
    manifest = {
        "stage": "train-base",
        "config_hash": h,
        "history": history,
        "val": val_rep.to_json(),
        "test": test_rep.to_json(),
        "upstream": upstream,
        "outputs": ws.hashes(["base.ckpt"]),
    }
    art.write_json(ws.manifest("train-base"), manifest)
    append_results(ws.path(RESULTS), "base", config_hash(cfg), test_rep)
    log.info("base model: test auc=%.5f logloss=%.5f", test_rep.auc, test_rep.logloss)
    return manifest


def score(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    ws.check("prepare")
    ws.check("train-base")
    _, val, _ = ws.load_splits()
    model, _ = art.load_dnn(ws.path("base.ckpt"))
    sc = cfg.scoring
    run = score_dataset(model, val, sc.od_max, sc.fraction, cfg.seed, sc.batch_size, sc.target, sc.expansion)
    names = val.names
    entries = [
        {"rank": r, "fields": list(c.fields), "names": [names[f] for f in c.fields], "order": c.order, "score": c.score}
        for r, c in enumerate(run.ranked)
    ]
    manifest = {
        "stage": "score",
        "config_hash": stage_hash(cfg, "score"),
        "seed": cfg.seed,
        "od_max": sc.od_max,
        "target": sc.target,
        "expansion": sc.expansion,
        "scoring_split": "val",
        "n_records": run.n_records,
        "backward_passes": run.backward_passes,
        "expansion_point": run.x0.tolist(),
        "entries": entries,
        "upstream": ws.hashes([MANIFESTS["prepare"], MANIFESTS["train-base"], "base.ckpt"]),
        "outputs": {},
    }
    art.write_json(ws.manifest("score"), manifest)
    log.info("scored %d combinations with %d backward passes", len(entries), run.backward_passes)
    return manifest


def _ranked_specs(score_manifest: dict, schemas) -> list[CombinationSpec]:
    return [CombinationSpec.of(e["fields"], schemas) for e in score_manifest["entries"]]


def select(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    ws.check("prepare")
    scores = ws.check("score")
    train, val, _ = ws.load_splits()
    ranked = _ranked_specs(scores, train.schemas)
    rank_of = {c.name: i for i, c in enumerate(ranked)}
    score_of = {c.name: e["score"] for c, e in zip(ranked, scores["entries"])}
    sel_cfg = cfg.selection_config()
    result = run_lre(ranked, train, val, sel_cfg, cfg.lr_config())
    last_gains = result.reports[-1].gains if result.reports else {}

    def entry(c: CombinationSpec) -> dict:
        return {"name": c.name, "fields": list(c.fields), "rank": rank_of[c.name], "score": score_of[c.name], "gain": last_gains.get(c.name)}

    manifest = {
        "stage": "select",
        "config_hash": stage_hash(cfg, "select"),
        "selection": cfg.selection.model_dump(mode="json"),
        "selected": [entry(c) for c in result.selected],
        "final_window": [entry(c) for c in result.final_window],
        "rounds": [
            {"iteration": r.iteration, "baseline_logloss": r.baseline_logloss, "gains": r.gains, "surrogate_checksum": next(iter(r.surrogate_checksums.values()), None)}
            for r in result.reports
        ],
        "evictions": result.evictions,
        "iterations": result.iterations,
        "stopped_by": result.stopped_by,
        "insufficient": result.insufficient,
        "combinations": combo_metadata(result.selected, train.schemas, cfg.selection.tau),
        "hash_algorithm": HASH_ALGORITHM,
        "upstream": ws.hashes([MANIFESTS["prepare"], MANIFESTS["score"]]),
        "outputs": {},
    }
    art.write_json(ws.manifest("select"), manifest)
    log.info("selected %s", [c.name for c in result.selected])
    return manifest


def augment(cfg: PipelineConfig) -> dict:
    ws = Workspace(cfg)
    ws.check("prepare")
    base_m = ws.check("train-base")
    sel = ws.check("select")
    train, val, test = ws.load_splits()
    combos = [CombinationSpec.of(e["fields"], train.schemas) for e in sel["selected"]]
    tau = cfg.selection.tau
    train_a, val_a, test_a = (materialize(d, combos, tau) for d in (train, val, test))
    model = build_dnn(train_a.schemas, cfg.model.embedding_dim, cfg.model.hidden, cfg.seed)
    model, history = train_dnn(model, train_a, val_a, cfg.train_config())
    h = stage_hash(cfg, "augment")
    upstream = ws.hashes([MANIFESTS["prepare"], MANIFESTS["train-base"], MANIFESTS["select"]])
    art.save_dnn(ws.path("augmented.ckpt"), model, train_a.schemas, {"config_hash": h, "upstream": upstream})
    base_rep = MetricsReport(**base_m["test"])
    rep = evaluate("augmented", test_a.labels, dnn_predict(model, test_a), "test", baseline=base_rep)
    manifest = {
        "stage": "augment",
        "config_hash": h,
        "combinations": combo_metadata(combos, train.schemas, tau),
        "history": history,
        "base": base_rep.to_json(),
        "augmented": rep.to_json(),
        "auc_delta": rep.auc - base_rep.auc,
        "logloss_delta": rep.logloss - base_rep.logloss,
        "rel_imp": rep.rel_imp,
        "noteworthy": rep.noteworthy,
        "upstream": upstream,
        "outputs": ws.hashes(["augmented.ckpt"]),
    }
    art.write_json(ws.manifest("augment"), manifest)
    append_results(ws.path(RESULTS), "augmented", config_hash(cfg), rep)
    log.info(
        "augmented: test auc=%.5f (base %.5f), rel_imp=%.3f%%", rep.auc, base_rep.auc, rep.rel_imp if rep.rel_imp is not None else float("nan")
    )
    return manifest


RUNNERS = {"prepare": prepare, "train-base": train_base, "score": score, "select": select, "augment": augment}


def run_pipeline(cfg: PipelineConfig, force: bool = False) -> dict:
    """Run every stage in order, skipping those whose artifacts are still valid."""
    ws = Workspace(cfg)
    ran = []
    stale = force
    for stage in STAGES:
        if not stale and ws.is_done(stage):
            log.info("stage %s is up to date, skipping", stage)
            continue
        stale = True  # everything downstream of a rerun must rerun too
        RUNNERS[stage](cfg)
        ran.append(stage)
    final = art.read_json(ws.manifest("augment"))
    return {"ran": ran, "report": final}


def summary_lines(report: dict) -> list[str]:
    b, a = report["base"], report["augmented"]
    names = [c["name"] for c in report["combinations"]] or ["(none)"]
    return [
        f"combinations : {', '.join(names)}",
        f"base         : auc={b['auc']:.5f} logloss={b['logloss']:.5f}",
        f"augmented    : auc={a['auc']:.5f} logloss={a['logloss']:.5f}",
        f"rel_imp      : {report['rel_imp']:.3f}%  noteworthy={report['noteworthy']}",
    ]
