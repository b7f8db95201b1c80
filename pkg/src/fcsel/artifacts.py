"""On-disk formats: a binary array container for checkpoints and splits, canonical JSON for reports.

Container layout (all integers little-endian)::

    8 bytes   magic  b"FCSCKPT1"
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys): {"kind", "meta", "arrays": [{name, dtype, shape, offset, nbytes}]}
    ...       raw C-order little-endian array payloads at the listed offsets (relative to payload start)

No timestamps are written, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .data import Dataset, FieldSchema, Vocabulary
from .nn import DNNModel, EmbeddingTable
from .models import LRModel

MAGIC = b"FCSCKPT1"


class ProvenanceError(RuntimeError):
    """An artifact was produced under a different config or from different upstream files."""


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: str | Path, obj: Any) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return sha256_file(path)


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return sha256_file(path)


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a container file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise ValueError(f"{path}: expected a {kind!r} container, found {header['kind']!r}")
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        buf = data[base + e["offset"] : base + e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def schema_hash(schemas) -> str:
    payload = json.dumps([[s.name, s.cardinality] for s in schemas])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ----------------------------------------------------------------- models


def save_dnn(path: str | Path, model: DNNModel, schemas, extra: dict | None = None) -> str:
    meta = {
        "model_kind": "dnn",
        "fields": model.fields,
        "schema_hash": schema_hash(schemas),
        "dim": model.dim,
        "layers": [list(w.shape) for w in model.weights],
        "tables": [{"n_rows": t.n_rows, "name": t.name, "init_scale": t.init_scale, "dense": t.dense} for t in model.tables],
        **(extra or {}),
    }
    arrays: dict[str, np.ndarray] = {}
    for i, t in enumerate(model.tables):
        arrays[f"table{i}.values"] = t.values
        if not t.dense:
            arrays[f"table{i}.keys"] = t.keys
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"layer{i}.weight"] = w
        arrays[f"layer{i}.bias"] = b
    return write_container(path, "model", meta, arrays)


def load_dnn(path: str | Path) -> tuple[DNNModel, dict]:
    meta, arrays = read_container(path, "model")
    if meta.get("model_kind") != "dnn":
        raise ValueError(f"{path}: not a DNN checkpoint")
    tables = []
    for i, tm in enumerate(meta["tables"]):
        t = EmbeddingTable(tm["n_rows"], meta["dim"], tm["name"], tm["init_scale"], dense_limit=tm["n_rows"] if tm["dense"] else 0)
        t.values = arrays[f"table{i}.values"]
        if not tm["dense"]:
            t.keys = arrays[f"table{i}.keys"]
        tables.append(t)
    n_layers = len(meta["layers"])
    weights = [arrays[f"layer{i}.weight"] for i in range(n_layers)]
    biases = [arrays[f"layer{i}.bias"] for i in range(n_layers)]
    return DNNModel(list(meta["fields"]), tables, weights, biases), meta


def save_lr(path: str | Path, model: LRModel, extra: dict | None = None) -> str:
    meta = {"model_kind": "lr", "fields": model.fields, "cardinalities": model.cardinalities, "bias": model.bias, **(extra or {})}
    arrays = {}
    for i, (k, w) in enumerate(zip(model.keys, model.weights)):
        arrays[f"field{i}.keys"] = k
        arrays[f"field{i}.weights"] = w
    return write_container(path, "model", meta, arrays)


def load_lr(path: str | Path) -> tuple[LRModel, dict]:
    meta, arrays = read_container(path, "model")
    if meta.get("model_kind") != "lr":
        raise ValueError(f"{path}: not an LR checkpoint")
    n = len(meta["fields"])
    model = LRModel(
        list(meta["fields"]),
        list(meta["cardinalities"]),
        float(meta["bias"]),
        [arrays[f"field{i}.keys"] for i in range(n)],
        [arrays[f"field{i}.weights"] for i in range(n)],
    )
    return model, meta


# --------------------------------------------------------------- datasets


def save_dataset(path: str | Path, ds: Dataset, extra: dict | None = None) -> str:
    meta = {"split_tag": ds.split_tag, "schemas": [[s.name, s.cardinality] for s in ds.schemas], **(extra or {})}
    return write_container(path, "dataset", meta, {"values": ds.values.astype(np.int64), "labels": ds.labels.astype(np.int8)})


def load_dataset(path: str | Path) -> Dataset:
    meta, arrays = read_container(path, "dataset")
    schemas = tuple(FieldSchema(i, n, c) for i, (n, c) in enumerate(meta["schemas"]))
    return Dataset(schemas, arrays["values"], arrays["labels"], meta["split_tag"])


def save_vocab(path: str | Path, vocab: Vocabulary) -> str:
    return write_json(path, vocab.to_json())
