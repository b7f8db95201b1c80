"""Categorical click-log ingestion, vocabularies, splits and synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

OOV = 0


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class FieldSchema:
    field_id: int
    name: str
    cardinality: int = 0  # 0 until a vocabulary has been built
    is_label: bool = False


@dataclass(frozen=True)
class RawRows:
    """Rows as read from disk: string values per feature column plus labels."""

    names: tuple[str, ...]
    values: list[tuple[str, ...]]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def take(self, idx: np.ndarray) -> "RawRows":
        return RawRows(self.names, [self.values[i] for i in idx], self.labels[idx])


@dataclass(frozen=True)
class Vocabulary:
    """Per-field value -> index maps. Index 0 is the OOV slot."""

    names: tuple[str, ...]
    maps: tuple[dict[str, int], ...]

    def cardinality(self, field_id: int) -> int:
        return len(self.maps[field_id]) + 1

    def encode(self, field_id: int, value: str) -> int:
        return self.maps[field_id].get(value, OOV)

    def decode(self, field_id: int, index: int) -> str | None:
        if index == OOV:
            return None
        inverse = self._inverse(field_id)
        return inverse[index]

    def _inverse(self, field_id: int) -> list[str]:
        m = self.maps[field_id]
        inv = [""] * (len(m) + 1)
        for k, v in m.items():
            inv[v] = k
        return inv

    def to_json(self) -> dict:
        return {"names": list(self.names), "values": [self._inverse(i)[1:] for i in range(len(self.names))]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        maps = tuple({v: i + 1 for i, v in enumerate(vals)} for vals in obj["values"])
        return cls(tuple(obj["names"]), maps)


@dataclass(frozen=True)
class Dataset:
    """Index-encoded records. ``values[:, i]`` is the column of field ``schemas[i]``."""

    schemas: tuple[FieldSchema, ...]
    values: np.ndarray
    labels: np.ndarray
    split_tag: str = "train"

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.schemas):
            raise DataError(f"values shape {self.values.shape} does not match {len(self.schemas)} fields")
        if self.values.shape[0] != self.labels.shape[0]:
            raise DataError("labels and records differ in length")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.schemas)

    @property
    def num_fields(self) -> int:
        return len(self.schemas)

    def field_index(self, name: str) -> int:
        for i, s in enumerate(self.schemas):
            if s.name == name:
                return i
        raise KeyError(f"unknown field {name!r}")

    def column(self, field_id: int) -> np.ndarray:
        return self.values[:, field_id]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        """Column block for ``names`` in that order, shape (n, len(names))."""
        try:
            idx = [self.field_index(n) for n in names]
        except KeyError as exc:
            raise DataError(f"dataset is missing field: {exc}") from None
        return self.values[:, idx]

    def take(self, idx: np.ndarray) -> "Dataset":
        return replace(self, values=self.values[idx], labels=self.labels[idx])

    def with_tag(self, tag: str) -> "Dataset":
        return replace(self, split_tag=tag)

    def validate(self) -> None:
        for i, s in enumerate(self.schemas):
            col = self.values[:, i]
            if len(col) and (col.min() < 0 or col.max() >= s.cardinality):
                raise DataError(f"field {s.name!r} has index outside [0, {s.cardinality})")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be binary")


def _parse_label(raw: str, line_no: int) -> int:
    try:
        v = float(raw)
    except ValueError:
        raise DataError(f"line {line_no}: label {raw!r} is not numeric") from None
    if v not in (0.0, 1.0):
        raise DataError(f"line {line_no}: label {raw!r} is not binary")
    return int(v)


def load_csv(path: str | Path, label_column: str = "label", delimiter: str = ",") -> tuple[list[FieldSchema], RawRows]:
    """Read a headered CSV. Every non-label column becomes a categorical field."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        li = header.index(label_column)
        feat_idx = [i for i in range(len(header)) if i != li]
        names = tuple(header[i] for i in feat_idx)
        rows: list[tuple[str, ...]] = []
        labels: list[int] = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: line {line_no} has {len(rec)} columns, expected {len(header)}")
            labels.append(_parse_label(rec[li], line_no))
            rows.append(tuple(rec[i] for i in feat_idx))
    schemas = [FieldSchema(i, n) for i, n in enumerate(names)]
    return schemas, RawRows(names, rows, np.asarray(labels, dtype=np.int8))


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Test takes floor(n * r_test); val takes floor of its share of the rest; train keeps the remainder.

    For Frappe (288,609 rows, 7:2:1) this gives 202,027 / 57,722 / 28,860.
    """
    r_train, r_val, r_test = ratios
    if min(ratios) < 0 or abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {tuple(ratios)}")
    n_test = math.floor(n * r_test + 1e-9)
    rest = n - n_test
    share = r_val / (r_train + r_val) if r_train + r_val > 0 else 0.0
    n_val = math.floor(rest * share + 1e-9)
    return rest - n_val, n_val, n_test


def split_indices(n: int, ratios: Sequence[float], seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_train, n_val, _ = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split(rows, ratios: Sequence[float] = (0.7, 0.2, 0.1), seed: int = 0):
    """Seeded random row split into (train, val, test). Works on RawRows or Dataset."""
    tr, va, te = split_indices(len(rows), ratios, seed)
    parts = rows.take(tr), rows.take(va), rows.take(te)
    if isinstance(rows, Dataset):
        parts = tuple(p.with_tag(t) for p, t in zip(parts, ("train", "val", "test")))
    return parts


def build_vocab(train: RawRows) -> Vocabulary:
    maps = []
    for j in range(len(train.names)):
        seen = sorted({r[j] for r in train.values})
        maps.append({v: i + 1 for i, v in enumerate(seen)})
    return Vocabulary(train.names, tuple(maps))


def encode(rows: RawRows, vocab: Vocabulary, schemas: Sequence[FieldSchema], tag: str) -> Dataset:
    n, f = len(rows), len(vocab.names)
    values = np.zeros((n, f), dtype=np.int64)
    for j, m in enumerate(vocab.maps):
        values[:, j] = np.fromiter((m.get(r[j], OOV) for r in rows.values), dtype=np.int64, count=n)
    return Dataset(tuple(schemas), values, rows.labels.astype(np.int8), tag)


def build_vocab_and_encode(train: RawRows, val: RawRows, test: RawRows, schemas=None):
    """Vocabulary from the train split only; unseen val/test values map to OOV (0)."""
    if not (train.names == val.names == test.names):
        raise DataError("splits do not share a schema")
    vocab = build_vocab(train)
    schemas = [FieldSchema(i, n, vocab.cardinality(i)) for i, n in enumerate(train.names)]
    return vocab, tuple(encode(r, vocab, schemas, t) for r, t in ((train, "train"), (val, "val"), (test, "test")))


def shuffle_field(dataset: Dataset, field_id: int, seed: int) -> Dataset:
    """Copy of ``dataset`` with one column permuted by a seeded permutation."""
    if not 0 <= field_id < dataset.num_fields:
        raise KeyError(f"unknown field id {field_id}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    values = dataset.values.copy()
    values[:, field_id] = values[perm, field_id]
    return replace(dataset, values=values)


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class PlantedCombo:
    fields: tuple[int, ...]
    pattern: str = "xor"  # "xor" (parity of value indices) | "lookup" (random table)
    weight: float = 4.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    Config keys: ``num_fields``, ``cardinalities`` (int or list), ``planted``
    (list of ``{fields, pattern, weight}``), ``main_effects`` (per-value logit
    std applied to ``main_effect_fields``), ``noise`` (logit noise std),
    ``bias``, ``n_records``, ``seed``.
    """

    num_fields: int = 8
    cardinalities: int | tuple[int, ...] = 4
    planted: tuple[PlantedCombo, ...] = ()
    main_effects: float = 0.0
    main_effect_fields: tuple[int, ...] = ()
    noise: float = 0.0
    bias: float = 0.0
    n_records: int = 10_000
    seed: int = 0

    def cards(self) -> tuple[int, ...]:
        if isinstance(self.cardinalities, int):
            return (self.cardinalities,) * self.num_fields
        if len(self.cardinalities) != self.num_fields:
            raise ValueError("cardinalities must list one entry per field")
        return tuple(self.cardinalities)

    def validate(self) -> None:
        cards = self.cards()
        if min(cards) < 1:
            raise ValueError("cardinalities must be >= 1")
        for p in self.planted:
            if len(set(p.fields)) != len(p.fields) or not all(0 <= f < self.num_fields for f in p.fields):
                raise ValueError(f"planted combo {p.fields} references invalid fields")
            if not math.isfinite(p.weight):
                raise ValueError("planted weight must be finite")
            if p.pattern not in ("xor", "lookup"):
                raise ValueError(f"unknown pattern {p.pattern!r}")
        if any(not 0 <= f < self.num_fields for f in self.main_effect_fields):
            raise ValueError("main_effect_fields out of range")


def planted_logit(spec: SyntheticSpec, raw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Logit contribution of the planted patterns for raw value indices ``raw`` (0-based)."""
    cards = spec.cards()
    z = np.full(raw.shape[0], spec.bias, dtype=np.float64)
    for f in spec.main_effect_fields:
        table = rng.normal(0.0, spec.main_effects, size=cards[f])
        z += table[raw[:, f]]
    for p in spec.planted:
        cols = raw[:, list(p.fields)]
        if p.pattern == "xor":
            parity = cols.sum(axis=1) % 2
            z += p.weight * (parity - 0.5)
        else:
            sizes = [cards[f] for f in p.fields]
            table = rng.normal(0.0, 1.0, size=int(np.prod(sizes)))
            flat = np.ravel_multi_index(tuple(cols.T), sizes)
            z += p.weight * table[flat]
    return z


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Uniform categorical fields, labels ~ Bernoulli(sigmoid(planted logit + noise)).

    Encoded index k+1 holds raw value k; index 0 stays the (unused) OOV slot.
    With even cardinalities each xor field is marginally independent of the label.
    """
    spec.validate()
    cards = spec.cards()
    rng = np.random.default_rng(spec.seed)
    raw = np.column_stack([rng.integers(0, c, size=spec.n_records) for c in cards]).astype(np.int64)
    z = planted_logit(spec, raw, rng)
    if spec.noise > 0:
        z = z + rng.normal(0.0, spec.noise, size=spec.n_records)
    prob = 1.0 / (1.0 + np.exp(-z))
    labels = (rng.random(spec.n_records) < prob).astype(np.int8)
    schemas = tuple(FieldSchema(i, f"f{i}", c + 1) for i, c in enumerate(cards))
    return Dataset(schemas, raw + 1, labels, "train")


def synthetic_rows(dataset: Dataset) -> RawRows:
    """String view of an encoded dataset, e.g. for writing a CSV."""
    names = dataset.names
    values = [tuple(f"v{v}" for v in row) for row in dataset.values.tolist()]
    return RawRows(names, values, dataset.labels.copy())


def write_csv(rows: RawRows, path: str | Path, label_column: str = "label", delimiter: str = ",") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([label_column, *rows.names])
        for y, r in zip(rows.labels.tolist(), rows.values):
            w.writerow([y, *r])
