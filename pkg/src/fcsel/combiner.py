"""Materialise field combinations as new categorical columns."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import hashing
from .data import Dataset, FieldSchema

TAU = 5_000_000
SEP = "×"


@dataclass(frozen=True, order=True)
class CombinationSpec:
    fields: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        if len(self.fields) not in (2, 3):
            raise ValueError(f"combination order must be 2 or 3, got {self.fields}")
        if any(a >= b for a, b in zip(self.fields, self.fields[1:])):
            raise ValueError(f"combination fields must be strictly increasing, got {self.fields}")

    @property
    def order(self) -> int:
        return len(self.fields)

    @classmethod
    def of(cls, fields: Sequence[int], schemas: Sequence[FieldSchema]) -> "CombinationSpec":
        fields = tuple(sorted(int(f) for f in fields))
        for f in fields:
            if not 0 <= f < len(schemas):
                raise ValueError(f"field id {f} does not exist")
        return cls(fields, SEP.join(schemas[f].name for f in fields))


@dataclass(frozen=True)
class HashedVocab:
    raw_cardinality: int
    tau: int = TAU

    @property
    def effective_cardinality(self) -> int:
        return min(self.raw_cardinality, self.tau)

    @property
    def hashed(self) -> bool:
        return self.raw_cardinality > self.tau


def combined_cardinality(combo: CombinationSpec, schemas: Sequence[FieldSchema]) -> int:
    """Product of constituent cardinalities as an exact Python int."""
    out = 1
    for f in combo.fields:
        out *= int(schemas[f].cardinality)
    return out


def _raw_ids(cols: np.ndarray, cards: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Mixed-radix id (first field most significant) as (lo, hi) uint64 limbs."""
    total = 1
    for c in cards:
        total *= c
    if total < 2**63:
        rid = np.zeros(cols.shape[0], dtype=np.int64)
        for j, c in enumerate(cards):
            rid = rid * c + cols[:, j]
        return rid.astype(np.uint64), np.zeros(cols.shape[0], dtype=np.uint64)
    # wide path: exact arbitrary-precision ids
    rid = np.zeros(cols.shape[0], dtype=object)
    for j, c in enumerate(cards):
        rid = rid * int(c) + cols[:, j].astype(object)
    mask = (1 << 64) - 1
    lo = np.array([int(v) & mask for v in rid], dtype=np.uint64)
    hi = np.array([(int(v) >> 64) & mask for v in rid], dtype=np.uint64)
    return lo, hi


def combined_value_id(combo: CombinationSpec, values: np.ndarray, schemas: Sequence[FieldSchema], tau: int = TAU) -> np.ndarray:
    """Ids for records whose constituent value indices are ``values`` (n, order).

    Below ``tau`` the id is the mixed-radix index itself. Above it the id is
    ``splitmix64(splitmix64(lo ^ salt) ^ hi) mod tau`` where ``lo``/``hi`` are
    the 64-bit limbs of the mixed-radix index and ``salt`` is the BLAKE2b-64
    digest of the combination name.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    cards = [int(schemas[f].cardinality) for f in combo.fields]
    if values.shape[1] != len(cards):
        raise ValueError("record does not carry every constituent field")
    for j, c in enumerate(cards):
        col = values[:, j]
        if col.size and (col.min() < 0 or col.max() >= c):
            raise IndexError(f"value index out of range for field {combo.fields[j]}")
    lo, hi = _raw_ids(values, cards)
    vocab = HashedVocab(combined_cardinality(combo, schemas), tau)
    if not vocab.hashed:
        return lo.astype(np.int64)
    s = hashing.salt(combo.name)
    h = hashing.splitmix64(hashing.splitmix64(lo ^ s) ^ hi)
    return (h % np.uint64(tau)).astype(np.int64)


def materialize(dataset: Dataset, combos: Sequence[CombinationSpec], tau: int = TAU, base_fields: int | None = None) -> Dataset:
    """Append one column per combination. Constituents index the first ``base_fields`` columns."""
    base = dataset.num_fields if base_fields is None else base_fields
    schemas = list(dataset.schemas)
    names = set(dataset.names)
    seen: set[tuple[int, ...]] = set()
    new_cols = []
    for c in combos:
        if not c.name:
            c = CombinationSpec.of(c.fields, dataset.schemas[:base])
        if c.fields in seen or c.name in names:
            raise ValueError(f"combination {c.name or c.fields} is already materialised")
        if max(c.fields) >= base:
            raise ValueError(f"combination {c.fields} references a non-original field")
        seen.add(c.fields)
        names.add(c.name)
        ids = combined_value_id(c, dataset.values[:, list(c.fields)], dataset.schemas, tau)
        card = HashedVocab(combined_cardinality(c, dataset.schemas), tau).effective_cardinality
        schemas.append(FieldSchema(len(schemas), c.name, card))
        new_cols.append(ids)
    if not new_cols:
        return dataset
    values = np.column_stack([dataset.values, *new_cols])
    return replace(dataset, schemas=tuple(schemas), values=values)


def combo_metadata(combos: Sequence[CombinationSpec], schemas: Sequence[FieldSchema], tau: int = TAU) -> list[dict]:
    out = []
    for c in combos:
        raw = combined_cardinality(c, schemas)
        v = HashedVocab(raw, tau)
        out.append(
            {
                "name": c.name,
                "fields": list(c.fields),
                "raw_cardinality": str(raw),
                "effective_cardinality": v.effective_cardinality,
                "hashed": v.hashed,
                "hash_algorithm": hashing.HASH_ALGORITHM,
            }
        )
    return out
