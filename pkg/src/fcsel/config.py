"""Pipeline configuration (YAML or JSON file).

Top-level keys: ``seed``, ``out``, ``data``, ``model``, ``train``,
``scoring``, ``selection``. Unknown keys are rejected. Example::

    seed: 0
    out: runs/frappe
    data:
      path: data/frappe.csv
      label_column: label
      ratios: [0.7, 0.2, 0.1]
    model: {embedding_dim: 16, hidden: [64, 64]}
    train: {lr: 0.001, batch_size: 1024, max_epochs: 100}
    scoring: {od_max: 3, fraction: 1.0}
    selection: {k: 5, window: 10, t_iter: 1, tau: 5000000}

``data.synthetic`` (instead of, or in addition to, ``data.path``) holds a
generator block: ``num_fields``, ``cardinalities``, ``planted`` (list of
``{fields, pattern, weight}``), ``main_effects``, ``main_effect_fields``,
``noise``, ``bias``, ``n_records``, ``seed``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .combiner import TAU
from .data import PlantedCombo, SyntheticSpec
from .elimination import SelectionConfig
from .models import LRConfig
from .nn import TrainConfig


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantedSection(_Section):
    fields: list[int]
    pattern: Literal["xor", "lookup"] = "xor"
    weight: float = 4.0


class SyntheticSection(_Section):
    num_fields: int = Field(10, ge=1)
    cardinalities: int | list[int] = 4
    planted: list[PlantedSection] = []
    main_effects: float = 0.0
    main_effect_fields: list[int] = []
    noise: float = Field(0.0, ge=0)
    bias: float = 0.0
    n_records: int = Field(20_000, ge=1)
    seed: int = 0

    def to_spec(self) -> SyntheticSpec:
        cards = self.cardinalities if isinstance(self.cardinalities, int) else tuple(self.cardinalities)
        spec = SyntheticSpec(
            self.num_fields,
            cards,
            tuple(PlantedCombo(tuple(p.fields), p.pattern, p.weight) for p in self.planted),
            self.main_effects,
            tuple(self.main_effect_fields),
            self.noise,
            self.bias,
            self.n_records,
            self.seed,
        )
        spec.validate()
        return spec


class DataSection(_Section):
    path: str | None = None
    label_column: str = "label"
    delimiter: str = ","
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    synthetic: SyntheticSection | None = None

    @field_validator("ratios")
    @classmethod
    def _ratios(cls, v):
        if min(v) <= 0 or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("ratios must be positive and sum to 1")
        return v


class ModelSection(_Section):
    embedding_dim: int = Field(16, ge=1)
    hidden: list[int] = [64, 64]


class TrainSection(_Section):
    lr: float = Field(1e-3, ge=0)
    batch_size: int = Field(1024, ge=1)
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(2, ge=1)
    embedding_l2: float = Field(0.0, ge=0)


class ScoringSection(_Section):
    od_max: int = 3
    fraction: float = Field(1.0, gt=0, le=1)
    batch_size: int = Field(4096, ge=1)
    target: Literal["loss", "logit"] = "loss"
    expansion: Literal["records", "table"] = "records"

    @field_validator("od_max")
    @classmethod
    def _od(cls, v):
        if v not in (2, 3):
            raise ValueError("od_max must be 2 or 3 (higher orders are not supported)")
        return v


class SelectionSection(_Section):
    k: int = Field(5, ge=0)
    window: int = Field(10, ge=1)
    t_iter: int = Field(1, ge=0)
    tau: int = Field(TAU, ge=1)
    lr_l2: float = Field(1e-6, ge=0)
    lr_l1: float = Field(1e-4, ge=0)
    lr_max_iter: int = Field(1000, ge=1)


class PipelineConfig(_Section):
    seed: int = 0
    out: str = "runs/default"
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    scoring: ScoringSection = ScoringSection()
    selection: SelectionSection = SelectionSection()

    @model_validator(mode="after")
    def _check(self):
        if self.selection.k > self.selection.window:
            raise ValueError("selection.k must not exceed selection.window")
        if self.data.path is None and self.data.synthetic is None:
            raise ValueError("data.path or data.synthetic is required")
        return self

    # -- conversions into library configs
    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.lr, t.batch_size, t.max_epochs, t.patience, t.embedding_l2, self.seed)

    def selection_config(self) -> SelectionConfig:
        s = self.selection
        return SelectionConfig(s.k, s.window, s.t_iter, self.scoring.od_max, s.tau, self.scoring.fraction, self.seed)

    def lr_config(self) -> LRConfig:
        s = self.selection
        return LRConfig(l2=s.lr_l2, l1=s.lr_l1, max_iter=s.lr_max_iter)


STAGE_SECTIONS = {
    "prepare": ("seed", "data"),
    "train-base": ("seed", "data", "model", "train"),
    "score": ("seed", "data", "model", "train", "scoring"),
    "select": ("seed", "data", "model", "train", "scoring", "selection"),
    "augment": ("seed", "data", "model", "train", "scoring", "selection"),
}


def stage_hash(cfg: PipelineConfig, stage: str) -> str:
    """Hash of the config sections that determine ``stage``'s output."""
    dump = cfg.model_dump(mode="json")
    payload = {k: dump[k] for k in STAGE_SECTIONS[stage]}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.model_dump(mode="json"), sort_keys=True).encode("utf-8")).hexdigest()


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            raw = (json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)) or {}
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    try:
        return PipelineConfig.model_validate(raw)
    except Exception as exc:  # pydantic.ValidationError
        raise ConfigError(str(exc)) from None
