"""Redundancy elimination over a sliding window of top-ranked combinations.

A one-hot logistic-regression surrogate is fitted on the original fields plus
the window's combinations, then frozen. Each window combination's gain is the
validation Logloss increase caused by permuting its column; combinations with
gain <= 0 are evicted and the window is refilled from the ranked list.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .combiner import TAU, CombinationSpec, materialize
from .data import Dataset, shuffle_field
from .metrics import logloss
from .models import LRConfig, LRModel, lr_predict, lr_train

log = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    k: int = 5
    window: int = 10
    t_iter: int = 1
    od_max: int = 3
    tau: int = TAU
    scoring_fraction: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.k <= self.window:
            raise ValueError("need 0 <= K <= window size")
        if self.window < 1:
            raise ValueError("window size must be >= 1")
        if self.t_iter < 0:
            raise ValueError("t_iter must be >= 0")
        if self.od_max not in (2, 3):
            raise ValueError("od_max must be 2 or 3")
        if self.tau < 1:
            raise ValueError("tau must be positive")
        if not 0 < self.scoring_fraction <= 1:
            raise ValueError("scoring_fraction must be in (0, 1]")


@dataclass
class GainReport:
    iteration: int
    baseline_logloss: float
    gains: dict[str, float]
    surrogate_checksums: dict[str, str]


@dataclass
class FeatureWindow:
    ranked: list[CombinationSpec]
    members: list[int]  # positions into ``ranked``
    cursor: int
    iteration: int = 0

    @classmethod
    def initial(cls, ranked: Sequence[CombinationSpec], size: int) -> "FeatureWindow":
        n = min(size, len(ranked))
        return cls(list(ranked), list(range(n)), n)

    @property
    def combos(self) -> list[CombinationSpec]:
        return [self.ranked[i] for i in self.members]


def shuffle_seed(seed: int, iteration: int, position: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, position]).generate_state(1)[0])


def shuffle_gain(model: LRModel, val: Dataset, feature: str, seed: int) -> float:
    """Logloss(val with ``feature`` permuted) - Logloss(val). Positive means the feature helps."""
    if feature not in model.fields:
        raise KeyError(f"{feature!r} is not in the surrogate")
    base = logloss(val.labels, lr_predict(model, val))
    shuffled = shuffle_field(val, val.field_index(feature), seed)
    return logloss(val.labels, lr_predict(model, shuffled)) - base


class Surrogate:
    """Fits the LR surrogate for a given window; the originals-only fit is cached as warm start."""

    def __init__(self, train: Dataset, val: Dataset, tau: int = TAU, config: LRConfig | None = None):
        self.train, self.val, self.tau = train, val, tau
        self.config = config or LRConfig()
        self.originals = list(train.names)
        self._base: LRModel | None = None

    def base_model(self) -> LRModel:
        if self._base is None:
            self._base = lr_train(self.train, self.originals, self.config)
        return self._base

    def fit(self, combos: Sequence[CombinationSpec]) -> tuple[LRModel, Dataset]:
        n0 = len(self.originals)
        train = materialize(self.train, combos, self.tau, base_fields=n0)
        val = materialize(self.val, combos, self.tau, base_fields=n0)
        names = [c.name for c in combos]
        model = lr_train(train, self.originals + names, self.config, l1_fields=names, init=self.base_model())
        return model, val


def evaluate_window(window: FeatureWindow, surrogate: Surrogate, seed: int, iteration: int) -> GainReport:
    model, val = surrogate.fit(window.combos)
    base = logloss(val.labels, lr_predict(model, val))
    gains, sums = {}, {}
    for pos in window.members:
        name = window.ranked[pos].name
        sums[name] = model.checksum()
        gains[name] = shuffle_gain(model, val, name, shuffle_seed(seed, iteration, pos))
    return GainReport(iteration, base, gains, sums)


def lre_iterate(window: FeatureWindow, surrogate: Surrogate, size: int, seed: int = 0) -> tuple[FeatureWindow, GainReport, list[int]]:
    """One round: fit, measure gains, evict gain <= 0, refill from the cursor."""
    it = window.iteration + 1
    report = evaluate_window(window, surrogate, seed, it)
    evicted = [p for p in window.members if report.gains[window.ranked[p].name] <= 0]
    kept = [p for p in window.members if p not in evicted]
    cursor = window.cursor
    while len(kept) < size and cursor < len(window.ranked):
        kept.append(cursor)
        cursor += 1
    return FeatureWindow(window.ranked, kept, cursor, it), report, evicted


@dataclass
class SelectionResult:
    selected: list[CombinationSpec]
    final_window: list[CombinationSpec]
    reports: list[GainReport] = field(default_factory=list)
    evictions: list[dict] = field(default_factory=list)
    iterations: int = 0
    stopped_by: str = "max_iter"
    insufficient: bool = False


def run_lre(ranked: Sequence[CombinationSpec], train: Dataset, val: Dataset, config: SelectionConfig, lr_config: LRConfig | None = None) -> SelectionResult:
    """Iterate window rounds up to ``t_iter`` times or until every gain is positive.

    Output: surviving window members in ranked order, first K.
    """
    config.validate()
    window = FeatureWindow.initial(ranked, config.window)
    surrogate = Surrogate(train, val, config.tau, lr_config)
    result = SelectionResult([], [])
    while window.iteration < config.t_iter:
        window, report, evicted = lre_iterate(window, surrogate, config.window, config.seed)
        result.reports.append(report)
        for p in evicted:
            name = ranked[p].name
            result.evictions.append({"iteration": window.iteration, "name": name, "rank": p, "gain": report.gains[name]})
        log.info("LRE round %d: evicted %d of %d", window.iteration, len(evicted), len(report.gains))
        if not evicted:
            result.stopped_by = "all_positive"
            break
    result.iterations = window.iteration
    if config.t_iter == 0:
        result.stopped_by = "disabled"
    survivors = sorted(window.members)
    result.final_window = [ranked[p] for p in survivors]
    result.selected = result.final_window[: config.k]
    result.insufficient = len(result.selected) < config.k
    if result.insufficient:
        log.warning("only %d combinations survived, fewer than K=%d", len(result.selected), config.k)
    return result
