import numpy as np
import pytest

from fcsel.data import Dataset, FieldSchema
from fcsel.nn import DNNModel, EmbeddingTable, init_mlp


def tiny_model(num_fields, dim, hidden, cards, seed, init_scale=0.5):
    rng = np.random.default_rng(seed)
    tables = [EmbeddingTable(c, dim, f"t{seed}:{i}", init_scale=init_scale) for i, c in enumerate(cards)]
    weights, biases = init_mlp(num_fields * dim, hidden, seed)
    biases = [rng.normal(0, 0.1, b.shape) for b in biases]
    return DNNModel([f"f{i}" for i in range(num_fields)], tables, weights, biases)


def random_dataset(n, cards, seed, tag="train"):
    rng = np.random.default_rng(seed)
    values = np.column_stack([rng.integers(0, c, n) for c in cards]).astype(np.int64)
    labels = rng.integers(0, 2, n).astype(np.int8)
    schemas = tuple(FieldSchema(i, f"f{i}", c) for i, c in enumerate(cards))
    return Dataset(schemas, values, labels, tag)


@pytest.fixture
def make_tiny_model():
    return tiny_model


@pytest.fixture
def make_dataset():
    return random_dataset


def small_config(out, **overrides):
    """Pipeline config dict for a fast planted-xor run."""
    cfg = {
        "seed": 0,
        "out": str(out),
        "data": {
            "synthetic": {
                "num_fields": 6,
                "cardinalities": 4,
                "planted": [{"fields": [1, 4], "pattern": "xor", "weight": 4.0}],
                "noise": 0.3,
                "n_records": 6000,
                "seed": 0,
            }
        },
        "model": {"embedding_dim": 4, "hidden": [16]},
        "train": {"lr": 0.005, "batch_size": 256, "max_epochs": 8},
        "scoring": {"od_max": 3},
        "selection": {"k": 2, "window": 4, "t_iter": 1},
    }
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = val
    return cfg


def write_config(path, cfg):
    import yaml

    path.write_text(yaml.safe_dump(cfg))
    return path


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
