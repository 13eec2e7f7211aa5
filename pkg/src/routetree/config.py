"""Declarative run configuration: one JSON document drives every command.

The document is validated against a closed jsonschema (unknown keys are
rejected, naming the offending path) and then lowered onto the dataclass
configs of the model, trainer, and synthetic generator.
"""

from __future__ import annotations

import json

import jsonschema

from .errors import ConfigInvalid
from .model import ModelConfig
from .propagation import PropagationConfig
from .splits import AGGREGATORS, SPLIT_VARIANTS, SplitConfig
from .synth import SynthSpec
from .trainer import SCHEDULERS, TrainConfig

_SYNTH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "clusters": {"type": "integer", "minimum": 2},
        "dim": {"type": "integer", "minimum": 1},
        "contexts_per_cluster": {"type": "integer", "minimum": 1},
        "query_noise": {"type": "number", "minimum": 0},
        "separation": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "with_tokens": {"type": "boolean"},
        "token_noise": {"type": "number", "minimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "io": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "contexts": {"type": "string"},
                "queries": {"type": "string"},
                "pairs": {"type": "string"},
                "manifest": {"type": "string"},
                "synth": _SYNTH_SCHEMA,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "split": {"enum": list(SPLIT_VARIANTS)},
                "aggregator": {"enum": list(AGGREGATORS)},
                "propagation": {"enum": ["product", "learned"]},
                "depth": {"type": "integer", "minimum": 1},
                "n_e": {"type": "integer", "minimum": 1},
                "heads": {"type": "integer", "minimum": 1},
                "d_head": {"type": "integer", "minimum": 1},
                "dim": {"type": "integer", "minimum": 1},
                "token_dim": {"type": "integer", "minimum": 1},
                "node_emb_dim": {"type": "integer", "minimum": 0},
                "hidden": {"type": "integer", "minimum": 1},
                "agg_hidden": {"type": "integer", "minimum": 1},
                "prop_hidden": {"type": "integer", "minimum": 1},
                "score_dropout": {"type": "number",
                                  "minimum": 0, "exclusiveMaximum": 1},
                "split_dropout": {"type": "number",
                                  "minimum": 0, "exclusiveMaximum": 1},
                "prop_dropout": {"type": "number",
                                 "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": {"type": "integer", "minimum": 2},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "total_steps": {"type": "integer", "minimum": 1},
                "warmup_steps": {"type": "integer", "minimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "scheduler": {"enum": list(SCHEDULERS)},
                "stochastic_beta": {"type": "number", "minimum": 0},
                "l1_weight": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "log_every": {"type": "integer", "minimum": 1},
                "checkpoint_every": {"type": "integer", "minimum": 0},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "levels": {"type": "array",
                           "items": {"type": "integer", "minimum": 0}},
                "k": {"type": "array",
                      "items": {"type": "integer", "minimum": 1}},
                "metric": {"enum": ["ntvd", "cosine"]},
            },
        },
        "baseline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["kmeans", "gmm"]},
                "depth": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "inspect": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "modes": {"type": "array",
                          "items": {"enum": ["all_pairs",
                                             "ancestor_descendant",
                                             "lca", "keywords"]}},
                "k": {"type": "integer", "minimum": 1},
                "sample_size": {"type": "integer", "minimum": 1},
            },
        },
    },
}


def validate_config(document: dict) -> dict:
    """Schema-check the raw document; raises ConfigInvalid naming the path."""
    try:
        jsonschema.validate(document, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigInvalid(f"{exc.json_path}: {exc.message}") from exc
    return document

def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            document = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    return validate_config(document)


def build_model_config(document: dict) -> ModelConfig:
    m = document.get("model", {})
    split = SplitConfig(
        variant=m.get("split", "cross_attention"),
        dim=m.get("dim", 1024),
        token_dim=m.get("token_dim", m.get("dim", 1024)),
        hidden=m.get("hidden", 128),
        dropout=m.get("split_dropout", 0.0),
        n_e=m.get("n_e", 1),
        n_heads=m.get("heads", 8),
        d_head=m.get("d_head", 64),
        node_emb_dim=m.get("node_emb_dim", 0),
        aggregator=m.get("aggregator", "tree_structured"),
        agg_hidden=m.get("agg_hidden", 16),
    )
    prop = PropagationConfig(
        variant=m.get("propagation", "learned"),
        hidden=m.get("prop_hidden", 16),
        dropout=m.get("prop_dropout", 0.0),
    )
    return ModelConfig(depth=m.get("depth", 10), split=split,
                       propagation=prop,
                       score_dropout=m.get("score_dropout", 0.0))


def build_train_config(document: dict) -> TrainConfig:
    return TrainConfig(**document.get("train", {}))


def build_synth_spec(document: dict) -> SynthSpec | None:
    synth = document.get("io", {}).get("synth")
    return SynthSpec(**synth) if synth is not None else None
