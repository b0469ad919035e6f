"""Export of per-layer attention scores and per-node salience."""

from __future__ import annotations

import math
from typing import Any, Sequence

import jsonschema
import numpy as np

from .graph import Graph, batch
from .model import GEAETModel
from .tensor import no_grad

ATTN_DUMP_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "attention dump entry (one graph)",
    "type": "object",
    "required": ["graph", "layers", "salience"],
    "additionalProperties": False,
    "properties": {
        "graph": {"type": "integer", "minimum": 0},
        "layers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["layer", "gea", "self"],
                "additionalProperties": False,
                "properties": {
                    "layer": {"type": "integer", "minimum": 0},
                    "gea": {"$ref": "#/$defs/heads"},
                    "self": {"$ref": "#/$defs/heads"},
                },
            },
        },
        "salience": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    },
    "$defs": {
        "matrix": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number", "minimum": 0}},
        },
        "heads": {
            "type": "object",
            "required": ["heads"],
            "additionalProperties": False,
            "properties": {"heads": {"type": "array", "items": {"$ref": "#/$defs/matrix"}}},
        },
    },
}


def salience(alpha: np.ndarray) -> np.ndarray:
    """``1 - H(alpha_i) / ln S`` per row: 0 for a uniform row, 1 for a one-hot row.

    With a single external unit every row is trivially one-hot and gets 1.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    s = alpha.shape[1]
    if s == 1:
        return np.ones(alpha.shape[0])
    logs = np.log(np.where(alpha > 0, alpha, 1.0))
    entropy = -np.sum(alpha * logs, axis=1)
    return np.clip(1.0 - entropy / math.log(s), 0.0, 1.0)


def dump_graph(model: GEAETModel, g: Graph, index: int) -> dict[str, Any]:
    """Attention record for one graph from a fresh single-graph forward pass."""
    record: dict[str, Any] = {}
    with no_grad():
        model(batch([g]), record=record)
    layers = []
    for l, rec in enumerate(record.get("layers", [])):
        gea = [a.tolist() for a in rec.get("gea", [])]
        self_heads = []
        for _, probs in rec.get("self", []):
            self_heads = [probs[0, h].tolist() for h in range(probs.shape[1])]
        layers.append({"layer": l, "gea": {"heads": gea}, "self": {"heads": self_heads}})
    sal: list[float] = []
    last = record.get("layers", [{}])[-1].get("gea") if record.get("layers") else None
    if last:
        sal = salience(np.mean(last, axis=0)).tolist()
    return {"graph": index, "layers": layers, "salience": sal}


def dump_attention(model: GEAETModel, graphs: Sequence[Graph]) -> list[dict[str, Any]]:
    entries = [dump_graph(model, g, i) for i, g in enumerate(graphs)]
    for entry in entries:
        validate_entry(entry)
    return entries


def validate_entry(entry: dict[str, Any]) -> None:
    jsonschema.validate(entry, ATTN_DUMP_SCHEMA)
