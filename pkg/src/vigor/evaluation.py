"""Accuracy, subset breakdowns, and per-block response dumps.

Evaluation items are duck-typed: anything with a scene, a description, a
target (either `target_id` or `anchor_target_ids[-1]`), and optionally a
stored `order`.  When no stored order exists, a parser callable must be
supplied to recover one from the description.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .model import GroundingModel
from .orderparse import trim_pad

__all__ = [
    "EvalReport",
    "accuracy",
    "subset_breakdown",
    "order_length_bucket",
    "distractor_bucket",
    "dump_block_responses",
]

ORDER_BUCKETS = ("1", "2&3", "4&5")


def _target_of(item) -> int:
    if hasattr(item, "target_id"):
        return int(item.target_id)
    return int(item.anchor_target_ids[-1])


def _raw_order(item, parser: Callable[[str], Sequence[str]] | None) -> list[str]:
    if parser is not None:
        parsed = parser(item.description)
        return list(getattr(parsed, "names", parsed))
    order = getattr(item, "order", None)
    if order is None:
        raise ContractError(
            "evaluation items carry no stored order; supply a parser"
        )
    return list(order)


def order_length_bucket(n: int) -> str:
    """Bucket an order length: 1, 2&3, or 4&5 (longer orders land in 4&5)."""
    if n < 1:
        raise ContractError("order length must be positive")
    if n == 1:
        return "1"
    if n <= 3:
        return "2&3"
    return "4&5"


def distractor_bucket(item) -> str:
    """hard = more than 2 other proposals share the target's class."""
    target = _target_of(item)
    target_class = item.scene.proposals[target].class_id
    same = sum(1 for p in item.scene.proposals if p.class_id == target_class)
    return "hard" if same - 1 > 2 else "easy"


def subset_breakdown(
    items: Sequence, parser: Callable[[str], Sequence[str]] | None = None
) -> list[dict[str, str]]:
    """Partition labels per item, one dict per item, keys are families."""
    return [
        {
            "order_length": order_length_bucket(len(_raw_order(item, parser))),
            "distractors": distractor_bucket(item),
        }
        for item in items
    ]


@dataclass
class EvalReport:
    overall: float
    count: int
    subsets: dict[str, dict[str, float | int]]  # "family:bucket" -> accuracy/count
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.overall <= 1.0:
            raise ContractError("accuracy must lie in [0, 1]")
        for family in ("order_length", "distractors"):
            total = sum(
                v["count"] for k, v in self.subsets.items() if k.startswith(family + ":")
            )
            if self.subsets and total != self.count:
                raise ContractError(f"{family} buckets do not partition the dataset")

    def to_json(self) -> str:
        return json.dumps(
            {
                "overall": self.overall,
                "count": self.count,
                "subsets": self.subsets,
                "config": self.config,
            },
            indent=2,
            sort_keys=True,
        )


def accuracy(
    model: GroundingModel,
    items: Sequence,
    parser: Callable[[str], Sequence[str]] | None = None,
    score_fn: Callable[[object, list[str]], np.ndarray] | None = None,
    config: dict | None = None,
) -> EvalReport:
    """Fraction of items whose argmax score hits the target id.

    `score_fn(item, order)` may replace the model's scores with an
    injected K-vector, which keeps the harness testable against oracles.
    Ties go to the lowest proposal id.
    """
    if not items:
        raise ContractError("cannot evaluate an empty dataset")
    labels = subset_breakdown(items, parser)
    hits_total = 0
    bucket_hits: dict[str, int] = {}
    bucket_counts: dict[str, int] = {}
    for item, label in zip(items, labels):
        raw = _raw_order(item, parser)
        order = trim_pad(raw, model.cfg.b)
        if score_fn is not None:
            scores = np.asarray(score_fn(item, order), dtype=np.float64).reshape(-1)
        else:
            out = model.forward(item.scene, order, item.description)
            scores = out.scores.data[:, 0]
        if scores.shape[0] != len(item.scene):
            raise ContractError("score vector length must match proposal count")
        hit = int(np.argmax(scores)) == _target_of(item)
        hits_total += hit
        for family, bucket in label.items():
            key = f"{family}:{bucket}"
            bucket_counts[key] = bucket_counts.get(key, 0) + 1
            bucket_hits[key] = bucket_hits.get(key, 0) + hit
    subsets = {
        key: {"accuracy": bucket_hits[key] / n, "count": n}
        for key, n in sorted(bucket_counts.items())
    }
    return EvalReport(
        overall=hits_total / len(items),
        count=len(items),
        subsets=subsets,
        config=dict(config or {}),
    )


def dump_block_responses(
    model: GroundingModel,
    item,
    parser: Callable[[str], Sequence[str]] | None = None,
) -> list[np.ndarray]:
    """Row norms of F_1..F_{B+1}: B+1 vectors of length K, for plotting."""
    order = trim_pad(_raw_order(item, parser), model.cfg.b)
    out = model.forward(item.scene, order, item.description)
    return [np.linalg.norm(f.matrix.data, axis=1) for f in out.features]
