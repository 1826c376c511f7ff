"""Calibration and accuracy metrics, plus cross-seed aggregation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

from .simulation import Dataset, GoldTable

METRIC_FIELDS = ("acb", "f1", "positive_proportion")


@dataclass(frozen=True)
class MetricsReport:
    """Metrics of one trained model / one seed."""

    acb: float
    f1: float
    positive_proportion: float
    n_items: int
    seed: int


@dataclass(frozen=True)
class AggregateReport:
    """Mean and population standard deviation per metric over seeds."""

    mean: dict[str, float]
    std: dict[str, float]
    seeds: tuple[int, ...]


def _check_items(preds: Mapping[str, float], gold: GoldTable) -> None:
    pred_ids = set(preds)
    gold_ids = set(gold.item_ids())
    if pred_ids != gold_ids:
        only_pred = sorted(pred_ids - gold_ids)
        only_gold = sorted(gold_ids - pred_ids)
        raise ValueError(
            "prediction/gold item mismatch: "
            f"{len(only_pred)} only in predictions {only_pred[:5]}, "
            f"{len(only_gold)} only in gold {only_gold[:5]}"
        )


def acb(preds: Mapping[str, float], gold: GoldTable) -> float:
    """Mean absolute difference between predictions and gold proportions."""
    _check_items(preds, gold)
    return sum(abs(preds[e.item_id] - e.p_gold) for e in gold.entries) / len(gold.entries)


def f1(
    preds: Mapping[str, float],
    gold: GoldTable,
    prob_threshold: float = 0.5,
    tie_positive: bool = True,
) -> float:
    """Binary F1 of thresholded predictions against the gold majority label.

    An item is gold-positive when p_gold >= 0.5 (ties positive by
    default; set tie_positive=False to count p_gold == 0.5 negative).
    When there are no positive predictions and no positive gold labels
    the score is reported as 0.0 with a warning.
    """
    if not 0.0 < prob_threshold < 1.0:
        raise ValueError(f"prob_threshold {prob_threshold} outside (0, 1)")
    _check_items(preds, gold)
    tp = fp = fn = 0
    for e in gold.entries:
        pred_pos = preds[e.item_id] >= prob_threshold
        gold_pos = e.p_gold >= 0.5 if tie_positive else e.p_gold > 0.5
        if pred_pos and gold_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif gold_pos:
            fn += 1
    denom = 2 * tp + fp + fn
    if denom == 0:
        warnings.warn(
            "no positive predictions and no positive gold labels; F1 reported as 0.0",
            stacklevel=2,
        )
        return 0.0
    return 2 * tp / denom


def positive_proportion(dataset: Dataset) -> float:
    """Fraction of annotation records (replicas included) labeled 1."""
    if not dataset.records:
        raise ValueError("dataset is empty")
    return sum(r.label for r in dataset.records) / len(dataset.records)


def aggregate(runs: Sequence[MetricsReport]) -> AggregateReport:
    """Per-metric mean and population standard deviation across runs."""
    if not runs:
        raise ValueError("need at least one run to aggregate")
    n_items = {r.n_items for r in runs}
    if len(n_items) > 1:
        raise ValueError(f"runs have mixed item counts {sorted(n_items)}; refusing to aggregate")
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for field in METRIC_FIELDS:
        values = [getattr(r, field) for r in runs]
        m = sum(values) / len(values)
        mean[field] = m
        std[field] = math.sqrt(sum((v - m) ** 2 for v in values) / len(values))
    return AggregateReport(mean=mean, std=std, seeds=tuple(r.seed for r in runs))
