"""Stand-in probabilistic text classifier.

A hashed bag-of-words logistic regression trained with minibatch SGD
(per-coordinate adaptive step sizes) on per-annotation binary
cross-entropy: every annotation record is one training instance, so
replicated records enter the loss once per copy. That is the whole
mechanism by which replication-based reweighting reaches the model.
Weights are snapshotted after every epoch and the epoch with the best
development-set loss wins.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.special import expit

from .rng import stream
from .simulation import Dataset

MODEL_FORMAT = "pairsim-hashed-logistic"
MODEL_VERSION = 1

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.2
    hash_dim: int = 2 ** 14
    batch_size: int = 64
    # small ridge pins the flat directions of the hashed feature space, so
    # runs converge to one point instead of a shuffle-dependent noise ball
    l2: float = 1e-5


@dataclass(frozen=True, eq=False)
class Model:
    """Trained classifier: hashed token weights, bias, and provenance.

    ``history`` holds the selection loss (dev loss when a dev dataset was
    given, training loss otherwise) measured after each epoch;
    ``best_epoch`` is the 1-based epoch whose weights were kept.
    """

    weights: np.ndarray
    bias: float
    config: TrainConfig
    seed: int
    best_epoch: int
    history: tuple[float, ...]


def token_index(token: str, dim: int) -> int:
    """Stable hash of a token into [0, dim)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def _item_matrix(
    item_ids: Sequence[str],
    texts: Mapping[str, Sequence[str]],
    dim: int,
) -> sparse.csr_matrix:
    """One row per item: hashed token frequencies (counts / length)."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for item_id in item_ids:
        tokens = texts[item_id]
        if not tokens:
            raise ValueError(f"item {item_id!r} has an empty text")
        counts: dict[int, int] = {}
        for tok in tokens:
            j = token_index(tok, dim)
            counts[j] = counts.get(j, 0) + 1
        total = len(tokens)
        for j in sorted(counts):
            indices.append(j)
            data.append(counts[j] / total)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(item_ids), dim),
    )


def loss_and_grad(
    w: np.ndarray,
    b: float,
    X: sparse.csr_matrix,
    y: np.ndarray,
) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy over the batch and its analytic gradient."""
    p = expit(X @ w + b)
    p_safe = np.clip(p, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    loss = -float(np.mean(y * np.log(p_safe) + (1.0 - y) * np.log(1.0 - p_safe)))
    residual = (p - y) / len(y)
    grad_w = np.asarray(X.T @ residual)
    grad_b = float(residual.sum())
    return loss, grad_w, grad_b


def _missing_texts(dataset: Dataset, texts: Mapping[str, Sequence[str]]) -> list[str]:
    return sorted({r.item_id for r in dataset.records} - set(texts))


def _instances(
    dataset: Dataset,
    texts: Mapping[str, Sequence[str]],
    dim: int,
) -> tuple[sparse.csr_matrix, np.ndarray]:
    """One feature row and label per annotation record."""
    item_ids = list(dict.fromkeys(r.item_id for r in dataset.records))
    row_of = {item_id: i for i, item_id in enumerate(item_ids)}
    X_items = _item_matrix(item_ids, texts, dim)
    rows = np.array([row_of[r.item_id] for r in dataset.records], dtype=np.int64)
    y = np.array([r.label for r in dataset.records], dtype=np.float64)
    return X_items[rows], y


def train(
    dataset: Dataset,
    texts: Mapping[str, Sequence[str]],
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    dev: Dataset | None = None,
) -> Model:
    """Fit the classifier on one instance per annotation record.

    ``texts`` maps item_id to its token sequence and must cover every
    item in ``dataset`` (and ``dev``). With a dev dataset, the epoch
    whose weights minimize dev loss is kept; otherwise training loss is
    used. Deterministic given (dataset, texts, config, seed).
    """
    if config.epochs < 1:
        raise ValueError("epochs must be at least 1")
    if config.hash_dim < 2:
        raise ValueError("hash_dim must be at least 2")
    if not dataset.records:
        raise ValueError("training dataset is empty")
    missing = _missing_texts(dataset, texts)
    if dev is not None:
        missing = sorted(set(missing) | set(_missing_texts(dev, texts)))
    if missing:
        raise ValueError(f"no text for items: {', '.join(missing[:10])}")

    X, y = _instances(dataset, texts, config.hash_dim)
    X_sel, y_sel = (X, y) if dev is None else _instances(dev, texts, config.hash_dim)

    w = np.zeros(config.hash_dim)
    b = 0.0
    # per-coordinate adaptive steps: the bias coordinate sees every
    # instance while a single token sees a few percent, so one global
    # rate cannot serve both
    accum_w = np.zeros(config.hash_dim)
    accum_b = 0.0
    n = X.shape[0]
    best_loss = np.inf
    best_w, best_b, best_epoch = w.copy(), b, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = stream(seed, "sgd-shuffle", epoch).permutation(n)
        Xe = X[perm]
        ye = y[perm]
        for start in range(0, n, config.batch_size):
            stop = min(start + config.batch_size, n)
            _, grad_w, grad_b = loss_and_grad(w, b, Xe[start:stop], ye[start:stop])
            grad_w += config.l2 * w
            accum_w += grad_w * grad_w
            w -= config.learning_rate * grad_w / np.sqrt(accum_w + 1e-12)
            accum_b += grad_b * grad_b
            b -= config.learning_rate * grad_b / math.sqrt(accum_b + 1e-12)
        sel_loss, _, _ = loss_and_grad(w, b, X_sel, y_sel)
        history.append(sel_loss)
        if sel_loss < best_loss:
            best_loss = sel_loss
            best_w, best_b, best_epoch = w.copy(), b, epoch
    if not np.all(np.isfinite(best_w)) or not np.isfinite(best_b):
        raise ValueError("training diverged to non-finite weights; lower the learning rate")
    return Model(
        weights=best_w,
        bias=best_b,
        config=config,
        seed=seed,
        best_epoch=best_epoch,
        history=tuple(history),
    )


def predict(model: Model, texts: Mapping[str, Sequence[str]]) -> dict[str, float]:
    """Predicted positive probability per item; pure function of the model."""
    item_ids = list(texts)
    if not item_ids:
        return {}
    X = _item_matrix(item_ids, texts, model.config.hash_dim)
    p = expit(X @ model.weights + model.bias)
    return {item_id: float(p[i]) for i, item_id in enumerate(item_ids)}


def proportion_oracle(dataset: Dataset) -> dict[str, float]:
    """Per item, the fraction of its records (replicas included) labeled 1.

    An analytic predictor: what a perfectly calibrated learner would
    output on the training items, independent of any model.
    """
    if not dataset.records:
        raise ValueError("dataset is empty")
    return {
        item_id: sum(r.label for r in recs) / len(recs)
        for item_id, recs in dataset.records_by_item().items()
    }


# ---------------------------------------------------------------------------
# model file format


def save_model(model: Model, path: Union[str, Path]) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "epochs": model.config.epochs,
        "learning_rate": model.config.learning_rate,
        "hash_dim": model.config.hash_dim,
        "batch_size": model.config.batch_size,
        "l2": model.config.l2,
        "seed": model.seed,
        "best_epoch": model.best_epoch,
        "history": list(model.history),
        "bias": model.bias,
        "weights": model.weights.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path: Union[str, Path]) -> Model:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {payload.get('version')}")
    config = TrainConfig(
        epochs=payload["epochs"],
        learning_rate=payload["learning_rate"],
        hash_dim=payload["hash_dim"],
        batch_size=payload["batch_size"],
        l2=payload["l2"],
    )
    return Model(
        weights=np.array(payload["weights"], dtype=np.float64),
        bias=float(payload["bias"]),
        config=config,
        seed=int(payload["seed"]),
        best_epoch=int(payload["best_epoch"]),
        history=tuple(payload["history"]),
    )
