"""Simulated annotation pools with controllable annotator-composition bias.

Each item carries a gold agreement proportion: the fraction of a
reference annotator panel that labeled it positive. Annotator strata
shift that proportion down or up by a bias offset (clamped to [0, 1])
before Bernoulli label draws, so pools that over-represent one stratum
produce systematically shifted label distributions.

The module also builds the four-recipe dataset family used by the
experiment harness, with two annotator types A (shifted down) and B
(shifted up):

    representative  12 annotations per item (6 A, 6 B)
    nonrep1          9 per item (6 A, 3 B): representative minus 3 B
    nonrep2         12 per item (9 A, 3 B): nonrep1 plus 3 fresh A draws
    adjusted        12 per item: nonrep1 with every B record replicated
                    (produced by pairsim.adjust, not here)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .rng import stream

MINUS = "minus"
PLUS = "plus"

TYPE_A = "A"  # shifted down: less likely to label an item positive
TYPE_B = "B"  # shifted up

RECIPE_REPRESENTATIVE = "representative"
RECIPE_NONREP1 = "nonrep1"
RECIPE_NONREP2 = "nonrep2"
RECIPE_ADJUSTED = "adjusted"
RECIPES = (RECIPE_REPRESENTATIVE, RECIPE_NONREP1, RECIPE_NONREP2, RECIPE_ADJUSTED)

REPRESENTATIVE_COUNTS = {TYPE_A: 6, TYPE_B: 6}
NONREP1_B_DELETIONS = 3
NONREP2_EXTRA_A = 3

#: size of the reference panel synthetic proportions are quantized to
GOLD_PANEL_SIZE = 12


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class GoldEntry:
    item_id: str
    text: tuple[str, ...]
    p_gold: float
    k_reference: int


@dataclass(frozen=True)
class GoldTable:
    """Per-item reference agreement proportions."""

    entries: tuple[GoldEntry, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if not 0.0 <= e.p_gold <= 1.0:
                raise ValueError(f"item {e.item_id!r}: p_gold {e.p_gold} outside [0, 1]")
            if e.k_reference < 1:
                raise ValueError(f"item {e.item_id!r}: k_reference must be positive")
            if e.item_id in seen:
                raise ValueError(f"duplicate item_id {e.item_id!r} in gold table")
            seen.add(e.item_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def item_ids(self) -> tuple[str, ...]:
        return tuple(e.item_id for e in self.entries)

    def texts(self) -> dict[str, tuple[str, ...]]:
        return {e.item_id: e.text for e in self.entries}

    def p_by_item(self) -> dict[str, float]:
        return {e.item_id: e.p_gold for e in self.entries}


@dataclass(frozen=True)
class RawItem:
    """One item with its complete set of reference annotations."""

    item_id: str
    text: tuple[str, ...]
    labels: tuple[int, ...]


@dataclass(frozen=True)
class BiasSpec:
    """Bias offset and the shift direction of each annotator stratum."""

    beta: float
    direction_by_stratum: Mapping[str, str]

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 0.5:
            raise ValueError(f"beta {self.beta} outside [0, 0.5]")
        for s, d in self.direction_by_stratum.items():
            if d not in (MINUS, PLUS):
                raise ValueError(f"stratum {s!r}: direction must be {MINUS!r} or {PLUS!r}")

    @classmethod
    def two_type(cls, beta: float) -> "BiasSpec":
        """The standard design: type A shifted down, type B shifted up."""
        return cls(beta, {TYPE_A: MINUS, TYPE_B: PLUS})


@dataclass(frozen=True)
class PoolComposition:
    """Annotations per item contributed by each stratum."""

    counts: Mapping[str, int]

    def __post_init__(self) -> None:
        for s, n in self.counts.items():
            if n < 0:
                raise ValueError(f"stratum {s!r}: negative annotation count")
        if sum(self.counts.values()) < 1:
            raise ValueError("pool composition must provide at least one annotation per item")


@dataclass(frozen=True)
class Annotation:
    annotation_id: str
    item_id: str
    stratum_id: str
    label: int
    source: str = "original"
    replica_of: str | None = None


@dataclass(frozen=True)
class DatasetMeta:
    task: str
    recipe: str
    beta: float
    seed: int


@dataclass(frozen=True)
class Dataset:
    """Multiset of stratum-tagged annotations with replication provenance."""

    records: tuple[Annotation, ...]
    meta: DatasetMeta

    def __len__(self) -> int:
        return len(self.records)

    def records_by_item(self) -> dict[str, list[Annotation]]:
        grouped: dict[str, list[Annotation]] = {}
        for rec in self.records:
            grouped.setdefault(rec.item_id, []).append(rec)
        return grouped

    def restrict(self, item_ids: Iterable[str]) -> "Dataset":
        """Keep only the records of the given items (meta unchanged)."""
        wanted = set(item_ids)
        return Dataset(tuple(r for r in self.records if r.item_id in wanted), self.meta)

    def validate(self) -> None:
        """Check record-level invariants; raises ValueError on violation."""
        by_id: dict[str, Annotation] = {}
        for rec in self.records:
            if rec.label not in (0, 1):
                raise ValueError(f"annotation {rec.annotation_id!r}: label {rec.label} not binary")
            if rec.source not in ("original", "replica"):
                raise ValueError(f"annotation {rec.annotation_id!r}: bad source {rec.source!r}")
            if rec.annotation_id in by_id:
                raise ValueError(f"duplicate annotation_id {rec.annotation_id!r}")
            by_id[rec.annotation_id] = rec
        for rec in self.records:
            if rec.source == "replica":
                if rec.replica_of is None or rec.replica_of not in by_id:
                    raise ValueError(
                        f"replica {rec.annotation_id!r} does not reference an existing annotation"
                    )
                orig = by_id[rec.replica_of]
                if (orig.item_id, orig.stratum_id, orig.label) != (
                    rec.item_id,
                    rec.stratum_id,
                    rec.label,
                ):
                    raise ValueError(
                        f"replica {rec.annotation_id!r} disagrees with its original "
                        f"{rec.replica_of!r} on (item, stratum, label)"
                    )
            elif rec.replica_of is not None:
                raise ValueError(f"original {rec.annotation_id!r} carries replica_of")


@dataclass(frozen=True)
class Suite:
    """The sampled recipes for one (beta, seed) cell.

    The adjusted dataset is not part of the suite: it is derived from
    nonrep1 by pairsim.adjust.apply_pair.
    """

    representative: Dataset
    nonrep1: Dataset
    nonrep2: Dataset


# ---------------------------------------------------------------------------
# gold-table construction


def subsample_indices(seed: int, item_index: int, n: int, m: int) -> tuple[int, ...]:
    """Which of an item's ``n`` reference annotations survive a draw of ``m``.

    Uniform without replacement. Exposed so the retained subset can be
    recomputed independently of :func:`derive_gold`.
    """
    gen = stream(seed, "subsample", item_index)
    picked = gen.choice(n, size=m, replace=False)
    return tuple(sorted(int(i) for i in picked))


def _as_tokens(text: Union[str, Sequence[str]]) -> tuple[str, ...]:
    if isinstance(text, str):
        return tuple(text.split())
    return tuple(text)


def derive_gold(
    raw: Iterable[Union[RawItem, tuple]],
    subsample: int | None = None,
    seed: int = 0,
) -> GoldTable:
    """Turn raw per-annotator labels into a gold agreement table.

    With ``subsample=m``, exactly m annotations per item are drawn
    without replacement (seeded) before the proportion is computed;
    items with fewer than m annotations are rejected.
    """
    entries = []
    for idx, item in enumerate(raw):
        if isinstance(item, RawItem):
            item_id, text, labels = item.item_id, item.text, list(item.labels)
        else:
            item_id, text, labels = item[0], item[1], list(item[2])
        if not labels:
            raise ValueError(f"item {item_id!r} has no annotations")
        bad = sorted({l for l in labels if l not in (0, 1)})
        if bad:
            raise ValueError(f"item {item_id!r} has non-binary labels: {bad}")
        if subsample is not None:
            if len(labels) < subsample:
                raise ValueError(
                    f"item {item_id!r} has {len(labels)} annotations, "
                    f"cannot draw {subsample} without replacement"
                )
            if len(labels) > subsample:
                keep = subsample_indices(seed, idx, len(labels), subsample)
                labels = [labels[i] for i in keep]
        entries.append(
            GoldEntry(item_id, _as_tokens(text), sum(labels) / len(labels), len(labels))
        )
    return GoldTable(tuple(entries))


def filter_difficult(gold: GoldTable, lo: float, hi: float) -> GoldTable:
    """Keep items whose agreement proportion lies in [lo, hi], inclusive."""
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"bounds ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")
    return GoldTable(tuple(e for e in gold.entries if lo <= e.p_gold <= hi))


@dataclass(frozen=True)
class Uniform:
    """Agreement proportions uniform on [low, high]."""

    low: float
    high: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError(f"uniform bounds ({self.low}, {self.high}) invalid")


@dataclass(frozen=True)
class Rare:
    """Skewed proportions with the given mean and most mass near zero.

    Draws Beta(2m, 2(1-m)), a J-shaped distribution for small means,
    mimicking a rare positive class.
    """

    mean: float

    def __post_init__(self) -> None:
        if not 0.0 < self.mean < 1.0:
            raise ValueError(f"rare mean {self.mean} outside (0, 1)")


GoldShape = Union[Uniform, Rare]


def synth_gold(n: int, shape: GoldShape, seed: int, id_prefix: str = "item") -> GoldTable:
    """Synthesize a gold table of ``n`` items with empty texts.

    Proportions are quantized to the nearest multiple of 1/12 so every
    value is attainable by a 12-annotator reference panel (quantization
    may land just outside tight uniform bounds).
    """
    if n < 1:
        raise ValueError("need at least one item")
    if not isinstance(shape, (Uniform, Rare)):
        raise TypeError(f"unknown gold shape {type(shape).__name__}")
    entries = []
    for i in range(n):
        gen = stream(seed, f"gold:{id_prefix}", i)
        if isinstance(shape, Uniform):
            p = shape.low + (shape.high - shape.low) * gen.random()
        else:
            p = gen.beta(2 * shape.mean, 2 * (1 - shape.mean))
        grid = min(math.floor(p * GOLD_PANEL_SIZE + 0.5), GOLD_PANEL_SIZE)
        entries.append(
            GoldEntry(f"{id_prefix}{i:05d}", (), grid / GOLD_PANEL_SIZE, GOLD_PANEL_SIZE)
        )
    return GoldTable(tuple(entries))


def synth_text(
    gold: GoldTable, vocab_size: int, tokens_per_item: int, seed: int
) -> GoldTable:
    """Fill item texts so they carry signal about the gold proportion.

    The vocabulary is split into a toxic-indicative half and a
    benign-indicative half; each of an item's tokens comes from the
    toxic half with probability p_gold.
    """
    if tokens_per_item < 1:
        raise ValueError("tokens_per_item must be at least 1")
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2 (one token per half)")
    n_tox = vocab_size // 2
    n_ben = vocab_size - n_tox
    entries = []
    for idx, e in enumerate(gold.entries):
        gen = stream(seed, "text", idx)
        toxic = gen.random(tokens_per_item) < e.p_gold
        # draw indices for both halves unconditionally so consumption per
        # item is fixed regardless of the toxic mask
        tox_ids = gen.integers(0, n_tox, size=tokens_per_item)
        ben_ids = gen.integers(0, n_ben, size=tokens_per_item)
        tokens = tuple(
            f"tox{tox_ids[t]}" if toxic[t] else f"ben{ben_ids[t]}"
            for t in range(tokens_per_item)
        )
        entries.append(replace(e, text=tokens))
    return GoldTable(tuple(entries))


def concat_gold(tables: Sequence[GoldTable]) -> GoldTable:
    """Concatenate gold tables; item ids must stay unique."""
    entries: list[GoldEntry] = []
    for t in tables:
        entries.extend(t.entries)
    return GoldTable(tuple(entries))


# ---------------------------------------------------------------------------
# annotation sampling


def shift_probability(p: float, beta: float, direction: str) -> float:
    """Shift an agreement proportion by ``beta``, clamped to [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p {p} outside [0, 1]")
    if not 0.0 <= beta <= 0.5:
        raise ValueError(f"beta {beta} outside [0, 0.5]")
    if direction == MINUS:
        return max(p - beta, 0.0)
    if direction == PLUS:
        return min(p + beta, 1.0)
    raise ValueError(f"unknown direction {direction!r}")


def _stratum_labels(
    seed: int,
    task: str,
    stratum: str,
    item_index: int,
    p_shifted: float,
    count: int,
    offset: int = 0,
) -> list[int]:
    """Bernoulli labels for slots [offset, offset + count) of one item/stratum.

    Slots index positions in the per-(seed, task, stratum, item) stream,
    so slot values never depend on which other slots are consumed.
    """
    gen = stream(seed, f"{task}:annot:{stratum}", item_index)
    u = gen.random(offset + count)
    return [int(v < p_shifted) for v in u[offset:]]


def sample_pool(
    gold: GoldTable,
    comp: PoolComposition,
    bias: BiasSpec,
    seed: int,
    task: str = "OL",
    recipe: str = "custom",
) -> Dataset:
    """Draw a full annotation pool: per item, ``comp.counts[s]`` labels per stratum.

    Labels are independent Bernoulli draws at the stratum-shifted
    proportion. Deterministic given (gold order, comp, bias, seed, task).
    """
    if not gold.entries:
        raise ValueError("gold table is empty")
    missing = sorted(set(comp.counts) - set(bias.direction_by_stratum))
    if missing:
        raise ValueError(f"no bias direction for strata: {', '.join(missing)}")
    records: list[Annotation] = []
    for idx, entry in enumerate(gold.entries):
        for s in sorted(comp.counts):
            p = shift_probability(entry.p_gold, bias.beta, bias.direction_by_stratum[s])
            labels = _stratum_labels(seed, task, s, idx, p, comp.counts[s])
            for slot, y in enumerate(labels):
                records.append(
                    Annotation(f"{entry.item_id}:{s}{slot}", entry.item_id, s, y)
                )
    return Dataset(tuple(records), DatasetMeta(task, recipe, bias.beta, seed))


def build_suite(gold: GoldTable, beta: float, seed: int, task: str = "OL") -> Suite:
    """Build the representative, nonrep1 and nonrep2 datasets for one cell.

    nonrep1 drops 3 uniformly-chosen B annotations per item from the
    representative pool, keeping the surviving annotation ids unchanged;
    nonrep2 adds 3 fresh A draws per item on top of nonrep1.
    """
    bias = BiasSpec.two_type(beta)
    rep = sample_pool(
        gold,
        PoolComposition(REPRESENTATIVE_COUNTS),
        bias,
        seed,
        task=task,
        recipe=RECIPE_REPRESENTATIVE,
    )

    by_item = rep.records_by_item()
    n1_records: list[Annotation] = []
    n2_records: list[Annotation] = []
    for idx, entry in enumerate(gold.entries):
        recs = by_item[entry.item_id]
        a_recs = [r for r in recs if r.stratum_id == TYPE_A]
        b_recs = [r for r in recs if r.stratum_id == TYPE_B]
        gen = stream(seed, f"{task}:nonrep1-delete", idx)
        dropped = set(gen.choice(len(b_recs), size=NONREP1_B_DELETIONS, replace=False))
        b_kept = [r for j, r in enumerate(b_recs) if j not in dropped]

        p_a = shift_probability(entry.p_gold, beta, MINUS)
        extra_labels = _stratum_labels(
            seed,
            task,
            TYPE_A,
            idx,
            p_a,
            NONREP2_EXTRA_A,
            offset=REPRESENTATIVE_COUNTS[TYPE_A],
        )
        extra = [
            Annotation(
                f"{entry.item_id}:{TYPE_A}{REPRESENTATIVE_COUNTS[TYPE_A] + slot}",
                entry.item_id,
                TYPE_A,
                y,
            )
            for slot, y in enumerate(extra_labels)
        ]

        n1_records.extend(a_recs)
        n1_records.extend(b_kept)
        n2_records.extend(a_recs)
        n2_records.extend(extra)
        n2_records.extend(b_kept)

    return Suite(
        representative=rep,
        nonrep1=Dataset(tuple(n1_records), DatasetMeta(task, RECIPE_NONREP1, beta, seed)),
        nonrep2=Dataset(tuple(n2_records), DatasetMeta(task, RECIPE_NONREP2, beta, seed)),
    )


# ---------------------------------------------------------------------------
# file formats (line-delimited JSON)


def write_gold(gold: GoldTable, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in gold.entries:
            fh.write(
                json.dumps(
                    {
                        "item_id": e.item_id,
                        "text": list(e.text),
                        "p_gold": e.p_gold,
                        "k_reference": e.k_reference,
                    }
                )
                + "\n"
            )


def read_gold(path: Union[str, Path]) -> GoldTable:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            entries.append(
                GoldEntry(
                    d["item_id"], tuple(d["text"]), float(d["p_gold"]), int(d["k_reference"])
                )
            )
    return GoldTable(tuple(entries))


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    """One metadata header line, then one line per annotation record."""
    m = dataset.meta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"task": m.task, "recipe": m.recipe, "beta": m.beta, "seed": m.seed})
            + "\n"
        )
        for r in dataset.records:
            fh.write(
                json.dumps(
                    {
                        "annotation_id": r.annotation_id,
                        "item_id": r.item_id,
                        "stratum_id": r.stratum_id,
                        "label": r.label,
                        "source": r.source,
                        "replica_of": r.replica_of,
                    }
                )
                + "\n"
            )


def read_dataset(path: Union[str, Path]) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    m = json.loads(lines[0])
    meta = DatasetMeta(m["task"], m["recipe"], float(m["beta"]), int(m["seed"]))
    records = []
    for line in lines[1:]:
        d = json.loads(line)
        records.append(
            Annotation(
                d["annotation_id"],
                d["item_id"],
                d["stratum_id"],
                int(d["label"]),
                d.get("source", "original"),
                d.get("replica_of"),
            )
        )
    dataset = Dataset(tuple(records), meta)
    dataset.validate()
    return dataset
