"""Items, datasets, queries, synthetic generation, and balanced curation.

A dataset is an ordered list of items, each carrying a d-dimensional embedding
and a map of categorical group labels (dense integer codes).  Label names are
ordered lexicographically everywhere so that serialized outputs are
reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

PROB_SUM_TOL = 1e-9
FLOAT_FMT = "%.17g"


class DataFormatError(ValueError):
    """Raised when an input file violates the dataset CSV schema."""


@dataclass(frozen=True)
class Item:
    id: str
    embedding: np.ndarray
    labels: dict[str, int]


@dataclass(frozen=True)
class Query:
    id: str
    embedding: np.ndarray


@dataclass(frozen=True)
class DatasetSchema:
    d: int
    label_cards: dict[str, int]

    @property
    def label_names(self) -> list[str]:
        return sorted(self.label_cards)


class Dataset:
    """Ordered, immutable collection of items with a consistent schema."""

    def __init__(self, items: Sequence[Item], schema: DatasetSchema, role: str = "retrieval"):
        if role not in ("retrieval", "curated"):
            raise ValueError(f"unknown role {role!r}")
        if not items:
            raise DataFormatError("empty dataset")
        seen: set[str] = set()
        for idx, item in enumerate(items):
            if item.id in seen:
                raise DataFormatError(f"duplicate id {item.id!r} at row {idx + 1}")
            seen.add(item.id)
            if item.embedding.shape != (schema.d,):
                raise DataFormatError(
                    f"row {idx + 1}: embedding has dimension {item.embedding.size}, expected {schema.d}"
                )
            if set(item.labels) != set(schema.label_cards):
                raise DataFormatError(f"row {idx + 1}: label keys do not match schema")
            for name, code in item.labels.items():
                if not 0 <= code < schema.label_cards[name]:
                    raise DataFormatError(
                        f"row {idx + 1}: label {name}={code} outside cardinality {schema.label_cards[name]}"
                    )
        self.items = tuple(items)
        self.schema = schema
        self.role = role
        self._embeddings = np.array([it.embedding for it in items], dtype=float)
        self._embeddings.setflags(write=False)
        names = schema.label_names
        self._labels = np.array([[it.labels[n] for n in names] for it in items], dtype=int)
        self._labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def embeddings(self) -> np.ndarray:
        """(n, d) float matrix, rows in item order."""
        return self._embeddings

    @property
    def labels(self) -> np.ndarray:
        """(n, num_axes) int matrix; columns follow lexicographic label-name order."""
        return self._labels

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    def subset(self, indices: Sequence[int], role: str | None = None) -> "Dataset":
        """New dataset keeping items at ``indices``, preserving their order."""
        items = [self.items[i] for i in indices]
        return Dataset(items, self.schema, role or self.role)


def _parse_header(header: list[str]) -> tuple[int, list[str]]:
    if not header or header[0] != "id":
        raise DataFormatError("malformed header: first column must be 'id'")
    d = 0
    while 1 + d < len(header) and header[1 + d] == f"e{d}":
        d += 1
    if d == 0:
        raise DataFormatError("malformed header: no embedding columns e0..e{d-1}")
    label_names = []
    for col in header[1 + d:]:
        if not col.startswith("g_") or len(col) <= 2:
            raise DataFormatError(f"malformed header: unexpected column {col!r}")
        label_names.append(col[2:])
    if label_names != sorted(label_names):
        raise DataFormatError("malformed header: label columns must be in sorted order")
    return d, label_names


def load_dataset(path, role: str = "retrieval") -> Dataset:
    """Load a dataset from the CSV format (see :func:`save_dataset`)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty dataset") from None
        d, label_names = _parse_header(header)
        items = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != 1 + d + len(label_names):
                raise DataFormatError(
                    f"row {row_no}: expected {1 + d + len(label_names)} cells, got {len(row)}"
                )
            try:
                emb = np.array([float(v) for v in row[1:1 + d]], dtype=float)
            except ValueError:
                raise DataFormatError(f"row {row_no}: non-numeric embedding cell") from None
            try:
                labels = {n: int(row[1 + d + j]) for j, n in enumerate(label_names)}
            except ValueError:
                raise DataFormatError(f"row {row_no}: non-integer label cell") from None
            items.append(Item(row[0], emb, labels))
    if not items:
        raise DataFormatError("empty dataset")
    cards = {n: max(it.labels[n] for it in items) + 1 for n in label_names}
    return Dataset(items, DatasetSchema(d=d, label_cards=cards), role)


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as CSV with 17-significant-digit floats and LF endings."""
    names = dataset.schema.label_names
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"e{j}" for j in range(dataset.schema.d)] + [f"g_{n}" for n in names])
        for item in dataset.items:
            writer.writerow(
                [item.id]
                + [FLOAT_FMT % v for v in item.embedding]
                + [str(item.labels[n]) for n in names]
            )


def load_query(path) -> Query:
    """Load a query from a one-row CSV ``id,e0,...,e{d-1}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        row = next(reader, None)
        if header is None or row is None:
            raise DataFormatError("query file must have a header and one data row")
        try:
            emb = np.array([float(v) for v in row[1:]], dtype=float)
        except ValueError:
            raise DataFormatError("non-numeric embedding cell in query file") from None
        return Query(row[0], emb)


def save_query(query: Query, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"e{j}" for j in range(query.embedding.size)])
        writer.writerow([query.id] + [FLOAT_FMT % v for v in query.embedding])


@dataclass(frozen=True)
class GroupAxis:
    name: str
    cardinality: int
    retrieval_probs: tuple[float, ...]
    curated_probs: tuple[float, ...]

    def __post_init__(self):
        if self.cardinality < 2:
            raise ValueError(f"axis {self.name!r}: cardinality must be >= 2")
        for probs in (self.retrieval_probs, self.curated_probs):
            if len(probs) != self.cardinality:
                raise ValueError(f"axis {self.name!r}: probability list length mismatch")
            if abs(sum(probs) - 1.0) > PROB_SUM_TOL:
                raise ValueError(f"axis {self.name!r}: probabilities must sum to 1")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a reproducible synthetic retrieval/curation pair.

    ``similarity_bias`` maps an axis name to per-category offsets added along
    the query direction, making query similarity correlate with group labels.
    """

    n: int
    m: int
    d: int
    group_axes: tuple[GroupAxis, ...]
    similarity_bias: dict[str, tuple[float, ...]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.d < 1:
            raise ValueError("n, m, d must be positive")
        axis_names = {ax.name for ax in self.group_axes}
        for name, offsets in self.similarity_bias.items():
            if name not in axis_names:
                raise ValueError(f"similarity_bias names unknown axis {name!r}")
            ax = next(a for a in self.group_axes if a.name == name)
            if len(offsets) != ax.cardinality:
                raise ValueError(f"similarity_bias for {name!r} has wrong length")

    def to_json(self) -> str:
        payload = {
            "n": self.n,
            "m": self.m,
            "d": self.d,
            "group_axes": [
                {
                    "name": ax.name,
                    "cardinality": ax.cardinality,
                    "retrieval_probs": list(ax.retrieval_probs),
                    "curated_probs": list(ax.curated_probs),
                }
                for ax in self.group_axes
            ],
            "similarity_bias": {k: list(v) for k, v in self.similarity_bias.items()},
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        payload = json.loads(text)
        axes = tuple(
            GroupAxis(
                name=ax["name"],
                cardinality=ax["cardinality"],
                retrieval_probs=tuple(ax["retrieval_probs"]),
                curated_probs=tuple(ax["curated_probs"]),
            )
            for ax in payload["group_axes"]
        )
        return cls(
            n=payload["n"],
            m=payload["m"],
            d=payload["d"],
            group_axes=axes,
            similarity_bias={k: tuple(v) for k, v in payload.get("similarity_bias", {}).items()},
            seed=payload.get("seed", 0),
        )


def _query_direction(d: int) -> np.ndarray:
    q = np.zeros(d)
    q[0] = 1.0
    return q


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset, Query]:
    """Generate (retrieval pool, curated pool, query), a pure function of the spec.

    Embeddings are base Gaussians plus a per-item bias along the fixed unit
    query direction, so cosine similarity to the emitted query correlates with
    the similarity bias of the item's categories.
    """
    rng = np.random.default_rng(spec.seed)
    qhat = _query_direction(spec.d)
    cards = {ax.name: ax.cardinality for ax in spec.group_axes}
    schema = DatasetSchema(d=spec.d, label_cards=cards)
    axes = sorted(spec.group_axes, key=lambda ax: ax.name)

    def draw(count: int, which: str, prefix: str, role: str) -> Dataset:
        label_cols = {}
        for ax in axes:
            probs = ax.retrieval_probs if which == "retrieval" else ax.curated_probs
            label_cols[ax.name] = rng.choice(ax.cardinality, size=count, p=np.asarray(probs))
        emb = rng.standard_normal((count, spec.d))
        bias = np.zeros(count)
        for name, offsets in sorted(spec.similarity_bias.items()):
            bias += np.asarray(offsets)[label_cols[name]]
        emb = emb + bias[:, None] * qhat
        items = [
            Item(
                f"{prefix}{i}",
                emb[i],
                {name: int(label_cols[name][i]) for name in label_cols},
            )
            for i in range(count)
        ]
        return Dataset(items, schema, role)

    retrieval = draw(spec.n, "retrieval", "r", "retrieval")
    curated = draw(spec.m, "curated", "c", "curated")
    return retrieval, curated, Query("q0", qhat)


def build_balanced_curation(group_axes: dict[str, int], size: int) -> Dataset:
    """Curation dataset with every intersectional cell equally represented.

    Embeddings are one-hot label encodings, so label statistics and embedding
    statistics coincide.
    """
    names = sorted(group_axes)
    n_cells = math.prod(group_axes[n] for n in names)
    if size % n_cells != 0:
        raise ValueError(f"size {size} not divisible by number of cells {n_cells}")
    per_cell = size // n_cells
    dim = sum(group_axes[n] for n in names)
    offsets = {}
    acc = 0
    for n in names:
        offsets[n] = acc
        acc += group_axes[n]
    items = []
    for cell in product(*(range(group_axes[n]) for n in names)):
        emb = np.zeros(dim)
        for n, code in zip(names, cell):
            emb[offsets[n] + code] = 1.0
        labels = dict(zip(names, cell))
        tag = "-".join(str(c) for c in cell)
        for rep in range(per_cell):
            items.append(Item(f"bal-{tag}-{rep}", emb.copy(), dict(labels)))
    schema = DatasetSchema(d=dim, label_cards=dict(group_axes))
    return Dataset(items, schema, "curated")
