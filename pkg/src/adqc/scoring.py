"""Expert consensus, partial-credit recoding, and response matrices."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import LEVELS, Item, RatingRecord

MISSING = -1


def consensus(ratings: Sequence[int]) -> tuple:
    """Collapse one panel's ratings of an item into ``(rating, rule)``.

    A value given by at least two raters that is the unique mode wins
    (``"majority"``); otherwise the median is taken (``"median"``), using the
    lower middle value for even panels so the result stays on the scale.
    """
    ratings = [int(r) for r in ratings]
    if len(ratings) < 2:
        raise ValidationError("consensus needs at least two ratings")
    for r in ratings:
        if r not in LEVELS:
            raise ValidationError(f"rating {r} outside 1..5")
    counts = Counter(ratings)
    top = max(counts.values())
    if top >= 2:
        modes = sorted(v for v, c in counts.items() if c == top)
        if len(modes) == 1:
            return modes[0], "majority"
        raise ValidationError(f"ambiguous consensus: tied modal values {modes}")
    ordered = sorted(ratings)
    return ordered[(len(ordered) - 1) // 2], "median"


def recode(raw: int, gt: int) -> int:
    """Partial credit for one rating: 2 exact, 1 adjacent, 0 two or more apart."""
    if raw not in LEVELS or gt not in LEVELS:
        raise ValidationError(f"recode inputs must be in 1..5, got ({raw}, {gt})")
    d = abs(raw - gt)
    return 2 if d == 0 else 1 if d == 1 else 0


@dataclass(frozen=True)
class GroundTruth:
    entries: Mapping[Item, int]
    provenance: Mapping[Item, str] = field(default_factory=dict)

    def __contains__(self, item: Item) -> bool:
        return item in self.entries

    def __getitem__(self, item: Item) -> int:
        return self.entries[item]


def _resolver(mappings):
    """Map ``(video_id, version_label)`` to an AD source."""
    if mappings is None:
        return lambda video_id, label: label
    by_video = {m.video_id: m for m in mappings}

    def resolve(video_id, label):
        if video_id not in by_video:
            raise ValidationError(f"no label mapping for video {video_id}")
        return by_video[video_id].source_of(label)

    return resolve


def ground_truth_from_records(records: Iterable[RatingRecord], mappings=None) -> GroundTruth:
    """Apply :func:`consensus` to every item rated by the expert panel."""
    resolve = _resolver(mappings)
    panels = {}
    for r in records:
        item = Item(r.video_id, resolve(r.video_id, r.version_label), r.dimension)
        panels.setdefault(item, []).append(r.rating)
    entries, provenance = {}, {}
    for item in sorted(panels):
        try:
            entries[item], provenance[item] = consensus(panels[item])
        except ValidationError as exc:
            raise ValidationError(f"{item}: {exc}") from None
    return GroundTruth(entries, provenance)


def write_ground_truth(gt: GroundTruth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "source", "dimension", "rating", "rule"])
        for item in sorted(gt.entries):
            w.writerow([item.video_id, item.source, item.dimension, gt.entries[item], gt.provenance.get(item, "")])


def load_ground_truth(path) -> GroundTruth:
    entries, provenance = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=1):
            item = Item(row["video_id"], row["source"], row["dimension"])
            rating = int(row["rating"])
            if rating not in LEVELS:
                raise ValidationError(f"ground truth row {i}: rating {rating} outside 1..5")
            entries[item] = rating
            provenance[item] = row.get("rule", "")
    return GroundTruth(entries, provenance)


@dataclass(frozen=True)
class ResponseMatrix:
    """Persons x items grid of partial credits for one dimension.

    ``data`` holds integer credits with :data:`MISSING` (-1) for unobserved
    cells; ``m`` is each item's top category.
    """

    persons: tuple
    items: tuple
    data: np.ndarray
    m: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.int64)
        if data.shape != (len(self.persons), len(self.items)):
            raise ValidationError(
                f"matrix shape {data.shape} does not match {len(self.persons)} persons x {len(self.items)} items"
            )
        m = np.full(len(self.items), 2, dtype=np.int64) if self.m is None else np.asarray(self.m, dtype=np.int64)
        if m.shape != (len(self.items),):
            raise ValidationError("m must give one top category per item")
        bad = (data != MISSING) & ((data < 0) | (data > m[None, :]))
        if bad.any():
            n, i = map(int, np.argwhere(bad)[0])
            raise ValidationError(f"credit {data[n, i]} out of range for item {self.items[i]}")
        data.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "m", m)

    @property
    def observed(self) -> np.ndarray:
        return self.data != MISSING

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item_labels(self) -> list:
        return [getattr(it, "label", str(it)) for it in self.items]

    def subset_items(self, index) -> "ResponseMatrix":
        index = list(index)
        return ResponseMatrix(
            self.persons, tuple(self.items[i] for i in index), self.data[:, index], self.m[index]
        )

    def transpose(self) -> "ResponseMatrix":
        if len(set(self.m.tolist())) > 1:
            raise ValidationError("transpose needs a common top category")
        m = np.full(len(self.persons), int(self.m[0]) if len(self.m) else 2)
        return ResponseMatrix(self.items, self.persons, self.data.T.copy(), m)


def build_matrices(records: Iterable[RatingRecord], ground_truth: GroundTruth, framework,
                   mappings=None, exclude: Optional[Iterable[str]] = None) -> dict:
    """Recode respondent ratings against ground truth, one matrix per dimension.

    Rows are respondents in order of first appearance (minus ``exclude``,
    typically the expert panel); columns are AD items in study order. Pairs a
    respondent did not rate stay missing, never zero.
    """
    resolve = _resolver(mappings)
    exclude = set(exclude or ())
    persons = []
    cells = {}
    for r in records:
        if r.respondent_id in exclude:
            continue
        item = Item(r.video_id, resolve(r.video_id, r.version_label), r.dimension)
        if item not in ground_truth:
            raise ValidationError(f"no ground truth for item {item}")
        if r.respondent_id not in persons:
            persons.append(r.respondent_id)
        cells[(r.respondent_id, item)] = recode(r.rating, ground_truth[item])
    keys = framework.keys if hasattr(framework, "keys") else tuple(framework)
    matrices = {}
    for dim in keys:
        items = sorted({it for it in ground_truth.entries if it.dimension == dim})
        data = np.full((len(persons), len(items)), MISSING, dtype=np.int64)
        col = {it: j for j, it in enumerate(items)}
        row = {p: i for i, p in enumerate(persons)}
        for (p, it), credit in cells.items():
            if it.dimension == dim:
                data[row[p], col[it]] = credit
        matrices[dim] = ResponseMatrix(tuple(persons), tuple(items), data)
    return matrices


def write_matrix(matrix: ResponseMatrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent_id", *matrix.item_labels()])
        for p, row in zip(matrix.persons, matrix.data):
            w.writerow([p, *["" if x == MISSING else int(x) for x in row]])


def load_matrix(path, dimension: str = "") -> ResponseMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty matrix file")
    header, body = rows[0], rows[1:]
    items = []
    for label in header[1:]:
        video_id, _, source = label.partition(":")
        items.append(Item(video_id, source, dimension) if source else label)
    persons = tuple(r[0] for r in body)
    data = np.array(
        [[MISSING if c == "" else int(c) for c in r[1:]] for r in body], dtype=np.int64
    ).reshape(len(body), len(items))
    return ResponseMatrix(persons, tuple(items), data)
