"""Blinded, randomized assignment sheets for a rating study.

Each video's AD versions are relabeled with neutral letters. The label mapping
is drawn once per video and shared by every respondent. Each respondent then
gets an independent video order and, within each video, an independent order
of the labels.
"""

from __future__ import annotations

import csv
import io
import string
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ValidationError
from .model import source_rank
from .rng import substream


def label_alphabet(n: int) -> list:
    """``A, B, C, ...``; past ``Z`` continues ``AA, AB, ...``."""
    letters = string.ascii_uppercase
    out = []
    for i in range(n):
        name = ""
        i += 1
        while i:
            i, r = divmod(i - 1, 26)
            name = letters[r] + name
        out.append(name)
    return out


@dataclass(frozen=True)
class LabelMapping:
    video_id: str
    mapping: Mapping[str, str]  # label -> source

    @property
    def labels(self) -> list:
        return sorted(self.mapping, key=lambda s: (len(s), s))

    def source_of(self, label: str) -> str:
        try:
            return self.mapping[label]
        except KeyError:
            raise ValidationError(f"video {self.video_id}: unknown label {label!r}") from None

    def label_of(self, source: str) -> str:
        for label, src in self.mapping.items():
            if src == source:
                return label
        raise ValidationError(f"video {self.video_id}: no label for source {source!r}")


@dataclass(frozen=True)
class AssignmentSheet:
    respondent_id: str
    video_order: tuple
    per_video_version_order: Mapping[str, tuple]

    @property
    def tasks(self) -> list:
        """Flattened ``(video_id, label)`` pairs in presentation order."""
        return [(v, lab) for v in self.video_order for lab in self.per_video_version_order[v]]


def make_label_mappings(videos: Sequence[str], versions_per_video: Mapping[str, Sequence[str]], seed: int) -> list:
    """Draw one uniform label-to-source bijection per video."""
    mappings = []
    for video_id in videos:
        sources = sorted(set(versions_per_video.get(video_id, ())), key=source_rank)
        if len(sources) < 2:
            raise ValidationError(f"video {video_id}: needs at least 2 versions, has {len(sources)}")
        rng = substream(seed, "label_mapping", video_id)
        perm = rng.permutation(len(sources))
        labels = label_alphabet(len(sources))
        mappings.append(LabelMapping(video_id, {labels[i]: sources[int(p)] for i, p in enumerate(perm)}))
    return mappings


def make_sheets(respondents: Sequence[str], videos: Sequence[str], mappings: Sequence[LabelMapping], seed: int) -> list:
    if not respondents:
        raise ValidationError("respondent list is empty")
    by_video = {m.video_id: m for m in mappings}
    missing = [v for v in videos if v not in by_video]
    if missing:
        raise ValidationError(f"no label mapping for videos: {', '.join(missing)}")
    sheets = []
    for rid in respondents:
        order_rng = substream(seed, "video_order", rid)
        video_order = tuple(videos[int(i)] for i in order_rng.permutation(len(videos)))
        per_video = {}
        for v in video_order:
            labels = by_video[v].labels
            rng = substream(seed, "label_order", rid, v)
            per_video[v] = tuple(labels[int(i)] for i in rng.permutation(len(labels)))
        sheets.append(AssignmentSheet(rid, video_order, per_video))
    return sheets


def render_sheet(sheet: AssignmentSheet, format: str = "markdown", titles: Mapping[str, str] = None) -> str:
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["task_index", "video_id", "label", "done"])
        for i, (v, lab) in enumerate(sheet.tasks, start=1):
            writer.writerow([i, v, lab, ""])
        return buf.getvalue()
    if format != "markdown":
        raise ValueError(f"unknown sheet format {format!r}")
    titles = titles or {}
    lines = [
        f"# Rating sheet: {sheet.respondent_id}",
        "",
        "Rate each description on all seven dimensions (1-5), in the order below.",
        "Tick a box once its form is submitted.",
        "",
    ]
    n = 0
    for v in sheet.video_order:
        title = titles.get(v)
        lines.append(f"## {v}" + (f": {title}" if title else ""))
        lines.append("")
        for lab in sheet.per_video_version_order[v]:
            n += 1
            lines.append(f"- [ ] {n}. video {v}, description {lab}")
        lines.append("")
    return "\n".join(lines)


def write_label_mappings(mappings: Sequence[LabelMapping], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "label", "source"])
        for m in mappings:
            for label in m.labels:
                w.writerow([m.video_id, label, m.mapping[label]])


def load_label_mappings(path) -> list:
    """Read ``video_id,label,source`` rows; each video must map labels one-to-one."""
    by_video = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["video_id", "label", "source"]:
            raise ValidationError(f"{path}: header must be video_id,label,source")
        for i, row in enumerate(reader, start=1):
            labels = by_video.setdefault(row["video_id"], {})
            if row["label"] in labels:
                raise ValidationError(f"{path} row {i}: label {row['label']} repeated for {row['video_id']}")
            labels[row["label"]] = row["source"]
    out = []
    for video_id, mapping in by_video.items():
        if len(set(mapping.values())) != len(mapping):
            raise ValidationError(f"{path}: video {video_id} maps two labels to one source")
        out.append(LabelMapping(video_id, mapping))
    return out
