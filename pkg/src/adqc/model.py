"""Study entities, the assessment framework, and file ingestion.

Every type here is an immutable value object. Loaders are pure functions of
file content and raise :class:`~adqc.errors.ValidationError` naming the
offending key, row or segment.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import ValidationError

DIMENSION_KEYS = (
    "accurate",
    "prioritized",
    "appropriate",
    "consistent",
    "equal",
    "strategy",
    "timing",
)
# Column headings used in report tables.
DIMENSION_TITLES = {
    "accurate": "Accurate",
    "prioritized": "Prioritized",
    "appropriate": "Appropriate",
    "consistent": "Consistent",
    "equal": "Equal",
    "strategy": "Strategy",
    "timing": "Timing",
}
LEVELS = (1, 2, 3, 4, 5)

# Fixed display order of AD sources; anything else sorts after, alphabetically.
SOURCE_ORDER = ("human", "qwen", "gemini", "gpt")

VIDEO_CATEGORIES = ("entertainment", "howto_style", "education", "other")
TRACKS = ("inline", "extended")
DESC_TYPES = ("visual", "text_on_screen")
RESPONDENT_KINDS = ("expert", "human", "vlm")

RATINGS_HEADER = ("respondent_id", "video_id", "version_label", "dimension", "rating", "comment")


def source_rank(source: str) -> tuple:
    if source in SOURCE_ORDER:
        return (0, SOURCE_ORDER.index(source), "")
    return (1, 0, source)


@dataclass(frozen=True)
class Dimension:
    key: str
    name: str
    definition: str
    level_descriptions: Mapping[int, str]
    category: str = "content"
    notes: tuple = ()


@dataclass(frozen=True)
class AssessmentFramework:
    dimensions: tuple
    version: str

    @property
    def keys(self) -> tuple:
        return tuple(d.key for d in self.dimensions)

    def __getitem__(self, key: str) -> Dimension:
        for d in self.dimensions:
            if d.key == key:
                return d
        raise KeyError(key)


@dataclass(frozen=True)
class Video:
    id: str
    title: str
    category: str
    duration: float

    def __post_init__(self):
        if self.category not in VIDEO_CATEGORIES:
            raise ValidationError(f"video {self.id}: unknown category {self.category!r}")
        if not self.duration > 0:
            raise ValidationError(f"video {self.id}: duration must be positive")


@dataclass(frozen=True)
class AdSegment:
    text: str
    start: float
    end: float
    track: str = "inline"
    desc_type: str = "visual"

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "start": self.start,
            "end": self.end,
            "track": self.track,
            "desc_type": self.desc_type,
        }


@dataclass(frozen=True)
class AdVersion:
    video_id: str
    source: str
    segments: tuple = ()

    def __post_init__(self):
        starts = [s.start for s in self.segments]
        if starts != sorted(starts):
            raise ValidationError(f"{self.video_id}/{self.source}: segments not sorted by start")


@dataclass(frozen=True)
class Respondent:
    id: str
    kind: str
    model: Optional[str] = None
    input_format: Optional[str] = None
    prompt_version: Optional[int] = None

    def __post_init__(self):
        if self.kind not in RESPONDENT_KINDS:
            raise ValidationError(f"respondent {self.id}: unknown kind {self.kind!r}")
        if self.kind == "vlm":
            if not self.model or not self.input_format or self.prompt_version is None:
                raise ValidationError(
                    f"respondent {self.id}: vlm respondents need model, input_format and prompt_version"
                )
            if self.prompt_version not in (1, 2):
                raise ValidationError(f"respondent {self.id}: prompt_version must be 1 or 2")


@dataclass(frozen=True)
class RatingRecord:
    respondent_id: str
    video_id: str
    version_label: str
    dimension: str
    rating: int
    comment: Optional[str] = None

    @property
    def key(self) -> tuple:
        return (self.respondent_id, self.video_id, self.version_label, self.dimension)


@dataclass(frozen=True)
class Item:
    """One (AD version, dimension) pair; the unit the model estimates."""

    video_id: str
    source: str
    dimension: str

    @property
    def sort_key(self) -> tuple:
        return (self.video_id, source_rank(self.source), self.source, self.dimension)

    def __lt__(self, other: "Item") -> bool:
        return self.sort_key < other.sort_key

    @property
    def ad(self) -> tuple:
        return (self.video_id, self.source)

    @property
    def label(self) -> str:
        return f"{self.video_id}:{self.source}"

    def __str__(self) -> str:
        return f"{self.video_id}:{self.source}:{self.dimension}"


# -- framework ---------------------------------------------------------------


def _framework_from_obj(obj) -> AssessmentFramework:
    if not isinstance(obj, dict) or "dimensions" not in obj:
        raise ValidationError("framework: expected an object with 'version' and 'dimensions'")
    dims = []
    seen = set()
    for raw in obj["dimensions"]:
        key = raw.get("key")
        if key not in DIMENSION_KEYS:
            raise ValidationError(f"framework: unknown dimension key {key!r}")
        if key in seen:
            raise ValidationError(f"framework: duplicate dimension key {key!r}")
        seen.add(key)
        levels = {}
        for k, text in (raw.get("level_descriptions") or {}).items():
            try:
                level = int(k)
            except ValueError:
                raise ValidationError(f"{key}: level {k!r} is not an integer") from None
            if level not in LEVELS:
                raise ValidationError(f"{key}: level {level} outside 1..5")
            levels[level] = str(text)
        for level in LEVELS:
            if level not in levels:
                raise ValidationError(f"{key}: missing level {level}")
        dims.append(
            Dimension(
                key=key,
                name=str(raw.get("name", key)),
                definition=str(raw.get("definition", "")),
                level_descriptions={k: levels[k] for k in LEVELS},
                category=str(raw.get("category", "content")),
                notes=tuple(raw.get("notes", ())),
            )
        )
    for key in DIMENSION_KEYS:
        if key not in seen:
            raise ValidationError(f"framework: missing dimension {key!r}")
    order = {k: i for i, k in enumerate(DIMENSION_KEYS)}
    dims.sort(key=lambda d: order[d.key])
    return AssessmentFramework(dimensions=tuple(dims), version=str(obj.get("version", "")))


def load_framework(path=None) -> AssessmentFramework:
    """Load an assessment framework; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("adqc.data").joinpath("framework.json").read_text(encoding="utf-8")
        source = "<bundled framework>"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}: cannot parse framework JSON: {exc}") from None
    return _framework_from_obj(obj)


# -- ratings -----------------------------------------------------------------


def parse_ratings(rows: Iterable[Mapping[str, str]], dimensions=DIMENSION_KEYS) -> list:
    records = []
    first_row = {}
    for index, row in enumerate(rows, start=1):
        try:
            rating = int(str(row["rating"]).strip())
        except ValueError:
            raise ValidationError(f"row {index}: rating {row['rating']!r} is not an integer") from None
        if rating not in LEVELS:
            raise ValidationError(f"row {index}: rating {rating} outside 1..5")
        dim = row["dimension"].strip()
        if dim not in dimensions:
            raise ValidationError(f"row {index}: unknown dimension {dim!r}")
        comment = row.get("comment")
        rec = RatingRecord(
            respondent_id=row["respondent_id"].strip(),
            video_id=row["video_id"].strip(),
            version_label=row["version_label"].strip(),
            dimension=dim,
            rating=rating,
            comment=comment if comment else None,
        )
        if rec.key in first_row:
            raise ValidationError(
                f"duplicate rating {rec.key} at rows {first_row[rec.key]} and {index}"
            )
        first_row[rec.key] = index
        records.append(rec)
    return records


def load_ratings(path) -> list:
    """Read a ratings CSV into :class:`RatingRecord` objects, preserving row order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RATINGS_HEADER:
            raise ValidationError(
                f"{path}: expected header {','.join(RATINGS_HEADER)}, got {reader.fieldnames}"
            )
        return parse_ratings(reader)


def write_ratings(records: Sequence[RatingRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for r in records:
            writer.writerow(
                [r.respondent_id, r.video_id, r.version_label, r.dimension, r.rating, r.comment or ""]
            )


# -- AD segments, videos, respondents -----------------------------------------


def parse_segments(items) -> tuple:
    if not isinstance(items, list):
        raise ValidationError("AD segment file must hold a JSON array")
    segments = []
    for i, raw in enumerate(items):
        try:
            start = float(raw["start"])
            end = float(raw["end"])
            text = str(raw["text"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"segment {i}: malformed ({exc})") from None
        if start < 0:
            raise ValidationError(f"segment {i}: negative start")
        if end < start:
            raise ValidationError(f"segment {i}: end before start")
        track = raw.get("track", "inline")
        if track not in TRACKS:
            raise ValidationError(f"segment {i}: unknown track {track!r}")
        desc_type = raw.get("desc_type", "visual")
        if desc_type not in DESC_TYPES:
            raise ValidationError(f"segment {i}: unknown desc_type {desc_type!r}")
        segments.append(AdSegment(text, start, end, track, desc_type))
    segments.sort(key=lambda s: s.start)
    return tuple(segments)


def load_ad_version(path, video_id: str = "", source: str = "") -> AdVersion:
    """Load an AD segment JSON file.

    The file carries no provenance; ``video_id`` and ``source`` come from the
    caller so blinded files can be loaded without leaking their origin.
    """
    try:
        items = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: cannot parse JSON: {exc}") from None
    return AdVersion(video_id=video_id, source=source, segments=parse_segments(items))


def load_videos(path) -> list:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        Video(str(v["id"]), str(v.get("title", v["id"])), v.get("category", "other"), float(v["duration"]))
        for v in data
    ]


def load_respondents(path) -> list:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        Respondent(
            id=str(r["id"]),
            kind=r["kind"],
            model=r.get("model"),
            input_format=r.get("input_format"),
            prompt_version=r.get("prompt_version"),
        )
        for r in data
    ]
