"""Prompt assembly and response parsing for model respondents.

Nothing here talks to a model. A transport is any callable that takes a
:class:`PromptPackage` and returns the model's raw text; the bundled
:class:`CannedTransport` reads stored replies from disk.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .errors import ValidationError
from .model import DIMENSION_KEYS, LEVELS, AdVersion, RatingRecord

ROLE_PROMPTS = {
    1: "You are an expert Accessibility Consultant specializing in the quality assurance of "
    "audio description (AD) for video content.",
    2: "You are a STRICT Accessibility Consultant specializing in AD quality assurance. You must "
    "apply the HIGHEST professional standards with ZERO tolerance for errors or non-compliance. "
    "A final score of 5 is allowed ONLY if EVERY audio clip clearly supports perfection.",
}

# Response-key stem for each dimension.
RESPONSE_KEYS = {
    "accurate": "accurate",
    "prioritized": "prioritized",
    "appropriate": "appropriate",
    "consistent": "consistent",
    "equal": "equal",
    "strategy": "strategic_method_selection",
    "timing": "timing_and_placement",
}

CHUNK_SECONDS = 30.0


def load_template(path=None) -> str:
    if path is None:
        return resources.files("adqc.data").joinpath("prompt_template.txt").read_text(encoding="utf-8")
    return Path(path).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptPackage:
    system_prompt: str
    user_prompt: str
    chunk: Optional[tuple] = None  # (index, start, end)
    empty: bool = False

    def content_hash(self) -> str:
        payload = json.dumps(
            {"system": self.system_prompt, "user": self.user_prompt, "chunk": self.chunk},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def segments_json(segments) -> str:
    return json.dumps([s.to_json() for s in segments], indent=2, ensure_ascii=False)


def overlaps(seg, start: float, end: float) -> bool:
    """Segment ``[s, e]`` overlaps window ``[start, end)``; instants count if inside."""
    if seg.start == seg.end:
        return start <= seg.start < end
    return seg.start < end and seg.end > start


def build_prompt(framework, ad_version: AdVersion, role_version: int = 1, chunk: Optional[tuple] = None,
                 template: Optional[str] = None) -> PromptPackage:
    """Fill the evaluation template with the (chunk-filtered) segment JSON.

    ``chunk`` is ``(index, start, end)`` in seconds. The template is used
    verbatim; only ``{json_data}`` is substituted (and ``{{``/``}}`` unescaped).
    """
    if role_version not in ROLE_PROMPTS:
        raise ValidationError(f"role_version must be 1 or 2, got {role_version}")
    segments = ad_version.segments
    if chunk is not None:
        _, start, end = chunk
        if not start < end:
            raise ValidationError(f"chunk start {start} must be before end {end}")
        segments = [s for s in segments if overlaps(s, start, end)]
    template = load_template() if template is None else template
    user = template.format(json_data=segments_json(segments))
    return PromptPackage(ROLE_PROMPTS[role_version], user, tuple(chunk) if chunk else None, not segments)


def chunk_windows(duration: float, width: float = CHUNK_SECONDS) -> list:
    """Half-open windows ``[0, w), [w, 2w), ...``, the last one ending at ``duration``."""
    if not duration > 0:
        raise ValidationError("duration must be positive")
    if not width > 0:
        raise ValidationError("chunk width must be positive")
    n = math.ceil(duration / width - 1e-12)
    return [(k * width, min((k + 1) * width, duration)) for k in range(n)]


# -- responses -----------------------------------------------------------------


@dataclass(frozen=True)
class VlmResponse:
    ratings: Mapping[str, int]
    justifications: Mapping[str, str]
    raw: str = field(default="", compare=False)


_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n(.*?)\n?\s*```\s*$", re.S)


def parse_response(payload: str) -> VlmResponse:
    text = payload.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"response is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError("response must be a flat JSON object")
    ratings, notes = {}, {}
    for dim in DIMENSION_KEYS:
        stem = RESPONSE_KEYS[dim]
        for suffix in ("rating", "justification"):
            if f"{stem}_{suffix}" not in obj:
                raise ValidationError(f"response missing key {stem}_{suffix}")
        raw = obj[f"{stem}_rating"]
        try:
            value = int(str(raw).strip())
        except ValueError:
            raise ValidationError(f"{stem}_rating: {raw!r} is not an integer") from None
        if value not in LEVELS:
            raise ValidationError(f"{stem}_rating: {value} outside 1..5")
        ratings[dim] = value
        notes[dim] = str(obj[f"{stem}_justification"])
    return VlmResponse(ratings, notes, payload)


def serialize_response(response: VlmResponse) -> str:
    obj = {}
    for dim in DIMENSION_KEYS:
        stem = RESPONSE_KEYS[dim]
        obj[f"{stem}_rating"] = str(response.ratings[dim])
        obj[f"{stem}_justification"] = response.justifications[dim]
    return json.dumps(obj, indent=2, ensure_ascii=False)


def average_chunks(chunk_ratings: Sequence[int]) -> tuple:
    """``(video_level, mean)``: the mean rounded half-up and clamped to 1..5."""
    if not chunk_ratings:
        raise ValidationError("no chunk ratings to average")
    mean = Fraction(sum(int(r) for r in chunk_ratings), len(chunk_ratings))
    level = math.floor(mean + Fraction(1, 2))
    return min(max(level, 1), 5), float(mean)


def combine_chunk_responses(responses: Sequence[VlmResponse]) -> tuple:
    """Per-dimension chunk averaging; returns ``(ratings, unrounded means)``."""
    ratings, means = {}, {}
    for dim in DIMENSION_KEYS:
        ratings[dim], means[dim] = average_chunks([r.ratings[dim] for r in responses])
    return ratings, means


def respondent_id(model: str, input_format: str, prompt_version: int) -> str:
    return f"{model}|{input_format}|v{prompt_version}"


def to_records(rid: str, video_id: str, version_label: str, ratings: Mapping[str, int],
               justifications: Optional[Mapping[str, str]] = None) -> list:
    justifications = justifications or {}
    return [
        RatingRecord(rid, video_id, version_label, dim, int(ratings[dim]), justifications.get(dim) or None)
        for dim in DIMENSION_KEYS
    ]


# -- transport -----------------------------------------------------------------

Transport = Callable[[PromptPackage], str]


class CannedTransport:
    """Serves stored replies from ``<directory>/<content hash>.json``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, package: PromptPackage) -> Path:
        return self.directory / f"{package.content_hash()}.json"

    def __call__(self, package: PromptPackage) -> str:
        path = self.path_for(package)
        if not path.exists():
            raise FileNotFoundError(f"no canned response {path.name}")
        return path.read_text(encoding="utf-8")

    def store(self, package: PromptPackage, payload: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.path_for(package)
        path.write_text(payload, encoding="utf-8")
        return path


def rate_version(transport: Transport, framework, ad_version: AdVersion, role_version: int,
                 duration: Optional[float] = None, width: float = CHUNK_SECONDS) -> tuple:
    """Rate one AD version, chunked when ``duration`` is given.

    Returns ``(ratings, means, justifications)``; ``means`` holds the unrounded
    chunk averages (equal to the ratings for a single full-video call).
    """
    if duration is None:
        resp = parse_response(transport(build_prompt(framework, ad_version, role_version)))
        return dict(resp.ratings), {k: float(v) for k, v in resp.ratings.items()}, dict(resp.justifications)
    responses = []
    for k, (a, b) in enumerate(chunk_windows(duration, width)):
        responses.append(parse_response(transport(build_prompt(framework, ad_version, role_version, (k, a, b)))))
    ratings, means = combine_chunk_responses(responses)
    notes = {d: " | ".join(r.justifications[d] for r in responses) for d in DIMENSION_KEYS}
    return ratings, means, notes
