"""Synthetic full-scale study: 10 videos x 4 AD sources, 3 experts, 12 respondents.

Ratings are generated so that each respondent's agreement with the expert
consensus follows a partial credit model, which gives the pipeline something
meaningful to recover. All draws come from :func:`adqc.rng.substream`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .design import make_label_mappings, write_label_mappings
from .model import DIMENSION_KEYS, SOURCE_ORDER, RatingRecord, write_ratings
from .pcm import log_category_probabilities
from .rng import substream
from .scoring import consensus

DEMO_SEED = 42

VIDEOS = [
    ("v01", "Star Wars: The Rise of Skywalker - Teaser", "entertainment", 124),
    ("v02", "Lady Bird | Official Trailer HD | A24", "entertainment", 154),
    ("v03", "Frozen Teaser (2013) - Disney", "entertainment", 90),
    ("v04", "Elf Clip - Buddy Realizes He's Human", "entertainment", 97),
    ("v05", "3 Ways to Make Homemade Pickles", "howto_style", 143),
    ("v06", "How to Make an Origami Dog Face", "howto_style", 167),
    ("v07", "Quick and Easy 5-Minute Makeup Tutorial", "howto_style", 301),
    ("v08", "Non-Newtonian Fluids: Crash Course Kids", "education", 260),
    ("v09", "Bald Eagle | Animals for Kids | All Things Animal TV", "education", 191),
    ("v10", "Jane Goodall", "education", 163),
]

EXPERTS = ["Expert1", "Expert2", "Expert3"]
HUMANS = ["Human1", "Human2", "Human3", "Human4"]
VLMS = [
    ("Qwen (Json ver. 1)", "qwen2.5-vl", "json+30s-chunks", 1),
    ("Gemini (Json ver. 1)", "gemini-1.5-pro", "json+full-video", 1),
    ("GPT (Json ver. 1)", "gpt-4o", "json+30s-chunk-frames", 1),
    ("Gemini (Full Video ver. 1)", "gemini-1.5-pro", "screen-recording", 1),
    ("Qwen (Json ver. 2)", "qwen2.5-vl", "json+30s-chunks", 2),
    ("Gemini (Json ver. 2)", "gemini-1.5-pro", "json+full-video", 2),
    ("GPT (Json ver. 2)", "gpt-4o", "json+30s-chunk-frames", 2),
    ("Gemini (Full Video ver. 2)", "gemini-1.5-pro", "screen-recording", 2),
]

_PHRASES = [
    "A figure walks into frame",
    "Close-up of hands folding paper",
    "Text on screen reads the title",
    "The camera pans across a snowy field",
    "She smiles and looks toward the window",
    "A jar is filled with sliced cucumbers",
    "An eagle spreads its wings above the river",
    "A bowl of cornstarch mixture ripples",
]


def _rating_for_credit(rng, gt: int, credit: int) -> int:
    if credit == 2:
        return gt
    if credit == 1:
        options = [v for v in (gt - 1, gt + 1) if 1 <= v <= 5]
    else:
        options = [v for v in range(1, 6) if abs(v - gt) >= 2]
    return int(options[rng.integers(len(options))])


def generate(out_dir, seed: int = DEMO_SEED) -> dict:
    """Write the demo study files into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    (out / "ad").mkdir(parents=True, exist_ok=True)
    sources = list(SOURCE_ORDER)
    videos = [
        {"id": vid, "title": title, "category": cat, "duration": float(dur), "sources": sources}
        for vid, title, cat, dur in VIDEOS
    ]
    (out / "videos.json").write_text(json.dumps(videos, indent=2) + "\n", encoding="utf-8")
    respondents = [{"id": e, "kind": "expert"} for e in EXPERTS]
    respondents += [{"id": h, "kind": "human"} for h in HUMANS]
    respondents += [
        {"id": rid, "kind": "vlm", "model": model, "input_format": fmt, "prompt_version": ver}
        for rid, model, fmt, ver in VLMS
    ]
    (out / "respondents.json").write_text(json.dumps(respondents, indent=2) + "\n", encoding="utf-8")

    mappings = make_label_mappings([v["id"] for v in videos], {v["id"]: sources for v in videos}, seed)
    write_label_mappings(mappings, out / "label_mappings.csv")
    label_of = {(m.video_id, src): lab for m in mappings for lab, src in m.mapping.items()}

    # AD segment files, named by blinded label only.
    for v in videos:
        for src in sources:
            rng = substream(seed, "segments", v["id"], src)
            n = int(rng.integers(4, 9))
            starts = np.sort(rng.uniform(0, v["duration"] - 4, n))
            segs = []
            for s in starts:
                length = float(rng.uniform(1.5, 6.0))
                segs.append(
                    {
                        "text": _PHRASES[int(rng.integers(len(_PHRASES)))] + ".",
                        "start": round(float(s), 2),
                        "end": round(min(float(s) + length, v["duration"]), 2),
                        "track": "extended" if rng.random() < 0.2 else "inline",
                        "desc_type": "text_on_screen" if rng.random() < 0.15 else "visual",
                    }
                )
            path = out / "ad" / f"{v['id']}_{label_of[(v['id'], src)]}.json"
            path.write_text(json.dumps(segs, indent=2) + "\n", encoding="utf-8")

    # Expert panel: true quality plus small disagreement.
    expert_records, truth = [], {}
    for v in videos:
        for src in sources:
            for dim in DIMENSION_KEYS:
                rng = substream(seed, "quality", v["id"], src, dim)
                q = int(np.clip(np.round(rng.normal(3.4, 1.0)), 1, 5))
                panel = []
                for e in EXPERTS:
                    noise = int(rng.choice([-1, 0, 0, 0, 0, 1]))
                    panel.append(int(np.clip(q + noise, 1, 5)))
                truth[(v["id"], src, dim)] = consensus(panel)[0]
                for e, r in zip(EXPERTS, panel):
                    expert_records.append(RatingRecord(e, v["id"], label_of[(v["id"], src)], dim, r))
    expert_records.sort(key=lambda r: (r.respondent_id, r.video_id, r.version_label, DIMENSION_KEYS.index(r.dimension)))
    write_ratings(expert_records, out / "experts.csv")

    # Respondents: partial-credit agreement with the consensus.
    people = HUMANS + [rid for rid, *_ in VLMS]
    base = {rid: (-0.6 if rid in HUMANS else 0.4) for rid in people}
    base["Human4"] = -1.6
    records = []
    for dim in DIMENSION_KEYS:
        drng = substream(seed, "difficulty", dim)
        spread = float(drng.uniform(0.5, 1.3))
        for rid in people:
            prng = substream(seed, "ability", rid, dim)
            theta = base[rid] + spread * float(prng.normal(0.0, 0.6))
            for v in videos:
                for src in sources:
                    irng = substream(seed, "item", v["id"], src, dim)
                    b = float(irng.normal(-0.4, spread))
                    deltas = np.array([b - 0.7, b + 0.7])
                    rng = substream(seed, "response", rid, v["id"], src, dim)
                    p = np.exp(log_category_probabilities(theta, deltas))
                    credit = int(rng.choice(3, p=p))
                    gt = truth[(v["id"], src, dim)]
                    rating = _rating_for_credit(rng, gt, credit)
                    records.append(RatingRecord(rid, v["id"], label_of[(v["id"], src)], dim, rating))
    records.sort(key=lambda r: (people.index(r.respondent_id), r.video_id, r.version_label, DIMENSION_KEYS.index(r.dimension)))
    write_ratings(records, out / "ratings.csv")

    config = f"""# Demo study run configuration. Paths are relative to this file.
[paths]
videos = "videos.json"
respondents = "respondents.json"
mappings = "label_mappings.csv"
expert_ratings = "experts.csv"
ratings = "ratings.csv"
ad_dir = "ad"
out = "out"

[run]
seed = {seed}
mode = "deterministic"

[fit]
n_nodes = 61
span = 5.0
tolerance = 1e-4
max_iter = 1000
collapse_null_categories = true

[diagnostics]
pv_draws = 10

[map]
bin_width = 0.25
text_width = 100

[vlm]
chunk_seconds = 30.0
"""
    (out / "config.toml").write_text(config, encoding="utf-8")
    return {"config": out / "config.toml"}
