"""Command-line entry point: ``adqc <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 a stage failed.
Every command accepts ``--config`` (TOML); explicit flags win over file values.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .design import load_label_mappings, make_label_mappings, make_sheets, render_sheet, write_label_mappings
from .diagnostics import (
    dimension_report,
    fit_stats_csv,
    item_fit,
    person_fit,
    proficiency_report,
    reliability_report,
)
from .errors import AdqcError, ValidationError
from .model import (
    DIMENSION_KEYS,
    SOURCE_ORDER,
    load_ad_version,
    load_framework,
    load_ratings,
    load_respondents,
    load_videos,
    write_ratings,
)
from .pcm import FitConfig, PersonAbility, eap_abilities, fit_from_json, fit_pcm, thurstonian_thresholds
from .rng import check_seed
from .scoring import build_matrices, ground_truth_from_records, load_ground_truth, load_matrix, write_ground_truth, write_matrix
from .simulate import SimConfig, random_items, recovery_experiment, recovery_json, recovery_markdown, simulate_responses
from .vlm import CHUNK_SECONDS, build_prompt, chunk_windows, combine_chunk_responses, parse_response, to_records
from .wright import MapOptions, build_map, render_svg, render_text

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("adqc")

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3

# section -> key -> accepted type(s)
SCHEMA = {
    "paths": {k: str for k in ("framework", "videos", "respondents", "mappings", "expert_ratings", "ratings", "ad_dir", "out")},
    "run": {"seed": int, "mode": str},
    "fit": {"n_nodes": int, "span": float, "tolerance": float, "max_iter": int, "collapse_null_categories": bool},
    "diagnostics": {"pv_draws": int},
    "map": {"bin_width": float, "text_width": int, "text_maps": bool},
    "vlm": {"chunk_seconds": float},
    "simulate": {"n_persons": int, "n_items": int, "replications": int, "variance": float},
}


class StageError(AdqcError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


@dataclass
class RunConfig:
    paths: dict = field(default_factory=dict)
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    pv_draws: int = 10
    bin_width: float = 0.25
    text_width: int = 100
    text_maps: bool = True
    chunk_seconds: float = CHUNK_SECONDS
    n_persons: int = 500
    n_items: int = 40
    replications: int = 1
    variance: float = 1.0

    def path(self, key: str) -> Path:
        if key not in self.paths:
            raise ValidationError(f"config: paths.{key} is not set")
        return self.paths[key]

    @property
    def out(self) -> Path:
        return self.paths.get("out", Path("out"))


def _check_type(section: str, key: str, value, expected):
    ok = isinstance(value, expected) and not (expected is not bool and isinstance(value, bool))
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        raise ValidationError(f"config: {section}.{key} must be {expected.__name__}, got {value!r}")


def load_config(path: Optional[str]) -> RunConfig:
    """Read and schema-check a TOML run config; relative paths resolve against its folder."""
    cfg = RunConfig()
    if path is None:
        return cfg
    p = Path(path)
    try:
        raw = tomllib.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"config: cannot read {p}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config: {p}: {exc}") from None
    for section, values in raw.items():
        if section not in SCHEMA or not isinstance(values, dict):
            raise ValidationError(f"config: unknown section [{section}]")
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ValidationError(f"config: unknown key {section}.{key}")
            _check_type(section, key, value, SCHEMA[section][key])
    base = p.resolve().parent
    cfg.paths = {k: base / v for k, v in raw.get("paths", {}).items()}
    run = raw.get("run", {})
    if "seed" in run:
        cfg.seed = check_seed(run["seed"])
    fit = raw.get("fit", {})
    cfg.fit = FitConfig(
        n_nodes=fit.get("n_nodes", 61),
        span=float(fit.get("span", 5.0)),
        tolerance=float(fit.get("tolerance", 1e-4)),
        max_iter=fit.get("max_iter", 1000),
        collapse_null_categories=fit.get("collapse_null_categories", False),
        mode=run.get("mode", "deterministic"),
    )
    cfg.pv_draws = raw.get("diagnostics", {}).get("pv_draws", cfg.pv_draws)
    m = raw.get("map", {})
    cfg.bin_width = float(m.get("bin_width", cfg.bin_width))
    cfg.text_width = m.get("text_width", cfg.text_width)
    cfg.text_maps = m.get("text_maps", cfg.text_maps)
    cfg.chunk_seconds = float(raw.get("vlm", {}).get("chunk_seconds", cfg.chunk_seconds))
    sim = raw.get("simulate", {})
    cfg.n_persons = sim.get("n_persons", cfg.n_persons)
    cfg.n_items = sim.get("n_items", cfg.n_items)
    cfg.replications = sim.get("replications", cfg.replications)
    cfg.variance = float(sim.get("variance", cfg.variance))
    return cfg


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.fit.mode not in ("deterministic", "fast"):
        raise ValidationError(f"config: run.mode must be deterministic or fast, got {cfg.fit.mode!r}")
    if cfg.fit.n_nodes < 3 or not cfg.fit.span > 0 or not cfg.fit.tolerance > 0 or cfg.fit.max_iter < 1:
        raise ValidationError("config: fit settings out of range")
    if cfg.pv_draws < 2:
        raise ValidationError("config: diagnostics.pv_draws must be at least 2")
    if not cfg.bin_width > 0 or cfg.text_width < 60:
        raise ValidationError("config: map.bin_width must be positive and map.text_width at least 60")
    if cfg.replications < 1:
        raise ValidationError(f"replications must be at least 1, got {cfg.replications}")
    if cfg.n_persons < 1 or cfg.n_items < 1:
        raise ValidationError("n_persons and n_items must be at least 1")
    return cfg


# -- shared I/O ----------------------------------------------------------------


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _framework(cfg: RunConfig):
    return load_framework(cfg.paths.get("framework"))


def _video_sources(cfg: RunConfig) -> dict:
    raw = json.loads(cfg.path("videos").read_text(encoding="utf-8"))
    return {str(v["id"]): list(v.get("sources", SOURCE_ORDER)) for v in raw}


def _respondents(cfg: RunConfig, kinds) -> list:
    return [r.id for r in load_respondents(cfg.path("respondents")) if r.kind in kinds]


def write_abilities(abilities, path: Path) -> Path:
    rows = ["respondent_id,theta,psd"] + [f"{a.respondent_id},{a.theta:.10f},{a.psd:.10f}" for a in abilities]
    return _write(path, "\n".join(rows) + "\n")


def load_abilities(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [PersonAbility(r["respondent_id"], float(r["theta"]), float(r["psd"])) for r in csv.DictReader(fh)]


# -- stages --------------------------------------------------------------------


def stage_design(cfg: RunConfig) -> list:
    """Label mappings plus one rating sheet (markdown and CSV) per expert and human rater."""
    videos = load_videos(cfg.path("videos"))
    sources = _video_sources(cfg)
    ids = [v.id for v in videos]
    mappings = make_label_mappings(ids, sources, cfg.seed)
    raters = _respondents(cfg, ("expert", "human"))
    sheets = make_sheets(raters, ids, mappings, cfg.seed)
    titles = {v.id: v.title for v in videos}
    out = cfg.out / "design"
    out.mkdir(parents=True, exist_ok=True)
    write_label_mappings(mappings, out / "label_mappings.csv")
    written = [out / "label_mappings.csv"]
    for sheet in sheets:
        written.append(_write(out / "sheets" / f"{sheet.respondent_id}.md", render_sheet(sheet, "markdown", titles)))
        written.append(_write(out / "sheets" / f"{sheet.respondent_id}.csv", render_sheet(sheet, "csv")))
    return written


def stage_consensus(cfg: RunConfig) -> list:
    mappings = load_label_mappings(cfg.path("mappings"))
    gt = ground_truth_from_records(load_ratings(cfg.path("expert_ratings")), mappings)
    path = cfg.out / "ground_truth.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ground_truth(gt, path)
    return [path]


def stage_recode(cfg: RunConfig) -> list:
    mappings = load_label_mappings(cfg.path("mappings"))
    gt = load_ground_truth(cfg.out / "ground_truth.csv")
    experts = _respondents(cfg, ("expert",)) if "respondents" in cfg.paths else []
    matrices = build_matrices(load_ratings(cfg.path("ratings")), gt, _framework(cfg), mappings, exclude=experts)
    out = cfg.out / "matrices"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for dim, matrix in matrices.items():
        write_matrix(matrix, out / f"{dim}.csv")
        written.append(out / f"{dim}.csv")
    return written


def _matrix(cfg: RunConfig, dim: str):
    path = cfg.out / "matrices" / f"{dim}.csv"
    if not path.exists():
        raise ValidationError(f"missing matrix {path}")
    return load_matrix(path, dim)


def _load_fit(cfg: RunConfig, dim: str):
    path = cfg.out / "fits" / f"{dim}.json"
    if not path.exists():
        raise ValidationError(f"missing fit report {path}")
    return fit_from_json(json.loads(path.read_text(encoding="utf-8")), _matrix(cfg, dim))


def stage_fit(cfg: RunConfig, dimensions=DIMENSION_KEYS) -> list:
    written = []
    for dim in dimensions:
        matrix = _matrix(cfg, dim)
        fit = fit_pcm(matrix, cfg.fit)
        if not fit.converged:
            log.warning("%s: no convergence after %d iterations", dim, fit.iterations)
        written.append(_write(cfg.out / "fits" / f"{dim}.json", json.dumps(fit.to_json(), indent=2) + "\n"))
        abilities = eap_abilities(fit, allow_unconverged=True)
        written.append(write_abilities(abilities, cfg.out / "abilities" / f"{dim}.csv"))
    return written


def stage_diagnose(cfg: RunConfig, dimensions=DIMENSION_KEYS) -> list:
    written, reports, abilities_by_dim, summary = [], {}, {}, {}
    for dim in dimensions:
        matrix = _matrix(cfg, dim)
        fit = _load_fit(cfg, dim)
        abilities = load_abilities(cfg.out / "abilities" / f"{dim}.csv")
        abilities_by_dim[dim] = abilities
        written.append(_write(cfg.out / "fitstats" / f"persons_{dim}.csv", fit_stats_csv(person_fit(fit, abilities, matrix))))
        written.append(
            _write(cfg.out / "fitstats" / f"items_{dim}.csv", fit_stats_csv(item_fit(fit, abilities, matrix), "item"))
        )
        rep = reliability_report(dim, fit, abilities, matrix, cfg.pv_draws, cfg.seed)
        reports[dim] = rep
        summary[dim] = {
            "latent_variance": round(rep.latent_variance, 10),
            "eap_reliability": round(rep.eap_reliability, 10),
            "pv_reliability": round(rep.pv_reliability, 10),
            "well_fit_items": rep.well_fit_items,
            "total_items": rep.total_items,
            "fitted_items": len(fit.items),
        }
    out = cfg.out / "reports"
    if tuple(dimensions) == DIMENSION_KEYS:
        table = dimension_report(reports)
        written.append(_write(out / "dimension_report.md", table.to_markdown()))
        written.append(_write(out / "dimension_report.csv", table.to_csv()))
        order = _respondents(cfg, ("human", "vlm")) if "respondents" in cfg.paths else None
        if order is not None:
            present = {a.respondent_id for ab in abilities_by_dim.values() for a in ab}
            order = [r for r in order if r in present]
        prof = proficiency_report(abilities_by_dim, order)
        written.append(_write(out / "proficiency_report.md", prof.to_markdown()))
        written.append(_write(out / "proficiency_report.csv", prof.to_csv()))
    written.append(_write(out / "reliability.json", json.dumps(summary, indent=2) + "\n"))
    return written


def stage_map(cfg: RunConfig, dimensions=DIMENSION_KEYS) -> list:
    written = []
    framework = _framework(cfg)
    for dim in dimensions:
        fit = _load_fit(cfg, dim)
        thresholds = [thurstonian_thresholds(p) for p in fit.items]
        abilities = load_abilities(cfg.out / "abilities" / f"{dim}.csv")
        title = framework[dim].name if dim in framework.keys else dim
        for grouped, suffix in ((False, ""), (True, "_grouped")):
            model = build_map(thresholds, abilities, MapOptions(cfg.bin_width, grouped, title))
            written.append(_write(cfg.out / "maps" / f"{dim}{suffix}.svg", render_svg(model)))
            if cfg.text_maps and not grouped:
                written.append(_write(cfg.out / "maps" / f"{dim}.txt", render_text(model, cfg.text_width)))
    return written


def _run_stage(name: str, fn, cfg: RunConfig, in_pipeline: bool) -> list:
    log.info("stage %s", name)
    try:
        return fn(cfg)
    except ValidationError as exc:
        if in_pipeline:
            raise StageError(name, str(exc)) from exc
        raise
    except (AdqcError, OSError, KeyError, ValueError) as exc:
        raise StageError(name, str(exc) or type(exc).__name__) from exc


PIPELINE = (
    ("consensus", stage_consensus),
    ("recode", stage_recode),
    ("fit", stage_fit),
    ("diagnose", stage_diagnose),
    ("map", stage_map),
)


def write_manifest(cfg: RunConfig, artifacts) -> Path:
    """Content hashes of every input file and every artifact, in a fixed order."""
    out = cfg.out.resolve()
    inputs = []
    for key in sorted(cfg.paths):
        p = cfg.paths[key]
        if key == "out" or not p.is_file():
            continue
        inputs.append({"name": key, "sha256": _sha256(p)})
    arts = sorted({Path(a).resolve() for a in artifacts})
    manifest = {
        "tool": f"adqc {__version__}",
        "seed": cfg.seed,
        "mode": cfg.fit.mode,
        "inputs": inputs,
        "artifacts": [{"path": a.relative_to(out).as_posix(), "sha256": _sha256(a)} for a in arts],
    }
    return _write(cfg.out / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def run_pipeline(cfg: RunConfig) -> Path:
    artifacts = []
    for name, fn in PIPELINE:
        artifacts.extend(_run_stage(name, fn, cfg, in_pipeline=True))
    return write_manifest(cfg, artifacts)


# -- commands ------------------------------------------------------------------


def _seed(text: str) -> int:
    try:
        return check_seed(int(text))
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"seed must be an integer in 0..2**64-1, got {text!r}") from None


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--seed", type=_seed, help="override the configured seed")
    parser.add_argument("--out", help="output directory (overrides paths.out)")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="mode", action="store_const", const="deterministic",
                      help="fixed-order reductions (default)")
    mode.add_argument("--fast", dest="mode", action="store_const", const="fast", help="allow reordered reductions")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print errors")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.paths["out"] = Path(args.out)
    if args.mode is not None:
        cfg.fit = replace(cfg.fit, mode=args.mode)
    for name in ("n_persons", "n_items", "replications"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return _validate(cfg)


def cmd_stage(name, fn):
    def run(args) -> int:
        cfg = _resolve(args)
        for path in _run_stage(name, fn, cfg, in_pipeline=False):
            print(path)
        return EXIT_OK

    return run


def cmd_pipeline(args) -> int:
    cfg = _resolve(args)
    manifest = run_pipeline(cfg)
    print(manifest)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    items = random_items(cfg.n_items, cfg.seed)
    matrix, thetas = simulate_responses(SimConfig(cfg.n_persons, items, cfg.seed, cfg.variance))
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(matrix, out / "simulated_matrix.csv")
    truth = {
        "seed": cfg.seed,
        "variance": cfg.variance,
        "items": [{"item": p.item, "deltas": [float(d) for d in p.deltas]} for p in items],
        "thetas": {p: float(t) for p, t in zip(matrix.persons, thetas)},
    }
    _write(out / "simulated_truth.json", json.dumps(truth, indent=2) + "\n")
    print(out / "simulated_matrix.csv")
    return EXIT_OK


def cmd_recover(args) -> int:
    cfg = _resolve(args)
    items = random_items(cfg.n_items, cfg.seed)
    report = recovery_experiment(SimConfig(cfg.n_persons, items, cfg.seed, cfg.variance), cfg.replications, cfg.fit)
    try:
        md = _write(cfg.out / "recovery_report.md", recovery_markdown(report))
        _write(cfg.out / "recovery_report.json", recovery_json(report))
    except OSError as exc:
        raise StageError("recover", str(exc)) from exc
    print(md)
    return EXIT_OK


def cmd_prompt(args) -> int:
    cfg = _resolve(args)
    version = load_ad_version(args.ad)
    framework = _framework(cfg)
    if args.duration is None:
        packages = [build_prompt(framework, version, args.role_version)]
    else:
        width = args.chunk_seconds or cfg.chunk_seconds
        windows = chunk_windows(args.duration, width)
        packages = [build_prompt(framework, version, args.role_version, (k, a, b)) for k, (a, b) in enumerate(windows)]
    for pkg in packages:
        if pkg.empty:
            log.warning("chunk %s has no segments", pkg.chunk)
    if args.out is None:
        for pkg in packages:
            sys.stdout.write(pkg.user_prompt)
        return EXIT_OK
    out = Path(args.out)
    _write(out / "system_prompt.txt", packages[0].system_prompt + "\n")
    for pkg in packages:
        name = "prompt.txt" if pkg.chunk is None else f"prompt_chunk{pkg.chunk[0]:02d}.txt"
        print(_write(out / name, pkg.user_prompt))
    return EXIT_OK


def cmd_parse(args) -> int:
    responses = []
    for path in args.payload:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
        responses.append(parse_response(text))
    ratings, means = combine_chunk_responses(responses)
    notes = {d: " | ".join(r.justifications[d] for r in responses) for d in DIMENSION_KEYS}
    records = to_records(args.respondent, args.video, args.label, ratings, notes)
    if args.out:
        write_ratings(records, args.out)
        print(args.out)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["respondent_id", "video_id", "version_label", "dimension", "rating", "comment"])
        for r in records:
            w.writerow([r.respondent_id, r.video_id, r.version_label, r.dimension, r.rating, r.comment or ""])
    if len(responses) > 1:
        log.info("chunk means: %s", ", ".join(f"{d}={means[d]:.4f}" for d in DIMENSION_KEYS))
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import generate

    paths = generate(args.out, args.seed if args.seed is not None else 42)
    print(paths["config"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adqc", description="Quality control for audio-description rating studies.")
    parser.add_argument("--version", action="version", version=f"adqc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    stages = {
        "design": ("write blinded label mappings and rating sheets", stage_design),
        "consensus": ("derive ground truth from the expert panel", stage_consensus),
        "recode": ("score respondents against ground truth, one matrix per dimension", stage_recode),
        "fit": ("fit the partial credit model per dimension", stage_fit),
        "diagnose": ("fit statistics, reliability and report tables", stage_diagnose),
        "map": ("Wright maps per dimension, plain and grouped by source", stage_map),
    }
    for name, (help_text, fn) in stages.items():
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(func=cmd_stage(name, fn))
    p = sub.add_parser("pipeline", help="consensus through maps, plus a hash manifest")
    _common(p)
    p.set_defaults(func=cmd_pipeline)
    for name, func, help_text in (
        ("simulate", cmd_simulate, "simulate a PCM response matrix with known truth"),
        ("recover", cmd_recover, "parameter-recovery experiment"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--n-persons", type=int)
        p.add_argument("--n-items", type=int)
        if name == "recover":
            p.add_argument("--replications", type=int)
        p.set_defaults(func=func)
    p = sub.add_parser("prompt", help="assemble evaluation prompts for one AD file")
    _common(p)
    p.add_argument("ad", help="AD segment JSON")
    p.add_argument("--role-version", type=int, choices=(1, 2), default=1)
    p.add_argument("--duration", type=float, help="video length in seconds; enables chunked prompts")
    p.add_argument("--chunk-seconds", type=float)
    p.set_defaults(func=cmd_prompt)
    p = sub.add_parser("parse", help="parse model replies into ratings rows (several files are chunk-averaged)")
    p.add_argument("payload", nargs="+")
    p.add_argument("--respondent", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--out")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_parse)
    p = sub.add_parser("demo", help="write the bundled synthetic demo study")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed)
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s",
                        force=True)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValidationError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except AdqcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
