"""Fit statistics, reliability, item-rest correlations and report tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .model import DIMENSION_KEYS, DIMENSION_TITLES
from .pcm import PcmFit, PersonAbility, log_category_probabilities, person_posteriors
from .rng import substream
from .scoring import ResponseMatrix

FIT_LOW = 0.75
FIT_HIGH = 1.33
WELL_FIT_CORRELATION = 0.20


def flag(value: float, low: float = FIT_LOW, high: float = FIT_HIGH) -> str:
    if value < low:
        return "overfit"
    if value > high:
        return "misfit"
    return "ok"


@dataclass(frozen=True)
class FitStats:
    unit: str
    infit: float
    outfit: float
    n: int

    @property
    def infit_flag(self) -> str:
        return flag(self.infit)

    @property
    def outfit_flag(self) -> str:
        return flag(self.outfit)


def _moments(fit: PcmFit, matrix: ResponseMatrix, abilities: Sequence[PersonAbility]):
    """Observed scores, expectations and variances at each person's EAP ability."""
    mat = fit.align(matrix)
    by_id = {a.respondent_id: a.theta for a in abilities}
    try:
        theta = np.array([by_id[str(p)] for p in mat.persons])
    except KeyError as exc:
        raise ValidationError(f"no ability for person {exc.args[0]}") from None
    n_p, n_i = mat.shape
    e = np.zeros((n_p, n_i))
    w = np.zeros((n_p, n_i))
    for j, params in enumerate(fit.items):
        p = np.exp(log_category_probabilities(theta, params.deltas))
        x = np.arange(params.m + 1)
        e[:, j] = p @ x
        w[:, j] = p @ (x * x) - e[:, j] ** 2
    obs = mat.observed
    x = np.where(obs, mat.data, 0).astype(float)
    return mat, x, e, w, obs


def mean_squares(x, e, w, obs, axis):
    """Infit, outfit and counts along ``axis`` (1 for persons, 0 for items)."""
    sq = np.where(obs, (x - e) ** 2, 0.0)
    ww = np.where(obs, w, 0.0)
    n = obs.sum(axis=axis)
    if np.any(n == 0):
        raise ValidationError("unit without responses")
    outfit = np.where(obs, sq / np.where(obs, w, 1.0), 0.0).sum(axis=axis) / n
    infit = sq.sum(axis=axis) / ww.sum(axis=axis)
    return infit, outfit, n


def person_fit(fit: PcmFit, abilities: Sequence[PersonAbility], matrix: Optional[ResponseMatrix] = None) -> list:
    """Infit and outfit mean squares per person, residuals taken at the EAP ability."""
    mat, x, e, w, obs = _moments(fit, fit.matrix if matrix is None else matrix, abilities)
    infit, outfit, n = mean_squares(x, e, w, obs, axis=1)
    return [FitStats(str(p), float(a), float(b), int(k)) for p, a, b, k in zip(mat.persons, infit, outfit, n)]


def item_fit(fit: PcmFit, abilities: Sequence[PersonAbility], matrix: Optional[ResponseMatrix] = None) -> list:
    mat, x, e, w, obs = _moments(fit, fit.matrix if matrix is None else matrix, abilities)
    infit, outfit, n = mean_squares(x, e, w, obs, axis=0)
    return [FitStats(str(it), float(a), float(b), int(k)) for it, a, b, k in zip(mat.items, infit, outfit, n)]


def fit_stats_csv(stats: Sequence[FitStats], id_header: str = "respondent_id") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([id_header, "infit", "outfit", "infit_flag", "outfit_flag"])
    for s in stats:
        w.writerow([s.unit, f"{s.infit:.5f}", f"{s.outfit:.5f}", s.infit_flag, s.outfit_flag])
    return buf.getvalue()


# -- reliability -------------------------------------------------------------


def eap_reliability(abilities: Sequence[PersonAbility]) -> float:
    """Var(EAP) / (Var(EAP) + mean posterior variance), population variances."""
    if len(abilities) < 2:
        raise ValidationError("reliability needs at least two persons")
    theta = np.array([a.theta for a in abilities])
    psd2 = np.array([a.psd for a in abilities]) ** 2
    between = float(theta.var())
    within = float(psd2.mean())
    if between + within == 0:
        return 1.0 if within == 0 else 0.0
    return between / (between + within)


def plausible_values(fit: PcmFit, draws: int, seed: int, matrix: Optional[ResponseMatrix] = None,
                     posterior: Optional[np.ndarray] = None) -> np.ndarray:
    """``(persons, draws)`` samples from each person's grid posterior."""
    post = person_posteriors(fit, matrix) if posterior is None else np.asarray(posterior)
    rng = substream(seed, "plausible_values")
    cdf = np.cumsum(post, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((post.shape[0], draws))
    idx = np.array([np.searchsorted(cdf[n], u[n], side="right") for n in range(post.shape[0])])
    return fit.grid.nodes[np.minimum(idx, post.shape[1] - 1)]


def pv_reliability(fit: PcmFit, matrix: Optional[ResponseMatrix] = None, draws: int = 10, seed: int = 0,
                   posterior: Optional[np.ndarray] = None) -> float:
    """1 - mean within-person variance of plausible values / variance of all draws."""
    if draws < 2:
        raise ValidationError("pv_reliability needs at least two draws")
    post = person_posteriors(fit, matrix) if posterior is None else np.asarray(posterior)
    if np.all(post.max(axis=1) >= 1.0 - 1e-15) and len(set(np.argmax(post, axis=1).tolist())) == 1:
        raise ValidationError("degenerate posterior: all mass on one node for every person")
    pv = plausible_values(fit, draws, seed, posterior=post)
    total = float(pv.var(ddof=1))
    if total == 0:
        raise ValidationError("degenerate plausible values: zero total variance")
    within = float(pv.var(axis=1, ddof=1).mean())
    return 1.0 - within / total


# -- item-rest correlation ----------------------------------------------------


def item_rest_correlation(matrix: ResponseMatrix) -> dict:
    """Pearson correlation of each item with the rest score; ``nan`` when undefined."""
    obs = matrix.observed
    x = np.where(obs, matrix.data, 0).astype(float)
    total = x.sum(axis=1)
    out = {}
    for j, item in enumerate(matrix.items):
        rows = obs[:, j]
        if rows.sum() < 3:
            raise ValidationError(f"{item}: fewer than 3 persons observed")
        a = x[rows, j]
        b = total[rows] - a
        a = a - a.mean()
        b = b - b.mean()
        denom = math.sqrt(float(a @ a) * float(b @ b))
        out[item] = float(a @ b) / denom if denom > 0 else float("nan")
    return out


def is_well_fit(correlation: float) -> bool:
    return not math.isnan(correlation) and correlation >= WELL_FIT_CORRELATION


# -- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class ReliabilityReport:
    dimension: str
    latent_variance: float
    eap_reliability: float
    pv_reliability: Optional[float]
    well_fit_items: int
    total_items: int

    def __post_init__(self):
        if self.well_fit_items > self.total_items:
            raise ValidationError("well-fit item count exceeds total items")


def reliability_report(dimension: str, fit: PcmFit, abilities, matrix: ResponseMatrix,
                       draws: int = 10, seed: int = 0) -> ReliabilityReport:
    """Summaries for one dimension; items dropped from the fit count as not well fit."""
    corr = item_rest_correlation(matrix)
    well = sum(is_well_fit(c) for c in corr.values())
    return ReliabilityReport(
        dimension=dimension,
        latent_variance=fit.latent.variance,
        eap_reliability=eap_reliability(abilities),
        pv_reliability=pv_reliability(fit, matrix, draws, seed),
        well_fit_items=well,
        total_items=len(matrix.items),
    )


@dataclass(frozen=True)
class Table:
    """A rendered-agnostic table: row labels, column labels, formatted cells."""

    row_labels: tuple
    col_labels: tuple
    cells: tuple  # rows of strings ("" for blank)
    marked: tuple = ()  # rows of bools
    corner: str = ""
    footnotes: tuple = ()

    @property
    def shape(self) -> tuple:
        return (len(self.row_labels), len(self.col_labels))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.corner, *self.col_labels])
        for label, row in zip(self.row_labels, self.cells):
            w.writerow([label, *row])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [
            "| " + " | ".join([self.corner, *self.col_labels]) + " |",
            "|" + "---|" + "---:|" * len(self.col_labels),
        ]
        for r, (label, row) in enumerate(zip(self.row_labels, self.cells)):
            out = []
            for c, v in enumerate(row):
                bold = self.marked and self.marked[r][c] and v
                out.append(f"**{v}**" if bold else v)
            lines.append("| " + " | ".join([label, *out]) + " |")
        for note in self.footnotes:
            lines.append("")
            lines.append(note)
        return "\n".join(lines) + "\n"


def dimension_report(reports: Mapping[str, ReliabilityReport], dimensions=DIMENSION_KEYS) -> Table:
    missing = [d for d in dimensions if d not in reports]
    if missing:
        raise ValidationError(f"dimension report missing: {', '.join(missing)}")
    rows = (
        [f"{reports[d].latent_variance:.3f}" for d in dimensions],
        [f"{reports[d].eap_reliability:.3f}" for d in dimensions],
        [str(reports[d].well_fit_items) for d in dimensions],
    )
    totals = sorted({reports[d].total_items for d in dimensions})
    return Table(
        row_labels=("Variance", "EAP/PV Reliability", f"Well-Fit Items (out of {'/'.join(map(str, totals))})"),
        col_labels=tuple(DIMENSION_TITLES.get(d, d) for d in dimensions),
        cells=tuple(tuple(r) for r in rows),
    )


def proficiency_report(abilities: Mapping[str, Sequence[PersonAbility]], respondents: Sequence[str] = None,
                       dimensions=DIMENSION_KEYS) -> Table:
    """Respondents x dimensions table of EAP abilities at 5 decimals, column maxima marked."""
    missing = [d for d in dimensions if d not in abilities]
    if missing:
        raise ValidationError(f"proficiency report missing: {', '.join(missing)}")
    lookup = {d: {a.respondent_id: a.theta for a in abilities[d]} for d in dimensions}
    if respondents is None:
        respondents = []
        for d in dimensions:
            for a in abilities[d]:
                if a.respondent_id not in respondents:
                    respondents.append(a.respondent_id)
    cells, values = [], []
    blanks = False
    for rid in respondents:
        row, vals = [], []
        for d in dimensions:
            if rid in lookup[d]:
                text = f"{lookup[d][rid]:.5f}"
                row.append(text)
                vals.append(float(text))
            else:
                row.append("")
                vals.append(None)
                blanks = True
        cells.append(tuple(row))
        values.append(vals)
    marked = []
    col_max = []
    for c in range(len(dimensions)):
        col = [v[c] for v in values if v[c] is not None]
        col_max.append(max(col) if col else None)
    for vals in values:
        marked.append(tuple(v is not None and v == col_max[c] for c, v in enumerate(vals)))
    notes = ("Blank cells: respondent not estimated in that dimension.",) if blanks else ()
    return Table(
        row_labels=tuple(respondents),
        col_labels=tuple(DIMENSION_TITLES.get(d, d) for d in dimensions),
        cells=tuple(cells),
        marked=tuple(marked),
        corner="Respondent",
        footnotes=notes,
    )
