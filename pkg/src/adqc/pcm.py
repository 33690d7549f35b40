"""Partial Credit Model estimation.

Category probabilities follow the Masters partial credit model::

    P(X = x | theta) ∝ exp(sum_{k<=x} (theta - delta_k)),  empty sum = 0

Item parameters are estimated by marginal maximum likelihood with EM. The
latent trait is N(0, sigma²) with sigma² estimated; the mean is pinned at 0
for identification. The integral over theta uses a fixed standard-normal
grid ``z_q`` (61 equally spaced points on ±5, weights ∝ φ(z), renormalized)
that is rescaled each cycle to the current SD, ``theta_q = sigma * z_q``.
Under this parameterization both M-step updates (Newton on each item's
steps, Newton on sigma) increase the expected complete-data log-likelihood,
so the marginal log-likelihood never decreases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import DegenerateItemError, EstimationError, ValidationError
from .scoring import MISSING, ResponseMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcmItemParams:
    item: object
    deltas: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float).reshape(-1)
        if not np.all(np.isfinite(d)):
            raise ValidationError(f"{self.item}: non-finite step parameter")
        object.__setattr__(self, "deltas", d)

    @property
    def m(self) -> int:
        return len(self.deltas)


@dataclass(frozen=True)
class LatentDistribution:
    variance: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValidationError("latent variance must be positive")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValidationError("grid nodes and weights must be 1-D and equally long")
        if np.any(np.diff(nodes) <= 0):
            raise ValidationError("grid nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise ValidationError("grid weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights / weights.sum())

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def standard_grid(n_nodes: int = 61, span: float = 5.0) -> tuple:
    """Standard-normal nodes on ``[-span, span]`` and their normalized weights."""
    if n_nodes < 3:
        raise ValueError("need at least 3 quadrature nodes")
    z = np.linspace(-span, span, n_nodes)
    w = np.exp(-0.5 * z * z)
    return z, w / w.sum()


def make_grid(latent: LatentDistribution, n_nodes: int = 61, span: float = 5.0) -> QuadratureGrid:
    z, w = standard_grid(n_nodes, span)
    return QuadratureGrid(latent.mean + latent.sd * z, w)


@dataclass(frozen=True)
class FitConfig:
    n_nodes: int = 61
    span: float = 5.0
    tolerance: float = 1e-4
    max_iter: int = 1000
    collapse_null_categories: bool = False
    mode: str = "deterministic"  # or "fast"
    max_halvings: int = 50
    initial_variance: float = 1.0


# -- probabilities -----------------------------------------------------------


def log_category_probabilities(theta, deltas) -> np.ndarray:
    """Log category probabilities, broadcasting ``theta`` against ``deltas[..., :]``.

    ``theta`` of shape ``S`` and ``deltas`` of shape ``D + (m,)`` give an
    array of shape ``broadcast(S, D) + (m + 1,)``.
    """
    theta = np.asarray(theta, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    steps = theta[..., None] - deltas
    cum = np.cumsum(steps, axis=-1)
    zeros = np.zeros(cum.shape[:-1] + (1,))
    eta = np.concatenate([zeros, cum], axis=-1)
    top = eta.max(axis=-1, keepdims=True)
    return eta - (top + np.log(np.exp(eta - top).sum(axis=-1, keepdims=True)))


def category_probabilities(theta: float, params) -> np.ndarray:
    """Probability of each category ``0..m`` at ability ``theta``."""
    deltas = params.deltas if isinstance(params, PcmItemParams) else np.asarray(params, dtype=float)
    if not np.isfinite(theta) or not np.all(np.isfinite(deltas)):
        raise ValidationError("category_probabilities needs finite theta and deltas")
    return np.exp(log_category_probabilities(float(theta), deltas))


def _at_least(p: np.ndarray) -> np.ndarray:
    """``P(X >= k)`` for ``k = 1..m`` from category probabilities on the last axis."""
    return np.cumsum(p[..., ::-1], axis=-1)[..., ::-1][..., 1:]


def expected_score(theta, deltas) -> np.ndarray:
    p = np.exp(log_category_probabilities(theta, deltas))
    return p @ np.arange(p.shape[-1])


def _log_prob_table(nodes: np.ndarray, deltas_list: Sequence[np.ndarray], width: int) -> np.ndarray:
    """(Q, I, width) log-probabilities; categories above an item's m are 0 (never observed)."""
    out = np.zeros((len(nodes), len(deltas_list), width))
    by_m = {}
    for i, d in enumerate(deltas_list):
        by_m.setdefault(len(d), []).append(i)
    for m, idx in by_m.items():
        block = np.stack([deltas_list[i] for i in idx])
        out[:, idx, : m + 1] = log_category_probabilities(nodes[:, None], block[None])
    return out


# -- thresholds --------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    item: object
    gammas: np.ndarray


def _solve_at_least(deltas: np.ndarray, k: int, target: float = 0.5, tol: float = 1e-12) -> float:
    def f(t):
        return _at_least(np.exp(log_category_probabilities(t, deltas)))[k - 1] - target

    lo, hi = -10.0, 10.0
    while f(lo) > 0:
        lo -= 10.0
    while f(hi) < 0:
        hi += 10.0
    return brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def thurstonian_thresholds(params: PcmItemParams) -> Thresholds:
    """Cumulative thresholds: the abilities where ``P(X >= k) = 0.5``."""
    gammas = np.array([_solve_at_least(params.deltas, k) for k in range(1, params.m + 1)])
    return Thresholds(params.item, np.maximum.accumulate(gammas))


# -- likelihood --------------------------------------------------------------


def _one_hot(data: np.ndarray, width: int) -> np.ndarray:
    y = np.zeros(data.shape + (width,))
    n, i = np.nonzero(data != MISSING)
    y[n, i, data[n, i]] = 1.0
    return y


def _node_loglik(y: np.ndarray, table: np.ndarray, fast: bool = False) -> np.ndarray:
    return np.einsum("nix,qix->nq", y, table, optimize=fast)


def marginal_log_likelihood(matrix: ResponseMatrix, items: Sequence[PcmItemParams],
                            latent: LatentDistribution = LatentDistribution(),
                            grid: Optional[QuadratureGrid] = None,
                            person_weights=None) -> float:
    """``sum_n w_n log sum_q w_q prod_i P(x_ni | theta_q)`` over observed cells."""
    if matrix.shape[0] == 0:
        return 0.0
    if len(items) != matrix.shape[1]:
        raise ValidationError("one parameter set per matrix column required")
    grid = grid or make_grid(latent)
    width = max((p.m for p in items), default=0) + 1
    table = _log_prob_table(grid.nodes, [p.deltas for p in items], width)
    ll = logsumexp(_node_loglik(_one_hot(matrix.data, width), table) + grid.log_weights, axis=1)
    if person_weights is not None:
        ll = ll * np.asarray(person_weights, dtype=float)
    return float(ll.sum())


# -- data preparation --------------------------------------------------------


@dataclass(frozen=True)
class PreparedData:
    matrix: ResponseMatrix
    category_maps: dict  # item -> tuple mapping raw credit to model category
    dropped: tuple
    warnings: tuple


def prepare_matrix(matrix: ResponseMatrix, collapse_null_categories: bool = False) -> PreparedData:
    keep, maps, dropped, warnings = [], {}, [], []
    data = matrix.data.copy()
    new_m = []
    for j, item in enumerate(matrix.items):
        col = data[:, j]
        seen = sorted(set(col[col != MISSING].tolist()))
        top = int(matrix.m[j])
        if len(seen) == top + 1:
            keep.append(j)
            new_m.append(top)
            continue
        if not collapse_null_categories:
            absent = [k for k in range(top + 1) if k not in seen]
            raise DegenerateItemError(item, f"categories {absent} never observed")
        if len(seen) < 2:
            dropped.append(item)
            warnings.append(f"{item}: dropped, only category {seen} observed")
            continue
        mapping = {raw: k for k, raw in enumerate(seen)}
        maps[item] = tuple(mapping.get(x, -1) for x in range(top + 1))
        observed = col != MISSING
        col = col.copy()
        col[observed] = [mapping[x] for x in col[observed]]
        data[:, j] = col
        keep.append(j)
        new_m.append(len(seen) - 1)
        warnings.append(f"{item}: null categories collapsed, {seen} -> 0..{len(seen) - 1}")
    if not keep:
        raise ValidationError("no estimable items")
    sub = ResponseMatrix(matrix.persons, tuple(matrix.items[j] for j in keep), data[:, keep], np.array(new_m))
    empty = [p for p, row in zip(sub.persons, sub.observed) if not row.any()]
    if empty:
        raise ValidationError(f"persons without responses: {', '.join(map(str, empty))}")
    return PreparedData(sub, maps, tuple(dropped), tuple(warnings))


# -- M-step pieces -----------------------------------------------------------


def _item_objective(deltas: np.ndarray, r: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Expected complete-data log-likelihood per item. deltas (G, m), r (Q, G, m+1)."""
    lp = log_category_probabilities(nodes[:, None], deltas[None, :, :])  # (Q, G, m+1)
    return np.sum(r * lp, axis=(0, 2))


def _item_grad_hess(deltas, r, nodes):
    lp = log_category_probabilities(nodes[:, None], deltas[None, :, :])
    p = np.exp(lp)
    n = r.sum(axis=2)  # (Q, G)
    ge = _at_least(p)  # (Q, G, m)
    obs_ge = _at_least(r)  # sum_{x>=k} r_x
    grad = np.sum(n[..., None] * ge - obs_ge, axis=0)  # (G, m)
    m = deltas.shape[1]
    kk = np.maximum.outer(np.arange(m), np.arange(m))
    joint = ge[..., kk]  # P(X >= max(k, l))
    cov = joint - ge[..., :, None] * ge[..., None, :]
    hess = -np.einsum("qg,qgkl->gkl", n, cov)
    return grad, hess


def _no_worse(new, old):
    """Acceptance test for line searches, allowing for floating-point rounding."""
    return new >= old - 1e-12 * (1.0 + np.abs(old))


def _newton_items(deltas, r, nodes, max_halvings=50, max_steps=25, step_tol=1e-10):
    """Maximize each item's expected complete-data log-likelihood (batched over items)."""
    deltas = deltas.copy()
    f = _item_objective(deltas, r, nodes)
    for _ in range(max_steps):
        grad, hess = _item_grad_hess(deltas, r, nodes)
        try:
            step = -np.linalg.solve(hess, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = grad * 0.1
        if np.max(np.abs(step)) < step_tol:
            break
        active = np.ones(len(deltas), dtype=bool)
        scale = np.ones(len(deltas))
        new = deltas.copy()
        for _h in range(max_halvings + 1):
            cand = deltas + scale[:, None] * step
            fc = _item_objective(cand, r, nodes)
            ok = active & _no_worse(fc, f)
            new[ok] = cand[ok]
            f = np.where(ok, fc, f)
            active &= ~ok
            if not active.any():
                break
            scale[active] *= 0.5
        for g in np.nonzero(active)[0]:
            new[g] = _bisect_item(deltas[g], r[:, g : g + 1], nodes)
            f[g] = _item_objective(new[g][None], r[:, g : g + 1], nodes)[0]
        moved = np.max(np.abs(new - deltas))
        deltas = new
        if moved < step_tol:
            break
    return deltas


def _bisect_item(deltas, r, nodes, iters=100):
    """Coordinate-wise bisection on the gradient; keeps the start if nothing improves."""
    best = deltas.copy()
    f_best = _item_objective(best[None], r, nodes)[0]
    cur = best.copy()
    for k in range(len(cur)):
        def g(v):
            trial = cur.copy()
            trial[k] = v
            return _item_grad_hess(trial[None], r, nodes)[0][0, k]

        lo, hi = cur[k] - 1.0, cur[k] + 1.0
        while g(lo) < 0:
            lo -= 1.0
        while g(hi) > 0:
            hi += 1.0
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if g(mid) > 0:
                lo = mid
            else:
                hi = mid
        cur[k] = 0.5 * (lo + hi)
    f_cur = _item_objective(cur[None], r, nodes)[0]
    return cur if f_cur >= f_best else best


def _sigma_objective(sigma, z, deltas_list, r, width):
    table = _log_prob_table(sigma * z, deltas_list, width)
    return float(np.sum(r * table))


def _newton_sigma(sigma, z, deltas_list, r, width, max_halvings=50, max_steps=25, step_tol=1e-10):
    """Maximize the expected complete-data log-likelihood over the latent SD."""
    x = np.arange(width)
    n = r.sum(axis=2)  # (Q, I)
    s = (r * x).sum(axis=2)
    f = _sigma_objective(sigma, z, deltas_list, r, width)
    for _ in range(max_steps):
        p = np.exp(_log_prob_table(sigma * z, deltas_list, width))
        for i, d in enumerate(deltas_list):
            p[:, i, len(d) + 1 :] = 0.0
        e = p @ x
        v = p @ (x * x) - e * e
        grad = float(np.sum(z[:, None] * (s - n * e)))
        hess = -float(np.sum((z * z)[:, None] * n * v))
        step = -grad / hess if hess < 0 else 0.1 * grad
        if abs(step) < step_tol:
            break
        accepted = False
        for _h in range(max_halvings + 1):
            cand = sigma + step
            if cand > 0:
                fc = _sigma_objective(cand, z, deltas_list, r, width)
                if _no_worse(fc, f):
                    sigma, f, accepted = cand, fc, True
                    break
            step *= 0.5
        if not accepted or abs(step) < step_tol:
            break
    return sigma


# -- fit ---------------------------------------------------------------------


@dataclass
class PcmFit:
    items: list
    latent: LatentDistribution
    log_likelihood: float
    iterations: int
    converged: bool
    posterior: np.ndarray
    grid: QuadratureGrid
    data: PreparedData
    trace: list = field(default_factory=list)
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def matrix(self) -> ResponseMatrix:
        return self.data.matrix

    @property
    def warnings(self) -> tuple:
        return self.data.warnings

    def params_for(self, item) -> PcmItemParams:
        for p in self.items:
            if p.item == item:
                return p
        raise KeyError(item)

    def align(self, matrix: ResponseMatrix) -> ResponseMatrix:
        """Restrict ``matrix`` to fitted items and apply any category collapsing."""
        if matrix is self.data.matrix:
            return matrix
        col = {it: j for j, it in enumerate(matrix.items)}
        idx, cols = [], []
        for p in self.items:
            if p.item not in col:
                raise ValidationError(f"matrix lacks fitted item {p.item}")
            j = col[p.item]
            c = matrix.data[:, j].copy()
            cmap = self.data.category_maps.get(p.item)
            if cmap is not None:
                obs = c != MISSING
                c[obs] = [cmap[x] for x in c[obs]]
                if np.any(c[obs] < 0):
                    raise ValidationError(f"{p.item}: response in a collapsed-away category")
            idx.append(j)
            cols.append(c)
        data = np.stack(cols, axis=1) if cols else np.zeros((len(matrix.persons), 0), dtype=np.int64)
        return ResponseMatrix(matrix.persons, tuple(p.item for p in self.items), data, [p.m for p in self.items])

    def thresholds(self) -> list:
        return [thurstonian_thresholds(p) for p in self.items]

    def to_json(self) -> dict:
        items = []
        for p in self.items:
            entry = {
                "item": str(p.item),
                "m": p.m,
                "deltas": [round(float(d), 10) for d in p.deltas],
                "gammas": [round(float(g), 10) for g in thurstonian_thresholds(p).gammas],
            }
            if p.item in self.data.category_maps:
                entry["category_map"] = list(self.data.category_maps[p.item])
            items.append(entry)
        return {
            "items": items,
            "dropped_items": [str(it) for it in self.data.dropped],
            "latent_mean": self.latent.mean,
            "latent_variance": round(self.latent.variance, 10),
            "log_likelihood": round(self.log_likelihood, 8),
            "iterations": self.iterations,
            "converged": self.converged,
            "warnings": list(self.warnings),
            "config": asdict(self.config),
        }


def fit_from_json(obj: dict, matrix: ResponseMatrix) -> PcmFit:
    """Rebuild a fit from :meth:`PcmFit.to_json` output and the matrix it was fitted to.

    Posteriors and the log-likelihood are recomputed from the stored
    parameters, so the result is usable for abilities and diagnostics.
    """
    try:
        config = FitConfig(**obj["config"])
        by_label = {str(it): it for it in matrix.items}
        items, maps = [], {}
        for entry in obj["items"]:
            if entry["item"] not in by_label:
                raise ValidationError(f"fitted item {entry['item']} not in matrix")
            item = by_label[entry["item"]]
            items.append(PcmItemParams(item, np.array(entry["deltas"], dtype=float)))
            if "category_map" in entry:
                maps[item] = tuple(int(k) for k in entry["category_map"])
        dropped = tuple(by_label.get(s, s) for s in obj["dropped_items"])
        latent = LatentDistribution(variance=float(obj["latent_variance"]))
        warnings = tuple(obj["warnings"])
        iterations, converged = int(obj["iterations"]), bool(obj["converged"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed fit report: {exc}") from None
    z, zw = standard_grid(config.n_nodes, config.span)
    grid = QuadratureGrid(latent.sd * z, zw)
    fit = PcmFit(items, latent, 0.0, iterations, converged, None, grid,
                 PreparedData(None, maps, dropped, warnings), [], config)
    aligned = fit.align(matrix)
    fit.data = PreparedData(aligned, maps, dropped, warnings)
    fit.posterior = person_posteriors(fit)
    fit.log_likelihood = marginal_log_likelihood(aligned, items, latent, grid)
    return fit


def _initial_deltas(data: np.ndarray, m: np.ndarray) -> list:
    out = []
    for j, top in enumerate(m):
        col = data[:, j]
        counts = np.array([np.sum(col == k) for k in range(top + 1)], dtype=float) + 0.5
        out.append(np.log(counts[:-1] / counts[1:]))
    return out


def fit_pcm(matrix: ResponseMatrix, config: FitConfig = FitConfig()) -> PcmFit:
    """Marginal maximum likelihood fit of the partial credit model by EM."""
    prepared = prepare_matrix(matrix, config.collapse_null_categories)
    for w in prepared.warnings:
        log.warning(w)
    mat = prepared.matrix
    fast = config.mode == "fast"
    if config.mode not in ("deterministic", "fast"):
        raise ValueError(f"unknown mode {config.mode!r}")
    m = mat.m
    width = int(m.max()) + 1
    y = _one_hot(mat.data, width)
    z, zw = standard_grid(config.n_nodes, config.span)
    log_zw = np.log(zw)
    deltas = _initial_deltas(mat.data, m)
    sigma = math.sqrt(config.initial_variance)
    groups = {}
    for i, top in enumerate(m.tolist()):
        groups.setdefault(top, []).append(i)

    def e_step(sigma, deltas):
        table = _log_prob_table(sigma * z, deltas, width)
        a = _node_loglik(y, table, fast) + log_zw
        ll_n = logsumexp(a, axis=1)
        return float(ll_n.sum()), np.exp(a - ll_n[:, None])

    trace = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        ll, post = e_step(sigma, deltas)
        trace.append(ll)
        r = np.einsum("nq,nix->qix", post, y, optimize=fast)
        nodes = sigma * z
        new_deltas = list(deltas)
        for top, idx in groups.items():
            block = np.stack([deltas[i] for i in idx])
            rb = r[:, idx, : top + 1]
            solved = _newton_items(block, rb, nodes, config.max_halvings)
            for g, i in enumerate(idx):
                new_deltas[i] = solved[g]
        new_sigma = _newton_sigma(sigma, z, new_deltas, r, width, config.max_halvings)
        change = max(
            max(float(np.max(np.abs(a - b))) for a, b in zip(new_deltas, deltas)),
            abs(new_sigma**2 - sigma**2),
        )
        deltas, sigma = new_deltas, new_sigma
        if change < config.tolerance:
            converged = True
            break
    ll, post = e_step(sigma, deltas)
    trace.append(ll)
    if not np.isfinite(ll):
        raise EstimationError("marginal log-likelihood is not finite")
    latent = LatentDistribution(variance=sigma**2)
    grid = QuadratureGrid(sigma * z, zw)
    items = [PcmItemParams(item, d) for item, d in zip(mat.items, deltas)]
    return PcmFit(items, latent, ll, it, converged, post, grid, prepared, trace, config)


# -- abilities ---------------------------------------------------------------


@dataclass(frozen=True)
class PersonAbility:
    respondent_id: str
    theta: float
    psd: float


def person_posteriors(fit: PcmFit, matrix: Optional[ResponseMatrix] = None) -> np.ndarray:
    mat = fit.matrix if matrix is None else fit.align(matrix)
    empty = [p for p, row in zip(mat.persons, mat.observed) if not row.any()]
    if empty:
        raise ValidationError(f"persons without responses: {', '.join(map(str, empty))}")
    width = max(p.m for p in fit.items) + 1
    table = _log_prob_table(fit.grid.nodes, [p.deltas for p in fit.items], width)
    a = _node_loglik(_one_hot(mat.data, width), table) + fit.grid.log_weights
    return np.exp(a - logsumexp(a, axis=1, keepdims=True))


def eap_abilities(fit: PcmFit, matrix: Optional[ResponseMatrix] = None, allow_unconverged: bool = False) -> list:
    """Posterior mean and SD of ability for each person on the fit's grid."""
    if not fit.converged and not allow_unconverged:
        raise EstimationError("fit did not converge; pass allow_unconverged=True to override")
    mat = fit.matrix if matrix is None else matrix
    post = person_posteriors(fit, matrix)
    nodes = fit.grid.nodes
    theta = post @ nodes
    var = np.maximum(post @ (nodes * nodes) - theta * theta, 0.0)
    return [PersonAbility(str(p), float(t), float(math.sqrt(v))) for p, t, v in zip(mat.persons, theta, var)]
