"""Synthetic PCM data with known truth, and reference estimators to check the engine against."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .pcm import (
    FitConfig,
    LatentDistribution,
    PcmItemParams,
    eap_abilities,
    fit_pcm,
    log_category_probabilities,
    make_grid,
    marginal_log_likelihood,
    standard_grid,
)
from .rng import check_seed, substream
from .scoring import ResponseMatrix


@dataclass(frozen=True)
class SimConfig:
    n_persons: int
    items: tuple
    seed: int = 0
    variance: float = 1.0
    thetas: Optional[tuple] = None  # fixed abilities; overrides the normal draw

    def __post_init__(self):
        check_seed(self.seed)
        if self.n_persons < 1:
            raise ValidationError("n_persons must be at least 1")
        if not self.variance > 0:
            raise ValidationError("variance must be positive")
        if self.thetas is not None and len(self.thetas) != self.n_persons:
            raise ValidationError("fixed thetas must have one value per person")


def random_items(n_items: int, seed: int, m: int = 2, low: float = -1.5, high: float = 1.5) -> tuple:
    rng = substream(seed, "item_params")
    return tuple(PcmItemParams(f"i{j + 1:02d}", rng.uniform(low, high, size=m)) for j in range(n_items))


def simulate_responses(config: SimConfig) -> tuple:
    """Draw a response matrix by inverse CDF; returns ``(matrix, true_thetas)``."""
    if config.thetas is not None:
        thetas = np.asarray(config.thetas, dtype=float)
    else:
        thetas = substream(config.seed, "theta").normal(0.0, math.sqrt(config.variance), config.n_persons)
    u = substream(config.seed, "responses").random((config.n_persons, len(config.items)))
    data = np.empty((config.n_persons, len(config.items)), dtype=np.int64)
    for j, params in enumerate(config.items):
        cdf = np.cumsum(np.exp(log_category_probabilities(thetas, params.deltas)), axis=1)
        data[:, j] = np.minimum((u[:, j : j + 1] > cdf).sum(axis=1), params.m)
    persons = tuple(f"p{n + 1:04d}" for n in range(config.n_persons))
    matrix = ResponseMatrix(persons, tuple(p.item for p in config.items), data, [p.m for p in config.items])
    return matrix, thetas


# -- brute-force oracle ------------------------------------------------------


def _patterns(matrix: ResponseMatrix) -> tuple:
    """Distinct response rows and their counts (row order independent)."""
    rows, counts = np.unique(matrix.data, axis=0, return_counts=True)
    return ResponseMatrix(tuple(f"r{i}" for i in range(len(rows))), matrix.items, rows, matrix.m), counts


def _lattice_block_search(nodes, log_w, rest, x, lattice_pairs, counts):
    """Score every candidate step vector for one item; return the best index."""
    lp = log_category_probabilities(nodes[None, :], lattice_pairs[:, None, :])  # (C, Q, 3)
    best_i, best = -1, -np.inf
    for start in range(0, len(lattice_pairs), 2048):
        chunk = lp[start : start + 2048][:, :, x]  # (C, Q, P)
        a = chunk + (rest + log_w[:, None])[None]  # rest is (Q, P)
        ll = logsumexp(a, axis=1) @ counts
        k = int(np.argmax(ll))
        if ll[k] > best:
            best, best_i = float(ll[k]), start + k
    return best_i, best


def brute_force_mml(matrix: ResponseMatrix, grid=None, delta_grid=None, variances=None,
                    n_nodes: int = 61, span: float = 5.0, max_items: int = 4) -> dict:
    """Lattice search for the marginal ML step parameters of a small matrix.

    Each item's two steps are scanned jointly over the full lattice (default
    step 0.05 on [-3, 3]), cycling over items until no coordinate block moves.
    The latent SD is profiled over a coarse grid, then a fine grid around the
    coarse winner. The returned point is re-scored with the engine's
    :func:`marginal_log_likelihood` so both optimize the identical function.
    """
    n_items = matrix.shape[1]
    if n_items > max_items:
        raise ValidationError(f"brute force search limited to {max_items} items, got {n_items}")
    if np.any(matrix.m != 2):
        raise ValidationError("brute force search supports m=2 items only")
    if np.any(~matrix.observed):
        raise ValidationError("brute force search needs complete data")
    if delta_grid is None:
        delta_grid = np.round(np.arange(-3.0, 3.0 + 1e-9, 0.05), 10)
    delta_grid = np.asarray(delta_grid, dtype=float)
    pairs = np.array(list(itertools.product(delta_grid, delta_grid)))
    step = float(np.min(np.diff(delta_grid)))
    if grid is not None:
        z, zw = np.asarray(grid[0], float), np.asarray(grid[1], float)
    else:
        z, zw = standard_grid(n_nodes, span)
    log_w = np.log(zw / zw.sum())
    pat, counts = _patterns(matrix)
    x = pat.data  # (P, I)
    counts = counts.astype(float)

    def snap(v):
        return delta_grid[np.argmin(np.abs(delta_grid - v))]

    def search(sigma, start, full_scan):
        nodes = sigma * z
        cur = [d.copy() for d in start]
        full = [full_scan] * n_items
        best = -np.inf
        for _sweep in range(50):
            moved = False
            for i in range(n_items):
                rest = np.zeros((len(nodes), len(x)))
                for j in range(n_items):
                    if j != i:
                        lp = log_category_probabilities(nodes, cur[j])  # (Q, 3)
                        rest += lp[:, x[:, j]]
                if full[i]:
                    cand = pairs
                    full[i] = False
                else:
                    lo = np.abs(delta_grid[:, None] - cur[i][None, :]) <= 8 * step + 1e-9
                    cand = np.array(list(itertools.product(delta_grid[lo[:, 0]], delta_grid[lo[:, 1]])))
                k, val = _lattice_block_search(nodes, log_w, rest, x[:, i], cand, counts)
                if not np.array_equal(cand[k], cur[i]):
                    moved = True
                    cur[i] = cand[k].copy()
                best = val
            if not moved:
                break
        return cur, best

    if variances is not None:
        sigmas = [math.sqrt(v) for v in variances]
        refine = False
    else:
        sigmas = list(np.round(np.arange(0.1, 3.0 + 1e-9, 0.1), 10))
        refine = True
    start = []
    for j in range(n_items):
        col = x[:, j]
        c = np.array([counts[col == k].sum() for k in range(3)]) + 0.5
        start.append(np.array([snap(math.log(c[0] / c[1])), snap(math.log(c[1] / c[2]))]))
    results = {}
    state = start
    for n, s in enumerate(sigmas):
        state, val = search(s, state, n == 0)
        results[s] = (val, [d.copy() for d in state])
    if refine:
        s0 = max(results, key=lambda s: results[s][0])
        state = results[s0][1]
        for s in np.round(np.arange(max(s0 - 0.1, 0.01), s0 + 0.1 + 1e-9, 0.005), 10):
            state, val = search(float(s), state, False)
            results[float(s)] = (val, [d.copy() for d in state])
    s_best = max(results, key=lambda s: results[s][0])
    deltas = results[s_best][1]
    params = [PcmItemParams(it, d) for it, d in zip(matrix.items, deltas)]
    latent = LatentDistribution(variance=s_best**2)
    ll = marginal_log_likelihood(matrix, params, latent, make_grid(latent, len(z), float(np.max(np.abs(z)))))
    return {"items": params, "variance": s_best**2, "log_likelihood": ll, "lattice_step": step}


# -- recovery ----------------------------------------------------------------


def _corr(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def recovery_experiment(config: SimConfig, replications: int = 1, fit_config: FitConfig = FitConfig()) -> dict:
    """Simulate, refit, and summarise bias/RMSE/correlation against the truth."""
    if replications < 1:
        raise ValidationError("replications must be at least 1")
    true = np.concatenate([p.deltas for p in config.items])
    est_all, reps = [], []
    for r in range(replications):
        sub_seed = int(substream(config.seed, "replication", r).integers(0, 2**63))
        cfg = SimConfig(config.n_persons, config.items, sub_seed, config.variance, config.thetas)
        matrix, thetas = simulate_responses(cfg)
        fit = fit_pcm(matrix, fit_config)
        est = np.concatenate([p.deltas for p in fit.items])
        abil = eap_abilities(fit, allow_unconverged=True)
        eap = np.array([a.theta for a in abil])
        trace = np.array(fit.trace)
        est_all.append(est)
        reps.append(
            {
                "replication": r,
                "seed": sub_seed,
                "delta_correlation": _corr(est, true),
                "delta_rmse": float(np.sqrt(np.mean((est - true) ** 2))),
                "delta_mean_bias": float(np.mean(est - true)),
                "theta_correlation": _corr(eap, thetas),
                "latent_variance": fit.latent.variance,
                "iterations": fit.iterations,
                "converged": fit.converged,
                "min_loglik_increment": float(np.min(np.diff(trace))) if len(trace) > 1 else 0.0,
            }
        )
    est_all = np.array(est_all)
    err = est_all - true[None, :]
    labels = [f"{p.item}.{k + 1}" for p in config.items for k in range(p.m)]
    per_param = [
        {
            "parameter": lab,
            "true": float(true[j]),
            "mean_estimate": float(est_all[:, j].mean()),
            "bias": float(err[:, j].mean()),
            "rmse": float(np.sqrt(np.mean(err[:, j] ** 2))),
        }
        for j, lab in enumerate(labels)
    ]
    summary = {
        "delta_correlation": float(np.mean([r["delta_correlation"] for r in reps])),
        "delta_rmse": float(np.sqrt(np.mean(err**2))),
        "delta_mean_bias": float(err.mean()),
        "theta_correlation": float(np.mean([r["theta_correlation"] for r in reps])),
    }
    return {
        "n_persons": config.n_persons,
        "n_items": len(config.items),
        "seed": config.seed,
        "replications": replications,
        "summary": summary,
        "per_replication": reps,
        "per_parameter": per_param,
    }


def recovery_markdown(report: dict) -> str:
    s = report["summary"]
    lines = [
        "# Parameter recovery",
        "",
        f"{report['n_persons']} persons x {report['n_items']} items, seed {report['seed']}, "
        f"{report['replications']} replication(s).",
        "",
        "| statistic | value |",
        "|---|---|",
        f"| step correlation | {s['delta_correlation']:.4f} |",
        f"| step RMSE | {s['delta_rmse']:.4f} |",
        f"| mean step bias | {s['delta_mean_bias']:.4f} |",
        f"| EAP-truth correlation | {s['theta_correlation']:.4f} |",
        "",
        "| parameter | true | mean estimate | bias | RMSE |",
        "|---|---|---|---|---|",
    ]
    for p in report["per_parameter"]:
        lines.append(
            f"| {p['parameter']} | {p['true']:.4f} | {p['mean_estimate']:.4f} | {p['bias']:.4f} | {p['rmse']:.4f} |"
        )
    return "\n".join(lines) + "\n"


def recovery_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
