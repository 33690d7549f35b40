import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adqc.errors import DegenerateItemError, EstimationError, ValidationError
from adqc.pcm import (
    FitConfig,
    LatentDistribution,
    PcmItemParams,
    QuadratureGrid,
    category_probabilities,
    eap_abilities,
    fit_from_json,
    fit_pcm,
    make_grid,
    marginal_log_likelihood,
    standard_grid,
    thurstonian_thresholds,
)
from adqc.scoring import MISSING, ResponseMatrix
from adqc.simulate import SimConfig, random_items, simulate_responses

finite = st.floats(-6, 6, allow_nan=False)


def masters(theta, deltas):
    """Direct evaluation: numerators exp(sum_{k<=x}(theta - delta_k))."""
    nums = [math.exp(sum(theta - d for d in deltas[:x])) for x in range(len(deltas) + 1)]
    total = sum(nums)
    return [n / total for n in nums]


def p_at_least(theta, deltas, k):
    return sum(masters(theta, deltas)[k:])


class TestCategoryProbabilities:
    def test_uniform_at_zero(self):
        np.testing.assert_allclose(category_probabilities(0.0, PcmItemParams("i", (0.0, 0.0))), [1 / 3] * 3, atol=1e-15)

    def test_theta_one(self):
        p = category_probabilities(1.0, PcmItemParams("i", (0.0, 0.0)))
        e = math.e
        np.testing.assert_allclose(p, np.array([1, e, e * e]) / (1 + e + e * e), atol=1e-15)
        np.testing.assert_allclose(p, [0.09003, 0.24473, 0.66524], atol=1e-5)

    @given(finite, finite)
    def test_translation_invariance(self, c, t):
        a = category_probabilities(c + t, PcmItemParams("i", (c, c)))
        b = category_probabilities(t, PcmItemParams("i", (0.0, 0.0)))
        np.testing.assert_allclose(a, b, atol=1e-12)

    @given(finite, st.lists(finite, min_size=1, max_size=5))
    def test_normalized_and_matches_direct(self, theta, deltas):
        p = category_probabilities(theta, PcmItemParams("i", deltas))
        assert abs(p.sum() - 1) <= 1e-12
        np.testing.assert_allclose(p, masters(theta, deltas), rtol=1e-9, atol=1e-15)

    def test_extreme_values_stay_finite(self):
        p = category_probabilities(400.0, PcmItemParams("i", (-300.0, 0.0)))
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12

    @pytest.mark.parametrize("theta,deltas", [(float("nan"), (0, 0)), (0.0, (float("inf"), 0))])
    def test_non_finite(self, theta, deltas):
        with pytest.raises(ValidationError):
            category_probabilities(theta, deltas)


class TestThresholds:
    def test_symmetric_item(self):
        g = thurstonian_thresholds(PcmItemParams("i", (0.0, 0.0))).gammas
        closed = math.log((math.sqrt(5) - 1) / 2)
        np.testing.assert_allclose(g, [closed, -closed], atol=1e-10)
        np.testing.assert_allclose(g, [-0.48121, 0.48121], atol=1e-5)

    def test_shifted(self):
        g = thurstonian_thresholds(PcmItemParams("i", (1.0, 1.0))).gammas
        np.testing.assert_allclose(g, [0.51879, 1.48121], atol=1e-5)

    @settings(max_examples=200)
    @given(st.lists(st.floats(-4, 4), min_size=1, max_size=4))
    def test_defining_equation_and_order(self, deltas):
        gammas = thurstonian_thresholds(PcmItemParams("i", deltas)).gammas
        assert all(a <= b for a, b in zip(gammas, gammas[1:]))
        for k, g in enumerate(gammas, start=1):
            assert abs(p_at_least(g, deltas, k) - 0.5) <= 1e-8

    def test_disordered_steps_give_ordered_thresholds(self):
        g = thurstonian_thresholds(PcmItemParams("i", (1.5, -1.5))).gammas
        assert g[0] <= g[1]

    def test_far_out_item(self):
        g = thurstonian_thresholds(PcmItemParams("i", (25.0, 27.0))).gammas
        assert abs(p_at_least(g[1], (25.0, 27.0), 2) - 0.5) < 1e-8


def direct_mll(data, deltas_list, nodes, weights):
    """Loop-based reference for the marginal log-likelihood."""
    w = np.asarray(weights) / np.sum(weights)
    total = 0.0
    for row in data:
        s = 0.0
        for q, t in enumerate(nodes):
            lik = 1.0
            for x, d in zip(row, deltas_list):
                if x != MISSING:
                    lik *= masters(t, d)[x]
            s += w[q] * lik
        total += math.log(s)
    return total


class TestMarginalLikelihood:
    def test_empty_matrix(self):
        m = ResponseMatrix((), ("i",), np.zeros((0, 1), dtype=int))
        assert marginal_log_likelihood(m, [PcmItemParams("i", (0, 0))]) == 0.0

    def test_single_response_symmetric(self):
        m = ResponseMatrix(("p",), ("i",), np.array([[1]]))
        grid = make_grid(LatentDistribution(1.0))
        a = marginal_log_likelihood(m, [PcmItemParams("i", (0, 0))], grid=grid)
        flipped = QuadratureGrid(-grid.nodes[::-1], grid.weights[::-1])
        b = marginal_log_likelihood(m, [PcmItemParams("i", (0, 0))], grid=flipped)
        assert a < 0 and abs(a - b) < 1e-14

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_reference(self, seed):
        rng = np.random.default_rng(seed)
        n, k = 15, 4
        tops = rng.integers(1, 4, size=k)
        data = np.array([[rng.integers(-1, t + 1) for t in tops] for _ in range(n)])
        data[:, 0] = np.where(data[:, 0] == -1, 0, data[:, 0])
        items = [PcmItemParams(f"i{j}", rng.normal(size=t)) for j, t in enumerate(tops)]
        m = ResponseMatrix(tuple(f"p{i}" for i in range(n)), tuple(p.item for p in items), data, tops)
        latent = LatentDistribution(variance=float(rng.uniform(0.3, 2)))
        grid = make_grid(latent, 21, 4.0)
        got = marginal_log_likelihood(m, items, latent, grid)
        assert abs(got - direct_mll(data, [p.deltas for p in items], grid.nodes, grid.weights)) < 1e-10


def _small_matrix(seed=3, n=300, k=6):
    items = random_items(k, seed)
    matrix, _ = simulate_responses(SimConfig(n, items, seed))
    return matrix


class TestFit:
    def test_loglik_never_decreases(self):
        fit = fit_pcm(_small_matrix())
        assert fit.converged
        assert np.all(np.diff(fit.trace) >= -1e-9)
        assert abs(fit.trace[-1] - fit.log_likelihood) < 1e-12

    def test_mean_fixed_variance_estimated(self):
        fit = fit_pcm(_small_matrix())
        assert fit.latent.mean == 0.0
        assert 0.4 < fit.latent.variance < 2.5

    def test_degenerate_item_named(self):
        data = np.array([[0, 2], [1, 2], [2, 2], [1, 2]])
        m = ResponseMatrix(tuple("abcd"), ("ok", "flat"), data)
        with pytest.raises(DegenerateItemError, match="flat"):
            fit_pcm(m)

    def test_collapse_merges_null_category(self):
        m = _small_matrix()
        data = m.data.copy()
        data[:, 0] = np.where(data[:, 0] == 1, 2, data[:, 0])
        flat = np.full(len(data), 2)
        data = np.column_stack([data, flat])
        m2 = ResponseMatrix(m.persons, (*m.items, "flat"), data)
        with pytest.raises(DegenerateItemError):
            fit_pcm(m2)
        fit = fit_pcm(m2, FitConfig(collapse_null_categories=True))
        assert fit.items[0].m == 1
        assert "flat" in fit.data.dropped
        assert any("collapsed" in w for w in fit.warnings) and any("dropped" in w for w in fit.warnings)

    def test_missing_cells_allowed(self):
        m = _small_matrix()
        data = m.data.copy()
        data[::7, 2] = MISSING
        fit = fit_pcm(ResponseMatrix(m.persons, m.items, data))
        full = fit_pcm(m)
        assert fit.converged
        assert np.max(np.abs(fit.items[2].deltas - full.items[2].deltas)) < 0.3

    def test_person_without_responses(self):
        data = np.array([[0, 1], [2, 2], [1, 0], [-1, -1]])
        with pytest.raises(ValidationError, match="d"):
            fit_pcm(ResponseMatrix(tuple("abcd"), ("i", "j"), data))

    def test_fast_mode_agrees(self):
        m = _small_matrix()
        a = fit_pcm(m)
        b = fit_pcm(m, FitConfig(mode="fast"))
        for p, q in zip(a.items, b.items):
            assert np.max(np.abs(p.deltas - q.deltas)) <= 1e-10
        assert abs(a.latent.variance - b.latent.variance) <= 1e-10
        assert abs(a.log_likelihood - b.log_likelihood) <= 1e-10 * abs(a.log_likelihood)

    def test_repeatable(self):
        a, b = fit_pcm(_small_matrix()), fit_pcm(_small_matrix())
        assert json.dumps(a.to_json()) == json.dumps(b.to_json())

    def test_json_round_trip(self):
        m = _small_matrix()
        fit = fit_pcm(m)
        back = fit_from_json(json.loads(json.dumps(fit.to_json())), m)
        assert abs(back.log_likelihood - fit.log_likelihood) < 1e-6
        np.testing.assert_allclose(back.posterior, fit.posterior, atol=1e-8)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            fit_pcm(_small_matrix(), FitConfig(mode="turbo"))


class TestEap:
    def test_middle_category_symmetric(self):
        m = ResponseMatrix(("p",), ("i",), np.array([[1]]))
        z, w = standard_grid()
        from adqc.pcm import PcmFit, PreparedData

        fit = PcmFit([PcmItemParams("i", (0.0, 0.0))], LatentDistribution(), 0.0, 1, True, None,
                     QuadratureGrid(z, w), PreparedData(m, {}, (), ()))
        (a,) = eap_abilities(fit)
        assert abs(a.theta) < 1e-12 and a.psd > 0

    def test_equal_scores_equal_theta(self):
        fit = fit_pcm(_small_matrix())
        ab = eap_abilities(fit)
        by_score = {}
        for row, a in zip(fit.matrix.data, ab):
            by_score.setdefault(int(row.sum()), []).append(a.theta)
        assert any(len(v) > 1 for v in by_score.values())
        for v in by_score.values():
            assert max(v) - min(v) < 1e-10

    def test_all_max_above_all_min(self):
        fit = fit_pcm(_small_matrix())
        k = len(fit.items)
        extra = ResponseMatrix(("top", "bottom"), fit.matrix.items, np.array([[2] * k, [0] * k]))
        top, bottom = eap_abilities(fit, extra)
        assert top.theta > bottom.theta

    def test_unconverged_needs_override(self):
        fit = fit_pcm(_small_matrix(), FitConfig(max_iter=2))
        assert not fit.converged
        with pytest.raises(EstimationError):
            eap_abilities(fit)
        assert len(eap_abilities(fit, allow_unconverged=True)) == 300
