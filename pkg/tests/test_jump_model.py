from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st
from sklearn.cluster import KMeans

from regime_allocator.domain.models import JumpModelFit, JumpPenalty, count_transitions
from regime_allocator.services import jump_model_service
from regime_allocator.services.jump_model_service import (
    InsufficientDistinctRowsError,
    JumpModelService,
    JumpModelValidationError,
    estimate_transitions,
    fit,
    forward_online_states,
    jump_objective,
    kmeanspp_init,
    online_infer,
    optimal_states_dp,
    relabel_by_volatility,
    summarize_regimes,
)
from regime_allocator.utils.config import get_settings


def _two_clusters(n_per_cluster: int = 50, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    low = rng.normal(0.0, 0.05, size=n_per_cluster)
    high = rng.normal(5.0, 0.05, size=n_per_cluster)
    return np.concatenate((low, high))[:, None]


def _brute_force(features: np.ndarray, centroids: np.ndarray, penalty: float) -> float:
    n_states = centroids.shape[0]
    return min(
        jump_objective(features, centroids, sequence, penalty)
        for sequence in itertools.product(range(n_states), repeat=features.shape[0])
    )


def _lloyd(features: np.ndarray, centroids: np.ndarray, max_iter: int = 300) -> float:
    labels = None
    for _ in range(max_iter):
        distances = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = distances.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = np.array([features[labels == k].mean(axis=0) for k in range(centroids.shape[0])])
    return 0.5 * float(((features - centroids[labels]) ** 2).sum())


# --- DP ---

def test_single_state_has_no_jumps():
    features = np.random.default_rng(0).normal(size=(20, 2))
    centroids = features.mean(axis=0, keepdims=True)
    states, objective = optimal_states_dp(features, centroids, 10.0)
    assert np.all(states == 0)
    assert objective == pytest.approx(0.5 * ((features - centroids) ** 2).sum())


def test_two_separated_clusters_split_at_the_boundary():
    result = fit(_two_clusters(), n_states=2, jump_penalty=1.0, n_restarts=3, seed=0)
    np.testing.assert_array_equal(result.states, np.repeat([0, 1], 50))


def test_zero_penalty_assigns_nearest_centroid():
    features = np.random.default_rng(2).normal(size=(40, 3))
    centroids = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [-1.0, 0.5, 0.0]])
    states, _ = optimal_states_dp(features, centroids, 0.0)
    nearest = ((features[:, None, :] - centroids[None]) ** 2).sum(axis=2).argmin(axis=1)
    np.testing.assert_array_equal(states, nearest)


def test_huge_penalty_keeps_one_state():
    features = np.random.default_rng(3).normal(size=(30, 2))
    centroids = np.array([[0.0, 0.0], [2.0, 2.0]])
    states, _ = optimal_states_dp(features, centroids, 1e9)
    assert np.unique(states).size == 1


@hypothesis_settings(max_examples=30, deadline=None)
@given(
    st.integers(min_value=1, max_value=7),
    st.integers(min_value=0, max_value=10_000),
    st.floats(min_value=0.0, max_value=5.0),
)
def test_dp_matches_exhaustive_enumeration(length, seed, penalty):
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(length, 2))
    centroids = rng.normal(size=(2, 2))
    _, objective = optimal_states_dp(features, centroids, penalty)
    assert objective == pytest.approx(_brute_force(features, centroids, penalty), abs=1e-10)


@pytest.mark.parametrize("penalty", [0.0, 0.1, 1.0, 10.0])
@pytest.mark.parametrize("n_states", [1, 2, 3])
def test_dp_matches_exhaustive_enumeration_over_states_and_penalties(n_states, penalty):
    rng = np.random.default_rng(100 * n_states + int(10 * penalty))
    for length in (1, 2, 4, 6):
        features = rng.normal(size=(length, 2))
        centroids = rng.normal(size=(n_states, 2))
        states, objective = optimal_states_dp(features, centroids, penalty)
        assert objective == pytest.approx(_brute_force(features, centroids, penalty), abs=1e-10)
        assert objective == pytest.approx(jump_objective(features, centroids, states, penalty))


def test_jump_count_is_non_increasing_along_a_penalty_ladder():
    rng = np.random.default_rng(13)
    for ladder in range(10):
        n_states = 2 + ladder % 2
        features = rng.normal(size=(150, 2))
        centroids = rng.normal(size=(n_states, 2))
        rungs = np.sort(rng.uniform(0.0, 20.0, size=8))
        jumps = [count_transitions(optimal_states_dp(features, centroids, penalty)[0]) for penalty in rungs]
        assert all(later <= earlier for earlier, later in zip(jumps, jumps[1:])), (ladder, jumps)


@pytest.mark.parametrize("scale", [0.5, 2.0, 4.0])
def test_scaling_features_rescales_the_penalty(scale):
    rng = np.random.default_rng(14)
    features = rng.normal(size=(80, 3))
    centroids = rng.normal(size=(3, 3))
    scaled_states, scaled_objective = optimal_states_dp(scale * features, scale * centroids, 2.0)
    states, objective = optimal_states_dp(features, centroids, 2.0 / scale**2)
    np.testing.assert_array_equal(scaled_states, states)
    assert scaled_objective == pytest.approx(scale**2 * objective)


# --- online inference ---

def test_forward_online_states_match_online_infer_per_day():
    rng = np.random.default_rng(4)
    features = np.concatenate((rng.normal(0.0, 1.0, size=(40, 2)), rng.normal(3.0, 1.0, size=(40, 2))))
    centroids = np.array([[0.0, 0.0], [3.0, 3.0]])
    online = forward_online_states(features, centroids, 2.0)
    expected = [online_infer(features[: t + 1], centroids, 2.0) for t in range(features.shape[0])]
    np.testing.assert_array_equal(online, expected)


def test_online_state_ignores_future_rows():
    rng = np.random.default_rng(6)
    features = rng.normal(size=(60, 2))
    centroids = np.array([[0.0, 0.0], [1.0, 1.0]])
    shocked = features.copy()
    shocked[40:] += 10.0
    np.testing.assert_array_equal(
        forward_online_states(features, centroids, 1.0)[:40],
        forward_online_states(shocked, centroids, 1.0)[:40],
    )


def test_online_infer_switches_on_a_decisive_last_row():
    centroids = np.array([[-1.0], [1.0]])
    window = np.array([[-1.0], [-0.95], [-1.05], [-1.0], [1.2]])
    assert online_infer(window, centroids, 0.01) == 1
    assert online_infer(window[:-1], centroids, 0.01) == 0


# --- seeding ---

def test_kmeanspp_single_state_returns_a_data_row():
    features = np.random.default_rng(15).normal(size=(25, 2))
    first = kmeanspp_init(features, 1, seed=4)
    assert first.shape == (1, 2)
    assert any(np.array_equal(first[0], row) for row in features)
    np.testing.assert_array_equal(kmeanspp_init(features, 1, seed=4), first)


def test_kmeanspp_spreads_over_separated_clusters():
    features = _two_clusters(50, seed=16)
    for seed in range(100):
        centers = np.sort(kmeanspp_init(features, 2, seed)[:, 0])
        assert centers[0] < 2.5 < centers[1], seed


def test_kmeanspp_with_one_state_per_row_returns_every_row():
    features = np.random.default_rng(17).normal(size=(6, 2))
    centers = kmeanspp_init(features, 6, seed=0)
    assert sorted(map(tuple, centers)) == sorted(map(tuple, features))


# --- fitting ---

def test_zero_penalty_fit_equals_kmeans_from_same_seeds():
    rng = np.random.default_rng(7)
    features = np.concatenate(
        (
            rng.normal((0.0, 0.0), 0.3, size=(60, 2)),
            rng.normal((4.0, 0.0), 0.3, size=(60, 2)),
            rng.normal((0.0, 4.0), 0.3, size=(60, 2)),
        )
    )
    restarts = 4
    result = fit(features, n_states=3, jump_penalty=0.0, n_restarts=restarts, seed=10)
    best_lloyd = min(_lloyd(features, kmeanspp_init(features, 3, 10 + r)) for r in range(restarts))
    assert result.objective <= best_lloyd + 1e-9
    assert result.objective == pytest.approx(best_lloyd, rel=1e-10)

    single = fit(features, n_states=3, jump_penalty=0.0, n_restarts=1, seed=10)
    kmeans = KMeans(
        n_clusters=3,
        init=kmeanspp_init(features, 3, 10),
        n_init=1,
        max_iter=300,
        tol=0.0,
    ).fit(features)
    assert single.objective == pytest.approx(kmeans.inertia_ / 2.0, rel=1e-6)


def test_objective_is_non_increasing_across_iterations():
    features = np.random.default_rng(8).normal(size=(300, 4))
    result = fit(features, n_states=2, jump_penalty=5.0, n_restarts=3, seed=1)
    path = np.asarray(result.objective_path)
    assert np.all(np.diff(path) <= 1e-9 * np.maximum(1.0, np.abs(path[:-1])))
    assert result.objective == pytest.approx(jump_objective(features, result.centroids, result.states, 5.0))
    assert result.n_iter >= 1


def test_fit_is_deterministic_for_a_seed():
    features = np.random.default_rng(9).normal(size=(200, 3))
    first = fit(features, n_states=2, jump_penalty=3.0, n_restarts=4, seed=42)
    second = fit(features, n_states=2, jump_penalty=3.0, n_restarts=4, seed=42)
    np.testing.assert_array_equal(first.states, second.states)
    np.testing.assert_array_equal(first.centroids, second.centroids)
    assert first.objective == second.objective


def test_transitions_decrease_with_penalty():
    rng = np.random.default_rng(10)
    features = rng.normal(size=(400, 2))
    low = fit(features, n_states=2, jump_penalty=0.5, n_restarts=3, seed=0)
    high = fit(features, n_states=2, jump_penalty=50.0, n_restarts=3, seed=0)
    assert high.n_transitions <= low.n_transitions


def test_identical_rows_raise_insufficient_distinct_rows():
    with pytest.raises(InsufficientDistinctRowsError):
        fit(np.zeros((30, 2)), n_states=2, jump_penalty=1.0, n_restarts=2, seed=0)


def test_too_few_rows_raise():
    with pytest.raises(JumpModelValidationError):
        fit(np.zeros((1, 2)), n_states=2, jump_penalty=1.0)


def test_huge_penalty_fit_is_degenerate(caplog):
    result = fit(_two_clusters(), n_states=2, jump_penalty=1e9, n_restarts=2, seed=0)
    assert result.degenerate
    assert result.n_transitions == 0
    assert any("Degenerate jump model fit" in record.message for record in caplog.records)


def test_separated_fit_logs_no_degenerate_warning(caplog):
    result = fit(_two_clusters(), n_states=2, jump_penalty=1.0, n_restarts=3, seed=0)
    assert not result.degenerate
    assert not any("Degenerate jump model fit" in record.message for record in caplog.records)


def test_degenerate_warning_requires_every_restart_to_collapse(monkeypatch, caplog):
    features = _two_clusters(5)
    populated = JumpModelFit(
        centroids=np.array([[0.0], [5.0]]),
        jump_penalty=JumpPenalty(1.0),
        states=np.repeat([0, 1], 5),
        objective=3.0,
        n_restarts_used=1,
        converged=True,
    )
    collapsed = replace(populated, centroids=np.array([[2.5], [9.0]]), states=np.zeros(10, dtype=int), objective=2.0)
    restarts = iter([populated, collapsed])
    monkeypatch.setattr(jump_model_service, "_coordinate_descent", lambda *args: next(restarts))

    result = fit(features, n_states=2, jump_penalty=1.0, n_restarts=2, seed=0)

    assert result.objective == 2.0
    assert result.degenerate
    assert not any("Degenerate jump model fit" in record.message for record in caplog.records)


def test_negative_penalty_rejected():
    with pytest.raises(ValueError):
        JumpPenalty(-1.0)
    with pytest.raises(JumpModelValidationError):
        optimal_states_dp(np.zeros((3, 1)), np.zeros((1, 1)), -0.5)


# --- relabeling ---

def test_relabel_puts_volatile_state_last_and_is_idempotent():
    rng = np.random.default_rng(12)
    features = _two_clusters(100, seed=12)
    calm_first = np.concatenate((rng.normal(0.0, 0.03, size=100), rng.normal(0.0, 0.005, size=100)))
    result = fit(features, n_states=2, jump_penalty=1.0, n_restarts=2, seed=0, raw_returns=calm_first)

    assert result.states[0] == 1
    assert result.states[-1] == 0
    again = relabel_by_volatility(result, calm_first)
    np.testing.assert_array_equal(again.states, result.states)
    np.testing.assert_array_equal(again.centroids, result.centroids)
    assert result.objective == pytest.approx(jump_objective(features, result.centroids, result.states, 1.0))


def test_relabel_swaps_a_volatile_first_state():
    fitted = JumpModelFit(
        centroids=np.array([[3.0], [-1.0]]),
        jump_penalty=JumpPenalty(1.0),
        states=np.array([0, 0, 0, 1, 1, 1]),
        objective=0.0,
        n_restarts_used=1,
        converged=True,
    )
    relabeled = relabel_by_volatility(fitted, [0.05, -0.05, 0.04, 0.001, -0.001, 0.0])
    np.testing.assert_array_equal(relabeled.states, [1, 1, 1, 0, 0, 0])
    np.testing.assert_array_equal(relabeled.centroids, [[-1.0], [3.0]])


def test_relabel_leaves_a_single_populated_state_alone(caplog):
    fitted = JumpModelFit(
        centroids=np.array([[0.0], [1.0]]),
        jump_penalty=JumpPenalty(1e9),
        states=np.ones(8, dtype=int),
        objective=0.0,
        n_restarts_used=1,
        converged=True,
    )
    assert relabel_by_volatility(fitted, np.linspace(-0.02, 0.02, 8)) is fitted
    assert any("Relabel skipped" in record.message for record in caplog.records)


def test_relabel_sends_empty_states_last():
    fitted = JumpModelFit(
        centroids=np.array([[9.0], [0.0], [2.0]]),
        jump_penalty=JumpPenalty(1.0),
        states=np.array([1, 1, 1, 2, 2, 2]),
        objective=0.0,
        n_restarts_used=1,
        converged=True,
    )
    relabeled = relabel_by_volatility(fitted, [0.001, -0.001, 0.0, 0.03, -0.03, 0.02])
    np.testing.assert_array_equal(relabeled.states, [0, 0, 0, 1, 1, 1])
    np.testing.assert_array_equal(relabeled.centroids, [[0.0], [2.0], [9.0]])


# --- transitions and summaries ---

def test_estimate_transitions_counts_and_identity_rows():
    estimate = estimate_transitions([0, 0, 1, 1, 1, 0], n_states=3)
    np.testing.assert_allclose(estimate.matrix[0], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(estimate.matrix[1], [1.0 / 3.0, 2.0 / 3.0, 0.0])
    np.testing.assert_allclose(estimate.matrix[2], [0.0, 0.0, 1.0])


def test_summarize_regimes_reports_share_and_vol():
    summary = summarize_regimes([0, 0, 1, 1], [0.01, -0.01, 0.02, 0.02], n_states=2, trading_days_per_year=252)
    assert summary[0]["n_days"] == 2
    assert summary[0]["fraction"] == 0.5
    assert summary[0]["ann_vol"] == pytest.approx(0.01 * np.sqrt(252))
    assert summary[1]["mean_daily_return"] == pytest.approx(0.02)
    assert summary[1]["ann_vol"] == pytest.approx(0.0)


def test_service_uses_configured_restarts():
    settings = replace(get_settings(), jm_n_restarts=2, random_seed=5)
    result = JumpModelService(settings).fit(_two_clusters(), 1.0)
    assert result.n_restarts_used == 2
    assert result.seed == 5
