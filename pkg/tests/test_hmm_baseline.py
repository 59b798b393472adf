from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st
from scipy.stats import norm

from regime_allocator.domain.models import GaussianHmm, SynthSpec, count_transitions
from regime_allocator.services.hmm_service import (
    HmmService,
    HmmValidationError,
    baum_welch_fit,
    filtered_states,
    median_filter,
    online_viterbi_states,
    smoothed_states,
    viterbi_states,
)
from regime_allocator.services.synth_service import simulate
from regime_allocator.utils.config import get_settings


def _model(means=(0.0, 0.0), stds=(0.01, 0.03), stay=0.95) -> GaussianHmm:
    return GaussianHmm(
        initial=np.array([0.5, 0.5]),
        transitions=np.array([[stay, 1.0 - stay], [1.0 - stay, stay]]),
        means=np.asarray(means),
        stds=np.asarray(stds),
        log_likelihood=0.0,
    )


def _path_weight(model: GaussianHmm, returns: np.ndarray, path) -> float:
    weight = model.initial[path[0]] * norm.pdf(returns[0], model.means[path[0]], model.stds[path[0]])
    for t in range(1, returns.size):
        weight *= model.transitions[path[t - 1], path[t]]
        weight *= norm.pdf(returns[t], model.means[path[t]], model.stds[path[t]])
    return weight


def _synthetic_returns(n_days: int = 4000, seed: int = 1) -> tuple[np.ndarray, np.ndarray]:
    dataset, states = simulate(
        SynthSpec(
            n_days=n_days,
            state_means=(0.0005, -0.0008),
            state_stds=(0.007, 0.02),
            transitions=((0.99, 0.01), (0.01, 0.99)),
            seed=seed,
        )
    )
    return np.asarray(dataset.log_returns.values), states


# --- smoothing ---

def test_smoothed_probabilities_match_path_enumeration():
    returns = np.array([0.001, -0.02, 0.004, 0.03, -0.001, 0.0, -0.015])
    model = _model(means=(0.0005, -0.001), stds=(0.008, 0.025), stay=0.9)

    _, probabilities = smoothed_states(model, returns)

    paths = list(itertools.product(range(2), repeat=returns.size))
    weights = np.array([_path_weight(model, returns, path) for path in paths])
    expected = np.zeros((returns.size, 2))
    for path, weight in zip(paths, weights):
        for t, state in enumerate(path):
            expected[t, state] += weight
    expected /= weights.sum()
    np.testing.assert_allclose(probabilities, expected, atol=1e-10)


def test_probability_rows_sum_to_one():
    returns, _ = _synthetic_returns(500)
    _, probabilities = smoothed_states(_model(), returns)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, atol=1e-10)


def test_extreme_return_lands_in_volatile_state():
    returns = np.array([0.0005, -0.0003, -0.10, 0.0002, 0.0001])
    states, probabilities = smoothed_states(_model(stds=(0.001, 0.05), stay=0.5), returns)
    assert states[2] == 1
    assert probabilities[2, 1] > 0.999


def test_identical_states_are_uniform():
    returns = np.random.default_rng(0).normal(0.0, 0.01, size=50)
    states, probabilities = smoothed_states(_model(stds=(0.01, 0.01)), returns)
    np.testing.assert_allclose(probabilities, 0.5, atol=1e-12)
    assert np.all(states == 0)


def test_single_state_model_is_certain():
    model = GaussianHmm(
        initial=np.array([1.0]),
        transitions=np.array([[1.0]]),
        means=np.array([0.0]),
        stds=np.array([0.01]),
        log_likelihood=0.0,
    )
    states, probabilities = smoothed_states(model, np.random.default_rng(1).normal(0.0, 0.01, size=30))
    assert np.all(states == 0)
    np.testing.assert_allclose(probabilities, 1.0)


def test_filtered_state_equals_last_smoothed_state_of_each_prefix():
    returns, _ = _synthetic_returns(120, seed=3)
    model = _model(stds=(0.007, 0.02), stay=0.99)
    filtered = filtered_states(model, returns)
    for t in (0, 10, 57, 119):
        smoothed, _ = smoothed_states(model, returns[: t + 1])
        assert filtered[t] == smoothed[-1]


def test_online_viterbi_equals_last_viterbi_state_of_each_prefix():
    returns, _ = _synthetic_returns(80, seed=4)
    model = _model(stds=(0.007, 0.02), stay=0.99)
    online = online_viterbi_states(model, returns)
    for t in (0, 5, 40, 79):
        assert online[t] == viterbi_states(model, returns[: t + 1])[-1]


# --- estimation ---

def test_single_state_fit_is_closed_form():
    returns = np.random.default_rng(2).normal(0.001, 0.02, size=200)
    model = baum_welch_fit(returns, n_states=1, n_restarts=1, seed=0)
    assert model.means[0] == pytest.approx(returns.mean(), abs=1e-12)
    assert model.stds[0] == pytest.approx(returns.std(), rel=1e-10)


def test_two_state_fit_recovers_volatilities():
    returns, _ = _synthetic_returns(4000, seed=1)
    model = baum_welch_fit(returns, n_states=2, n_restarts=3, seed=0)
    assert model.stds[0] == pytest.approx(0.007, rel=0.15)
    assert model.stds[1] == pytest.approx(0.02, rel=0.15)
    assert model.stds[1] >= model.stds[0]


def test_log_likelihood_never_decreases():
    returns, _ = _synthetic_returns(1500, seed=6)
    model = baum_welch_fit(returns, n_states=2, n_restarts=2, seed=3)
    path = np.asarray(model.log_likelihood_path)
    assert path.size >= 2
    assert np.all(np.diff(path) >= -1e-9 * np.maximum(1.0, np.abs(path[:-1])))
    assert model.log_likelihood == path[-1]


def test_short_series_rejected():
    with pytest.raises(HmmValidationError):
        baum_welch_fit(np.zeros(19), n_states=2)


def test_constant_series_hits_variance_floor(caplog):
    model = baum_welch_fit(np.zeros(40), n_states=2, n_restarts=1, seed=0, max_iter=20, std_floor=1e-8)
    assert np.all(model.stds >= 1e-8)
    assert any("variance floor" in record.message for record in caplog.records)


def test_service_fit_and_decode_use_settings():
    settings = replace(get_settings(), hmm_n_restarts=2, hmm_decoder="viterbi", random_seed=4)
    service = HmmService(settings)
    returns, _ = _synthetic_returns(600, seed=8)
    model = service.fit(returns)
    assert model.n_restarts_used == 2
    np.testing.assert_array_equal(service.decode(model, returns), viterbi_states(model, returns))


# --- median filter ---

@pytest.mark.parametrize(
    "labels, window, expected",
    [
        ([0, 0, 1, 0, 0], 3, [0, 0, 0, 0, 0]),
        ([0, 1, 1, 1, 0], 3, [0, 0, 1, 1, 1]),
        ([1, 0, 1, 1, 0, 0], 1, [1, 0, 1, 1, 0, 0]),
    ],
)
def test_median_filter_examples(labels, window, expected):
    assert median_filter(labels, window).tolist() == expected


@pytest.mark.parametrize("window", [0, 2, -3])
def test_median_filter_rejects_even_or_non_positive_window(window):
    with pytest.raises(HmmValidationError):
        median_filter([0, 1], window)


@hypothesis_settings(max_examples=80, deadline=None)
@given(
    st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=60),
    st.sampled_from([1, 3, 5, 7]),
)
def test_median_filter_is_causal_and_never_adds_transitions(labels, window):
    filtered = median_filter(labels, window)
    assert filtered.size == len(labels)
    assert count_transitions(filtered) <= count_transitions(labels)
    cut = len(labels) // 2 + 1
    np.testing.assert_array_equal(median_filter(labels[:cut], window), filtered[:cut])
