"""Gaussian hidden Markov model baseline on daily log returns."""

from __future__ import annotations

from typing import Any, Optional, Sequence

import numpy as np
from scipy.stats import norm

from regime_allocator.domain.models import DECODER_SMOOTHED, DECODER_VITERBI, GaussianHmm
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)

_STICKY_SELF_TRANSITION = 0.95
_MONOTONICITY_SLACK = 1e-9


class HmmError(Exception):
    """Base exception for HMM estimation and decoding failures."""


class HmmValidationError(HmmError):
    """Raised when inputs violate an HMM precondition."""


class HmmNumericalError(HmmError):
    """Raised when forward-backward produces a non-finite quantity."""


def _as_returns(returns: Any) -> np.ndarray:
    values = np.asarray(returns, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise HmmValidationError("returns must be a non-empty one-dimensional series")
    if not np.all(np.isfinite(values)):
        raise HmmValidationError("returns must be finite")
    return values


def _scaled_emissions(values: np.ndarray, means: np.ndarray, stds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Emission densities rescaled per day by their maximum, plus the log of that scale."""
    log_density = norm.logpdf(values[:, None], loc=means[None, :], scale=stds[None, :])
    offsets = log_density.max(axis=1)
    if not np.all(np.isfinite(offsets)):
        raise HmmNumericalError("emission log-density is not finite")
    return np.exp(log_density - offsets[:, None]), offsets


def _forward(
    initial: np.ndarray,
    transitions: np.ndarray,
    emissions: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    n_obs, n_states = emissions.shape
    alpha = np.empty((n_obs, n_states))
    scales = np.empty(n_obs)
    current = initial * emissions[0]
    for t in range(n_obs):
        if t > 0:
            current = (alpha[t - 1] @ transitions) * emissions[t]
        total = current.sum()
        if not total > 0.0 or not np.isfinite(total):
            raise HmmNumericalError(f"forward pass underflow at step {t}")
        scales[t] = total
        alpha[t] = current / total
    return alpha, scales


def _backward(transitions: np.ndarray, emissions: np.ndarray, scales: np.ndarray) -> np.ndarray:
    n_obs, n_states = emissions.shape
    beta = np.empty((n_obs, n_states))
    beta[-1] = 1.0
    for t in range(n_obs - 2, -1, -1):
        beta[t] = transitions @ (emissions[t + 1] * beta[t + 1]) / scales[t + 1]
    return beta


def _e_step(model_parts: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray], values: np.ndarray):
    initial, transitions, means, stds = model_parts
    emissions, offsets = _scaled_emissions(values, means, stds)
    alpha, scales = _forward(initial, transitions, emissions)
    beta = _backward(transitions, emissions, scales)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    weighted_next = emissions[1:] * beta[1:] / scales[1:, None]
    xi_sum = transitions * (alpha[:-1].T @ weighted_next)
    log_likelihood = float(np.log(scales).sum() + offsets.sum())
    if not np.isfinite(log_likelihood) or not np.all(np.isfinite(gamma)):
        raise HmmNumericalError("forward-backward produced non-finite values")
    return gamma, xi_sum, log_likelihood


def _m_step(
    values: np.ndarray,
    gamma: np.ndarray,
    xi_sum: np.ndarray,
    previous: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    std_floor: float,
) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray], bool]:
    _, previous_transitions, previous_means, previous_stds = previous
    initial = gamma[0] / gamma[0].sum()

    row_totals = xi_sum.sum(axis=1)
    transitions = previous_transitions.copy()
    visited = row_totals > 0.0
    transitions[visited] = xi_sum[visited] / row_totals[visited, None]

    weights = gamma.sum(axis=0)
    means = previous_means.copy()
    stds = previous_stds.copy()
    populated = weights > 0.0
    means[populated] = (gamma[:, populated] * values[:, None]).sum(axis=0) / weights[populated]
    deviations = values[:, None] - means[None, :]
    variances = (gamma * deviations * deviations).sum(axis=0)
    stds[populated] = np.sqrt(variances[populated] / weights[populated])

    floored = bool(np.any(stds < std_floor))
    stds = np.maximum(stds, std_floor)
    return (initial, transitions, means, stds), floored


def _initial_parameters(values: np.ndarray, n_states: int, rng: np.random.Generator):
    sample_mean = float(values.mean())
    sample_std = max(float(values.std()), 1e-12)
    means = sample_mean + sample_std * rng.uniform(-1.0, 1.0, size=n_states)
    stds = sample_std * rng.uniform(0.5, 1.5, size=n_states)
    if n_states == 1:
        transitions = np.ones((1, 1))
    else:
        off_diagonal = (1.0 - _STICKY_SELF_TRANSITION) / (n_states - 1)
        transitions = np.full((n_states, n_states), off_diagonal)
        np.fill_diagonal(transitions, _STICKY_SELF_TRANSITION)
    initial = np.full(n_states, 1.0 / n_states)
    return initial, transitions, means, stds


def _run_em(
    values: np.ndarray,
    n_states: int,
    seed: int,
    max_iter: int,
    tol: float,
    std_floor: float,
) -> GaussianHmm:
    parts = _initial_parameters(values, n_states, np.random.default_rng(seed))
    path: list[float] = []
    converged = False
    floor_hit = False
    for _ in range(max_iter):
        gamma, xi_sum, log_likelihood = _e_step(parts, values)
        if path and log_likelihood < path[-1] - _MONOTONICITY_SLACK * max(1.0, abs(path[-1])):
            logger.warning(
                "HMM log-likelihood decreased | seed=%s | before=%.12g | after=%.12g",
                seed,
                path[-1],
                log_likelihood,
            )
        path.append(log_likelihood)
        if len(path) > 1 and path[-1] - path[-2] < tol:
            converged = True
            break
        parts, floored = _m_step(values, gamma, xi_sum, parts, std_floor)
        floor_hit = floor_hit or floored
    else:
        _, _, log_likelihood = _e_step(parts, values)
        path.append(log_likelihood)

    if floor_hit:
        logger.warning("HMM variance floor applied | seed=%s | floor=%.3g", seed, std_floor)
    initial, transitions, means, stds = parts
    return GaussianHmm(
        initial=initial,
        transitions=transitions,
        means=means,
        stds=stds,
        log_likelihood=path[-1],
        converged=converged,
        n_iter=len(path),
        seed=seed,
        log_likelihood_path=tuple(path),
    )


def relabel_by_std(model: GaussianHmm) -> GaussianHmm:
    """Order states by ascending emission std so the last state is the volatile one."""
    order = np.argsort(model.stds, kind="stable")
    if np.array_equal(order, np.arange(order.size)):
        return model
    return GaussianHmm(
        initial=model.initial[order],
        transitions=model.transitions[np.ix_(order, order)],
        means=model.means[order],
        stds=model.stds[order],
        log_likelihood=model.log_likelihood,
        converged=model.converged,
        n_iter=model.n_iter,
        n_restarts_used=model.n_restarts_used,
        seed=model.seed,
        log_likelihood_path=model.log_likelihood_path,
    )


def baum_welch_fit(
    returns: Sequence[float],
    n_states: int = 2,
    n_restarts: int = 10,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-6,
    std_floor: float = 1e-8,
) -> GaussianHmm:
    """Best-likelihood EM fit over restarts seeded ``seed + restart``."""
    values = _as_returns(returns)
    if n_states < 1:
        raise HmmValidationError("n_states must be >= 1")
    if values.size < 10 * n_states:
        raise HmmValidationError(
            f"need at least {10 * n_states} observations for {n_states} states, got {values.size}"
        )
    if n_restarts < 1 or max_iter < 1:
        raise HmmValidationError("n_restarts and max_iter must be >= 1")

    best: Optional[GaussianHmm] = None
    for restart in range(n_restarts):
        candidate = _run_em(values, n_states, seed + restart, max_iter, tol, std_floor)
        if best is None or candidate.log_likelihood > best.log_likelihood:
            best = candidate
    assert best is not None

    best = relabel_by_std(
        GaussianHmm(
            initial=best.initial,
            transitions=best.transitions,
            means=best.means,
            stds=best.stds,
            log_likelihood=best.log_likelihood,
            converged=best.converged,
            n_iter=best.n_iter,
            n_restarts_used=n_restarts,
            seed=seed,
            log_likelihood_path=best.log_likelihood_path,
        )
    )
    if not best.converged:
        logger.warning(
            "HMM fit did not converge | iterations=%s | log_likelihood=%.12g",
            best.n_iter,
            best.log_likelihood,
        )
    logger.debug(
        "HMM fit completed | K=%s | log_likelihood=%.12g | iterations=%s | stds=%s",
        best.n_states,
        best.log_likelihood,
        best.n_iter,
        np.array2string(best.stds, precision=6),
    )
    return best


def _model_parts(model: GaussianHmm):
    return (
        np.asarray(model.initial),
        np.asarray(model.transitions),
        np.asarray(model.means),
        np.asarray(model.stds),
    )


def smoothed_probabilities(model: GaussianHmm, returns: Sequence[float]) -> np.ndarray:
    """T x K posterior state probabilities given the whole series."""
    gamma, _, _ = _e_step(_model_parts(model), _as_returns(returns))
    return gamma


def smoothed_states(model: GaussianHmm, returns: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    probabilities = smoothed_probabilities(model, returns)
    return np.argmax(probabilities, axis=1).astype(int), probabilities


def filtered_probabilities(model: GaussianHmm, returns: Sequence[float]) -> np.ndarray:
    """T x K state probabilities given data through each day only."""
    initial, transitions, means, stds = _model_parts(model)
    emissions, _ = _scaled_emissions(_as_returns(returns), means, stds)
    alpha, _ = _forward(initial, transitions, emissions)
    return alpha


def filtered_states(model: GaussianHmm, returns: Sequence[float]) -> np.ndarray:
    """Per-day argmax of the filtered probabilities.

    Day t's value equals the smoothed state of the last day when the series
    is cut at t, so the sequence is safe for walk-forward use.
    """
    return np.argmax(filtered_probabilities(model, returns), axis=1).astype(int)


def _viterbi_scores(model: GaussianHmm, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    initial, transitions, means, stds = _model_parts(model)
    with np.errstate(divide="ignore"):
        log_initial = np.log(initial)
        log_transitions = np.log(transitions)
    log_emissions = norm.logpdf(values[:, None], loc=means[None, :], scale=stds[None, :])
    n_obs, n_states = log_emissions.shape
    scores = np.empty((n_obs, n_states))
    backpointers = np.zeros((n_obs, n_states), dtype=int)
    scores[0] = log_initial + log_emissions[0]
    for t in range(1, n_obs):
        candidates = scores[t - 1][:, None] + log_transitions
        backpointers[t] = np.argmax(candidates, axis=0)
        scores[t] = candidates[backpointers[t], np.arange(n_states)] + log_emissions[t]
    return scores, backpointers


def viterbi_states(model: GaussianHmm, returns: Sequence[float]) -> np.ndarray:
    """Most likely joint state path."""
    values = _as_returns(returns)
    scores, backpointers = _viterbi_scores(model, values)
    states = np.empty(values.size, dtype=int)
    states[-1] = int(np.argmax(scores[-1]))
    for t in range(values.size - 1, 0, -1):
        states[t - 1] = backpointers[t, states[t]]
    return states


def online_viterbi_states(model: GaussianHmm, returns: Sequence[float]) -> np.ndarray:
    """For every t, the last state of the Viterbi path over days 0..t."""
    scores, _ = _viterbi_scores(model, _as_returns(returns))
    return np.argmax(scores, axis=1).astype(int)


def median_filter(labels: Sequence[int], window: int) -> np.ndarray:
    """Causal majority filter over the trailing ``window`` labels.

    Early days use the available history; a tied vote keeps the previous output.
    """
    if window < 1 or window % 2 == 0:
        raise HmmValidationError(f"window must be an odd integer >= 1, got {window}")
    values = np.asarray(labels, dtype=int)
    output = np.empty_like(values)
    if values.size == 0:
        return output
    ones = np.concatenate(([0], np.cumsum(values)))
    output[0] = values[0]
    for t in range(1, values.size):
        start = max(0, t - window + 1)
        count = int(ones[t + 1] - ones[start])
        length = t + 1 - start
        if 2 * count > length:
            output[t] = 1
        elif 2 * count < length:
            output[t] = 0
        else:
            output[t] = output[t - 1]
    return output


def online_labels(model: GaussianHmm, returns: Sequence[float], decoder: str = DECODER_SMOOTHED) -> np.ndarray:
    """Causal per-day labels under the configured decoder, before median filtering."""
    if decoder == DECODER_SMOOTHED:
        return filtered_states(model, returns)
    if decoder == DECODER_VITERBI:
        return online_viterbi_states(model, returns)
    raise HmmValidationError(f"unknown decoder {decoder!r}")


class HmmService:
    """Fits and decodes the baseline with estimation settings from configuration."""

    def __init__(self, settings: Optional[Settings] = None) -> None:
        self._settings = settings or get_settings()

    def fit(self, returns: Sequence[float], *, seed: Optional[int] = None, n_states: int = 2) -> GaussianHmm:
        return baum_welch_fit(
            returns,
            n_states=n_states,
            n_restarts=self._settings.hmm_n_restarts,
            seed=seed if seed is not None else self._settings.random_seed,
            max_iter=self._settings.hmm_max_iter,
            tol=self._settings.hmm_tol,
            std_floor=self._settings.hmm_std_floor,
        )

    def decode(self, model: GaussianHmm, returns: Sequence[float], decoder: Optional[str] = None) -> np.ndarray:
        chosen = decoder or self._settings.hmm_decoder
        if chosen == DECODER_VITERBI:
            return viterbi_states(model, returns)
        states, _ = smoothed_states(model, returns)
        return states
