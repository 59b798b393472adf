"""Statistical jump model: coordinate-descent fitting, DP decoding and online inference.

The objective for features y_t, centroids theta_k and states s_t is

    sum_t 0.5 * ||y_t - theta_{s_t}||^2 + lambda * #{t : s_{t-1} != s_t}

Coordinate descent alternates centroid means (states fixed) with an exact
dynamic program over state sequences (centroids fixed).
"""

from __future__ import annotations

from typing import Any, Optional, Sequence, Union

import numpy as np
from sklearn.cluster import kmeans_plusplus

from regime_allocator.domain.models import JumpModelFit, JumpPenalty, TransitionEstimate
from regime_allocator.utils.config import Settings, get_settings
from regime_allocator.utils.logger import get_logger


logger = get_logger(__name__)

PenaltyLike = Union[JumpPenalty, float]


class JumpModelError(Exception):
    """Base exception for jump model failures."""


class JumpModelValidationError(JumpModelError):
    """Raised when inputs violate a jump model precondition."""


class InsufficientDistinctRowsError(JumpModelError):
    """Raised when fewer distinct observations than states exist."""


def _as_penalty(jump_penalty: PenaltyLike) -> JumpPenalty:
    if isinstance(jump_penalty, JumpPenalty):
        return jump_penalty
    try:
        return JumpPenalty(float(jump_penalty))
    except ValueError as exc:
        raise JumpModelValidationError(str(exc)) from exc


def _as_matrix(features: Any) -> np.ndarray:
    matrix = np.asarray(features, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise JumpModelValidationError("features must be a non-empty T x D matrix")
    if not np.all(np.isfinite(matrix)):
        raise JumpModelValidationError("features must be finite")
    return matrix


def _as_centroids(centroids: Any, n_features: int) -> np.ndarray:
    matrix = np.asarray(centroids, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None] if n_features == 1 else matrix[None, :]
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] != n_features:
        raise JumpModelValidationError("centroids must be a K x D matrix matching the features")
    return matrix


def state_losses(features: Any, centroids: Any) -> np.ndarray:
    """T x K matrix of 0.5 * squared Euclidean distances."""
    matrix = _as_matrix(features)
    centers = _as_centroids(centroids, matrix.shape[1])
    differences = matrix[:, None, :] - centers[None, :, :]
    return 0.5 * np.einsum("tkd,tkd->tk", differences, differences)


def jump_objective(features: Any, centroids: Any, states: Sequence[int], jump_penalty: PenaltyLike) -> float:
    """Loss plus penalty recomputed from a given state sequence."""
    penalty = _as_penalty(jump_penalty)
    labels = np.asarray(states, dtype=int)
    losses = state_losses(features, centroids)
    fit_loss = float(losses[np.arange(labels.size), labels].sum())
    n_jumps = int(np.count_nonzero(np.diff(labels))) if labels.size > 1 else 0
    return fit_loss + penalty.value * n_jumps


def _forward_values(losses: np.ndarray, penalty: float) -> np.ndarray:
    values = np.empty_like(losses)
    values[0] = losses[0]
    for t in range(1, losses.shape[0]):
        previous = values[t - 1]
        values[t] = losses[t] + np.minimum(previous, previous.min() + penalty)
    return values


def optimal_states_dp(
    features: Any,
    centroids: Any,
    jump_penalty: PenaltyLike,
) -> tuple[np.ndarray, float]:
    """Globally optimal state sequence for fixed centroids.

    Ties go to the lower state index for the final state and to staying in
    the current state on the backward pass.
    """
    penalty = _as_penalty(jump_penalty).value
    losses = state_losses(features, centroids)
    values = _forward_values(losses, penalty)

    n_obs = losses.shape[0]
    states = np.empty(n_obs, dtype=int)
    states[-1] = int(np.argmin(values[-1]))
    for t in range(n_obs - 2, -1, -1):
        following = states[t + 1]
        row = values[t]
        best = int(np.argmin(row))
        states[t] = following if row[following] <= row[best] + penalty else best
    objective = jump_objective(features, centroids, states, penalty)
    return states, objective


def forward_online_states(features: Any, centroids: Any, jump_penalty: PenaltyLike) -> np.ndarray:
    """For every t, the final state of the optimal sequence over rows 0..t.

    Equivalent to calling ``online_infer`` on each prefix, in one forward pass.
    """
    penalty = _as_penalty(jump_penalty).value
    values = _forward_values(state_losses(features, centroids), penalty)
    return np.argmin(values, axis=1).astype(int)


def online_infer(features_upto_t: Any, centroids: Any, jump_penalty: PenaltyLike) -> int:
    """State at the last row, decoding from the first row with frozen centroids."""
    states, _ = optimal_states_dp(features_upto_t, centroids, jump_penalty)
    return int(states[-1])


def kmeanspp_init(features: Any, n_states: int, seed: int) -> np.ndarray:
    """k-means++ seeding (D^2 sampling), deterministic for a given seed."""
    matrix = _as_matrix(features)
    if not 1 <= n_states <= matrix.shape[0]:
        raise JumpModelValidationError(
            f"n_states must lie in [1, {matrix.shape[0]}], got {n_states}"
        )
    n_distinct = np.unique(matrix, axis=0).shape[0]
    if n_states > n_distinct:
        raise InsufficientDistinctRowsError(
            f"{n_states} states requested but only {n_distinct} distinct rows available"
        )
    centers, _ = kmeans_plusplus(matrix, n_clusters=n_states, random_state=seed)
    return centers


def _update_centroids(features: np.ndarray, states: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    updated = centroids.copy()
    for k in range(centroids.shape[0]):
        members = states == k
        if members.any():
            updated[k] = features[members].mean(axis=0)
    return updated


def _coordinate_descent(
    features: np.ndarray,
    n_states: int,
    penalty: JumpPenalty,
    seed: int,
    max_iter: int,
) -> JumpModelFit:
    centroids = kmeanspp_init(features, n_states, seed)
    states, objective = optimal_states_dp(features, centroids, penalty)
    path = [objective]
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        centroids = _update_centroids(features, states, centroids)
        new_states, new_objective = optimal_states_dp(features, centroids, penalty)
        if new_objective > objective + 1e-9 * max(1.0, abs(objective)):
            logger.warning(
                "Jump model objective increased | seed=%s | iteration=%s | before=%.12g | after=%.12g",
                seed,
                n_iter,
                objective,
                new_objective,
            )
        path.append(new_objective)
        unchanged = np.array_equal(new_states, states)
        states, objective = new_states, new_objective
        if unchanged:
            converged = True
            break

    logger.debug(
        "Jump model restart finished | seed=%s | iterations=%s | converged=%s | objective=%.12g",
        seed,
        n_iter,
        converged,
        objective,
    )
    return JumpModelFit(
        centroids=centroids,
        jump_penalty=penalty,
        states=states,
        objective=objective,
        n_restarts_used=1,
        converged=converged,
        seed=seed,
        n_iter=n_iter,
        objective_path=tuple(path),
    )


def relabel_by_volatility(fit_result: JumpModelFit, raw_returns: Sequence[float]) -> JumpModelFit:
    """Order states by the sample std of raw returns so the last state is the most volatile."""
    returns = np.asarray(raw_returns, dtype=float)
    if returns.size != fit_result.states.size:
        raise JumpModelValidationError("raw_returns must align with the decoded states")
    if fit_result.n_populated_states < 2:
        logger.warning(
            "Relabel skipped: single populated state | n_states=%s",
            fit_result.n_states,
        )
        return fit_result

    # empty states sort last
    volatilities = np.full(fit_result.n_states, np.inf)
    for k in range(fit_result.n_states):
        members = returns[fit_result.states == k]
        if members.size >= 2:
            volatilities[k] = float(np.std(members, ddof=1))
        elif members.size == 1:
            volatilities[k] = 0.0
    order = np.argsort(volatilities, kind="stable")
    if np.array_equal(order, np.arange(order.size)):
        return fit_result
    return fit_result.with_labels(order)


def relabel_by_centroid(fit_result: JumpModelFit, column: int = 0) -> JumpModelFit:
    """Order states by ascending centroid value in ``column``."""
    order = np.argsort(fit_result.centroids[:, column], kind="stable")
    if np.array_equal(order, np.arange(order.size)):
        return fit_result
    return fit_result.with_labels(order)


def fit(
    features: Any,
    n_states: int,
    jump_penalty: PenaltyLike,
    n_restarts: int = 10,
    seed: int = 0,
    max_iter: int = 300,
    raw_returns: Optional[Sequence[float]] = None,
) -> JumpModelFit:
    """Best of ``n_restarts`` coordinate-descent runs seeded ``seed + restart``.

    States are canonicalized by raw-return volatility when ``raw_returns`` is
    given, otherwise by the first feature's centroid.
    """
    matrix = _as_matrix(features)
    penalty = _as_penalty(jump_penalty)
    if n_states < 1 or matrix.shape[0] < n_states:
        raise JumpModelValidationError(
            f"need at least {n_states} observations for {n_states} states, got {matrix.shape[0]}"
        )
    if n_restarts < 1:
        raise JumpModelValidationError("n_restarts must be >= 1")
    if max_iter < 1:
        raise JumpModelValidationError("max_iter must be >= 1")

    best: Optional[JumpModelFit] = None
    any_populated = False
    for restart in range(n_restarts):
        candidate = _coordinate_descent(matrix, n_states, penalty, seed + restart, max_iter)
        any_populated = any_populated or not candidate.degenerate
        if best is None or candidate.objective < best.objective:
            best = candidate
    assert best is not None

    best = JumpModelFit(
        centroids=best.centroids,
        jump_penalty=penalty,
        states=best.states,
        objective=best.objective,
        n_restarts_used=n_restarts,
        converged=best.converged,
        seed=seed,
        n_iter=best.n_iter,
        objective_path=best.objective_path,
    )
    if raw_returns is not None:
        best = relabel_by_volatility(best, raw_returns)
    else:
        best = relabel_by_centroid(best)

    if not any_populated:
        logger.warning(
            "Degenerate jump model fit | n_states=%s | effective_states=%s | lambda=%.6g",
            best.n_states,
            best.n_populated_states,
            penalty.value,
        )
    elif best.degenerate:
        logger.info(
            "Best restart leaves a state empty while another restart populated all states | n_states=%s | lambda=%.6g",
            best.n_states,
            penalty.value,
        )
    logger.debug(
        "Jump model fit completed | K=%s | lambda=%.6g | objective=%.12g | transitions=%s | restarts=%s",
        best.n_states,
        penalty.value,
        best.objective,
        best.n_transitions,
        n_restarts,
    )
    return best


def estimate_transitions(states: Sequence[int], n_states: int) -> TransitionEstimate:
    """Empirical transition frequencies; unvisited rows default to the identity row."""
    labels = np.asarray(states, dtype=int)
    if labels.size < 2:
        raise JumpModelValidationError("at least two states are needed to count transitions")
    if labels.min() < 0 or labels.max() >= n_states:
        raise JumpModelValidationError("state labels must lie in [0, n_states)")
    counts = np.zeros((n_states, n_states), dtype=float)
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    totals = counts.sum(axis=1)
    matrix = np.eye(n_states)
    visited = totals > 0
    matrix[visited] = counts[visited] / totals[visited, None]
    return TransitionEstimate(matrix=matrix)


def summarize_regimes(
    states: Sequence[int],
    returns: Sequence[float],
    n_states: int,
    trading_days_per_year: int = 252,
) -> list[dict[str, float | int]]:
    """Per-state count, time share, mean daily return and annualized volatility."""
    labels = np.asarray(states, dtype=int)
    values = np.asarray(returns, dtype=float)
    if labels.size != values.size:
        raise JumpModelValidationError("returns must align with states")
    summary: list[dict[str, float | int]] = []
    for k in range(n_states):
        members = values[labels == k]
        summary.append(
            {
                "state": k,
                "n_days": int(members.size),
                "fraction": float(members.size / labels.size) if labels.size else 0.0,
                "mean_daily_return": float(members.mean()) if members.size else 0.0,
                "ann_vol": (
                    float(np.std(members) * np.sqrt(trading_days_per_year)) if members.size else 0.0
                ),
            }
        )
    return summary


class JumpModelService:
    """Fits jump models with restart and iteration settings from configuration."""

    def __init__(self, settings: Optional[Settings] = None) -> None:
        self._settings = settings or get_settings()

    def fit(
        self,
        features: Any,
        jump_penalty: PenaltyLike,
        *,
        seed: Optional[int] = None,
        n_states: Optional[int] = None,
        raw_returns: Optional[Sequence[float]] = None,
    ) -> JumpModelFit:
        return fit(
            features,
            n_states=n_states if n_states is not None else self._settings.jm_n_states,
            jump_penalty=jump_penalty,
            n_restarts=self._settings.jm_n_restarts,
            seed=seed if seed is not None else self._settings.random_seed,
            max_iter=self._settings.jm_max_iter,
            raw_returns=raw_returns,
        )
