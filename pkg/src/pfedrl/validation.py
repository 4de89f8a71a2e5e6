"""Input checks shared by the estimator and the harness."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

TRANSITION_COLUMNS = ("agent", "state", "next_state", "reward")


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_positive(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def _index_column(column, name):
    if np.any(column < 0) or np.any(column != np.floor(column)):
        raise ValueError(f"{name} column must hold non-negative integers")
    return column.astype(np.intp)


def check_transitions(X):
    """Validate an ``(n, 4)`` transition table ``[agent, state, next_state, reward]``.

    Returns ``(agents, states, next_states, rewards)``.
    """
    X = check_array(X, dtype=float, ensure_min_samples=1)
    if X.shape[1] != len(TRANSITION_COLUMNS):
        raise ValueError(f"expected {len(TRANSITION_COLUMNS)} columns {TRANSITION_COLUMNS}, got {X.shape[1]}")
    agents = _index_column(X[:, 0], "agent")
    states = _index_column(X[:, 1], "state")
    next_states = _index_column(X[:, 2], "next_state")
    return agents, states, next_states, X[:, 3].copy()


def check_agent_states(X, n_agents: int, n_states: int):
    """Validate ``(n, 2)`` ``[agent, state]`` queries against fitted sizes."""
    X = check_array(X, dtype=float)
    if X.shape[1] != 2:
        raise ValueError(f"expected columns [agent, state], got {X.shape[1]} columns")
    agents = _index_column(X[:, 0], "agent")
    states = _index_column(X[:, 1], "state")
    if agents.max() >= n_agents:
        raise ValueError(f"agent index {agents.max()} out of range for {n_agents} agents")
    if states.max() >= n_states:
        raise ValueError(f"state index {states.max()} out of range for {n_states} states")
    return agents, states


def check_states(X, n_states: int) -> np.ndarray:
    X = check_array(np.asarray(X).reshape(-1, 1), dtype=float)
    states = _index_column(X[:, 0], "state")
    if states.max() >= n_states:
        raise ValueError(f"state index {states.max()} out of range for {n_states} states")
    return states
