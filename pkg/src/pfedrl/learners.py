"""Per-agent update kernels for linear TD(0) and Q-learning on a shared representation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import ChainSampler, Observation
from .representation import DEFAULT_BOUND, clip_weights, project_rows


@dataclass(frozen=True)
class LocalHyperparams:
    """Knobs of one local round.

    ``aggregate`` picks how the K per-sample feature gradients combine
    (``"sum"`` or ``"mean"``); ``normalization`` is passed to
    :func:`project_rows`.
    """

    K: int
    alpha: float
    beta: float
    epsilon_greedy: float = 0.1
    bound: float = DEFAULT_BOUND
    aggregate: str = "sum"
    normalization: str = "rows"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0.0 <= self.epsilon_greedy <= 1.0:
            raise ValueError("epsilon_greedy must lie in [0, 1]")
        if self.aggregate not in ("sum", "mean"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")


@dataclass
class TdRoundResult:
    new_theta: np.ndarray
    local_phi: np.ndarray
    observations: list[Observation]
    td_errors: list[float] = field(default_factory=list)


def td_error(phi: np.ndarray, theta: np.ndarray, obs: Observation, gamma: float) -> float:
    return float(obs.reward + gamma * (phi[obs.next_state] @ theta) - phi[obs.state] @ theta)


def grad_g(phi: np.ndarray, theta: np.ndarray, obs: Observation, gamma: float) -> np.ndarray:
    """Negative semi-gradient of the squared TD loss in ``theta``: ``delta * phi(s)``."""
    return td_error(phi, theta, obs, gamma) * phi[obs.state]


def grad_h(phi: np.ndarray, theta: np.ndarray, obs: Observation, gamma: float) -> tuple[int, np.ndarray]:
    """Negative semi-gradient in the feature matrix.

    Only row ``s`` is nonzero, so the result is ``(s, delta * theta)``.
    """
    return obs.state, td_error(phi, theta, obs, gamma) * np.asarray(theta, dtype=float)


def grad_h_dense(phi, theta, obs, gamma) -> np.ndarray:
    row, value = grad_h(phi, theta, obs, gamma)
    out = np.zeros_like(phi, dtype=float)
    out[row] = value
    return out


def _unpack(observations):
    table = np.array(observations, dtype=float).reshape(-1, 4)
    idx = table[:, [0, 2, 3]].astype(np.intp)
    return idx[:, 0], table[:, 1], idx[:, 1], idx[:, 2]


def td_errors_batch(phi, theta, observations, gamma) -> np.ndarray:
    s, r, s_next, _ = _unpack(observations)
    return r + gamma * (phi[s_next] @ theta) - phi[s] @ theta


def weight_update(
    phi: np.ndarray,
    theta: np.ndarray,
    sampler: ChainSampler,
    hyper: LocalHyperparams,
) -> tuple[np.ndarray, list[Observation]]:
    """K TD(0) steps on ``theta`` with ``phi`` frozen, then clip to ``hyper.bound``.

    The K observations come from one continuing trajectory of ``sampler``
    and are returned for the feature step.
    """
    observations = sampler.rollout(hyper.K)
    return weight_steps(phi, theta, observations, hyper.alpha, sampler.mdp.gamma, hyper.bound), observations


def weight_steps(phi, theta, observations, alpha: float, gamma: float, bound: float) -> np.ndarray:
    """Sequential TD(0) steps over given observations, then clip."""
    theta = np.array(theta, dtype=float)
    for obs in observations:
        row = phi[obs.state]
        delta = obs.reward + gamma * (phi[obs.next_state] @ theta) - row @ theta
        theta = theta + alpha * delta * row
    return clip_weights(theta, bound)


def _apply_row_updates(phi, rows, deltas, theta, beta, aggregate, normalization):
    step = np.zeros_like(phi, dtype=float)
    np.add.at(step, rows, deltas[:, None] * theta[None, :])
    if aggregate == "mean":
        step /= len(rows)
    return project_rows(phi + beta * step, normalization)


def feature_update(
    phi: np.ndarray,
    theta_new: np.ndarray,
    observations: list[Observation],
    beta: float,
    gamma: float,
    aggregate: str = "sum",
    normalization: str = "rows",
) -> np.ndarray:
    """One step on the feature matrix from the round's observations.

    TD errors are recomputed with the post-round weights against the
    unchanged ``phi``; per-sample row gradients are summed (or averaged).
    """
    if not observations:
        raise ValueError("feature_update needs at least one observation")
    return _td_feature_step(phi, theta_new, observations, beta, gamma, aggregate, normalization)[0]


def _td_feature_step(phi, theta_new, observations, beta, gamma, aggregate, normalization):
    theta_new = np.asarray(theta_new, dtype=float)
    s, r, s_next, _ = _unpack(observations)
    deltas = r + gamma * (phi[s_next] @ theta_new) - phi[s] @ theta_new
    return _apply_row_updates(phi, s, deltas, theta_new, beta, aggregate, normalization), deltas


def local_td_round(phi, theta, sampler: ChainSampler, hyper: LocalHyperparams) -> TdRoundResult:
    """``weight_update`` followed by ``feature_update`` from the same ``phi``."""
    new_theta, observations = weight_update(phi, theta, sampler, hyper)
    local_phi, deltas = _td_feature_step(phi, new_theta, observations, hyper.beta, sampler.mdp.gamma,
                                         hyper.aggregate, hyper.normalization)
    return TdRoundResult(new_theta, local_phi, observations, deltas.tolist())


# Q-learning on state-action features: row s * n_actions + a holds phi(s, a).


def q_values(phi_sa: np.ndarray, theta: np.ndarray, s: int, n_actions: int) -> np.ndarray:
    return phi_sa[s * n_actions:(s + 1) * n_actions] @ theta


def epsilon_greedy_chooser(phi_sa, theta_ref, n_actions: int, epsilon: float):
    """Action chooser for :meth:`ChainSampler.step_with`.

    One uniform ``u`` decides both branches: ``u < epsilon`` explores with
    action ``floor(u / epsilon * A)``, otherwise the greedy action (lowest
    index on ties). ``theta_ref`` is a one-element list so the caller can
    swap in the current iterate.
    """

    def choose(state: int, u: float) -> int:
        if u < epsilon:
            return min(int(u / epsilon * n_actions), n_actions - 1)
        return int(np.argmax(q_values(phi_sa, theta_ref[0], state, n_actions)))

    return choose


def q_td_error(phi_sa, theta, obs: Observation, gamma: float, n_actions: int) -> float:
    target = obs.reward + gamma * np.max(q_values(phi_sa, theta, obs.next_state, n_actions))
    return float(target - phi_sa[obs.state * n_actions + obs.action] @ theta)


def q_weight_update(
    phi_sa: np.ndarray,
    theta: np.ndarray,
    sampler: ChainSampler,
    hyper: LocalHyperparams,
) -> tuple[np.ndarray, list[Observation]]:
    """K Q-learning steps along an epsilon-greedy trajectory, then clip."""
    n_actions = sampler.mdp.n_actions
    gamma = sampler.mdp.gamma
    current = [np.array(theta, dtype=float)]
    choose = epsilon_greedy_chooser(phi_sa, current, n_actions, hyper.epsilon_greedy)
    observations = []
    for _ in range(hyper.K):
        obs = sampler.step_with(choose)
        observations.append(obs)
        delta = q_td_error(phi_sa, current[0], obs, gamma, n_actions)
        current[0] = current[0] + hyper.alpha * delta * phi_sa[obs.state * n_actions + obs.action]
    return clip_weights(current[0], hyper.bound), observations


def q_feature_update(
    phi_sa: np.ndarray,
    theta_new: np.ndarray,
    observations: list[Observation],
    beta: float,
    gamma: float,
    n_actions: int,
    aggregate: str = "sum",
    normalization: str = "rows",
) -> np.ndarray:
    """Update only the visited ``(s, a)`` rows; every other row is copied."""
    if not observations:
        raise ValueError("q_feature_update needs at least one observation")
    theta_new = np.asarray(theta_new, dtype=float)
    rows = np.array([o.state * n_actions + o.action for o in observations], dtype=np.intp)
    deltas = np.array([q_td_error(phi_sa, theta_new, o, gamma, n_actions) for o in observations])
    return _apply_row_updates(phi_sa, rows, deltas, theta_new, beta, aggregate, normalization)


def local_q_round(phi_sa, theta, sampler: ChainSampler, hyper: LocalHyperparams) -> TdRoundResult:
    n_actions = sampler.mdp.n_actions
    gamma = sampler.mdp.gamma
    new_theta, observations = q_weight_update(phi_sa, theta, sampler, hyper)
    local_phi = q_feature_update(
        phi_sa, new_theta, observations, hyper.beta, gamma, n_actions,
        hyper.aggregate, hyper.normalization,
    )
    deltas = [q_td_error(phi_sa, new_theta, o, gamma, n_actions) for o in observations]
    return TdRoundResult(new_theta, local_phi, observations, deltas)
