"""Finite MDPs, policy-induced Markov chains and exact linear-algebra oracles."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

STOCHASTIC_TOL = 1e-12


class ReducibleChainError(ValueError):
    """The chain has no unique stationary distribution."""


@dataclass(frozen=True)
class Mdp:
    """Finite MDP ``<S, A, R, P, gamma>``.

    ``kernel[s, a, s']`` is ``P(s'|s, a)`` and ``reward[s, a]`` is ``R(s, a)``.
    ``start_state`` is where agent trajectories begin; leaving a state in
    ``terminal_states`` marks an episode boundary (bookkeeping only).
    """

    kernel: np.ndarray
    reward: np.ndarray
    gamma: float
    start_state: int = 0
    name: str = "mdp"
    terminal_states: tuple = ()

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=float)
        reward = np.array(self.reward, dtype=float)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValueError(f"kernel must have shape (S, A, S), got {kernel.shape}")
        if reward.shape != kernel.shape[:2]:
            raise ValueError(f"reward shape {reward.shape} does not match kernel {kernel.shape[:2]}")
        if np.any(kernel < 0):
            raise ValueError("kernel has negative entries")
        if np.max(np.abs(kernel.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("kernel rows must sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 <= self.start_state < kernel.shape[0]:
            raise ValueError("start_state out of range")
        kernel.setflags(write=False)
        reward.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "start_state", int(self.start_state))
        object.__setattr__(self, "terminal_states", tuple(int(t) for t in self.terminal_states))

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    def with_reward_scale(self, scale: float) -> "Mdp":
        return Mdp(self.kernel, self.reward * scale, self.gamma, self.start_state, self.name,
                   self.terminal_states)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "start_state": self.start_state,
            "terminal_states": list(self.terminal_states),
            "kernel": self.kernel.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mdp":
        mdp = cls(
            kernel=np.asarray(data["kernel"], dtype=float),
            reward=np.asarray(data["reward"], dtype=float),
            gamma=data["gamma"],
            start_state=data.get("start_state", 0),
            name=data.get("name", "mdp"),
            terminal_states=tuple(data.get("terminal_states", ())),
        )
        if (mdp.n_states, mdp.n_actions) != (data["n_states"], data["n_actions"]):
            raise ValueError("declared state/action counts disagree with the kernel")
        return mdp


@dataclass(frozen=True)
class Policy:
    """Stochastic policy; ``probs[s, a] = pi(a|s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("policy probs must be a (S, A) array")
        if np.any(probs < 0) or np.max(np.abs(probs.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("policy rows must be probability vectors")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)


class Observation(NamedTuple):
    """One transition ``(s, r, s')``; ``action`` is kept for Q-learning."""

    state: int
    reward: float
    next_state: int
    action: int = 0


def _check_shapes(mdp: Mdp, policy: Policy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def transition_under_policy(mdp: Mdp, policy: Policy) -> np.ndarray:
    """State-to-state matrix ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    _check_shapes(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs, mdp.kernel)


def reward_under_policy(mdp: Mdp, policy: Policy) -> np.ndarray:
    _check_shapes(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def inverse_cdf(cdf, u: float) -> int:
    # bisect_right skips zero-probability entries; min() guards cdf[-1] < 1 round-off
    return min(bisect_right(cdf, u), len(cdf) - 1)


def sample_step(mdp: Mdp, policy: Policy, state: int, rng: np.random.Generator) -> Observation:
    """Draw ``a ~ pi(.|s)``, ``s' ~ P(.|s, a)``.

    Consumes exactly two uniforms from ``rng`` (action first, then successor).
    """
    if not 0 <= state < mdp.n_states:
        raise IndexError(f"state {state} out of range")
    u_action, u_next = rng.random(2)
    action = inverse_cdf(np.cumsum(policy.probs[state]).tolist(), u_action)
    next_state = inverse_cdf(np.cumsum(mdp.kernel[state, action]).tolist(), u_next)
    return Observation(state, float(mdp.reward[state, action]), next_state, action)


class ChainSampler:
    """Stateful trajectory over one agent's MDP with cached CDF tables.

    Draws are bit-identical to repeated :func:`sample_step` calls with the
    same generator.
    """

    def __init__(self, mdp: Mdp, policy: Policy | None, rng: np.random.Generator, state: int | None = None):
        if policy is not None:
            _check_shapes(mdp, policy)
        self.mdp = mdp
        self.policy = policy
        self.rng = rng
        self.state = mdp.start_state if state is None else int(state)
        self._kernel_cdf = np.cumsum(mdp.kernel, axis=2).tolist()
        self._policy_cdf = None if policy is None else np.cumsum(policy.probs, axis=1).tolist()
        self._reward = mdp.reward.tolist()

    def step(self) -> Observation:
        u_action, u_next = self.rng.random(2)
        return self._advance(inverse_cdf(self._policy_cdf[self.state], u_action), u_next)

    def step_with(self, choose_action) -> Observation:
        """Step with an externally chosen action; ``choose_action(state, u)`` gets the first uniform."""
        u_action, u_next = self.rng.random(2)
        return self._advance(int(choose_action(self.state, u_action)), u_next)

    def rollout(self, n_steps: int) -> list[Observation]:
        # one block of uniforms is the same stream as n_steps pairs of draws
        uniforms = self.rng.random((n_steps, 2)).tolist()
        out = []
        for u_action, u_next in uniforms:
            out.append(self._advance(inverse_cdf(self._policy_cdf[self.state], u_action), u_next))
        return out

    def _advance(self, action: int, u_next: float) -> Observation:
        s = self.state
        nxt = inverse_cdf(self._kernel_cdf[s][action], u_next)
        self.state = nxt
        return Observation(s, self._reward[s][action], nxt, action)


def stationary_distribution(p_pi: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Unique ``mu`` with ``mu^T P = mu^T`` and ``sum(mu) = 1``, by direct linear solve.

    Raises :class:`ReducibleChainError` when ``P^T - I`` has a null space of
    dimension other than one.
    """
    p_pi = np.asarray(p_pi, dtype=float)
    n = p_pi.shape[0]
    if p_pi.shape != (n, n):
        raise ValueError("transition matrix must be square")
    if np.any(p_pi < 0) or np.max(np.abs(p_pi.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("transition matrix must be row-stochastic")
    system = p_pi.T - np.eye(n)
    rank = np.linalg.matrix_rank(system, tol=1e-10)
    if rank != n - 1:
        raise ReducibleChainError(
            f"stationary distribution is not unique (null space dimension {n - rank})"
        )
    lhs = np.vstack([system, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    mu = np.where(np.abs(mu) < 1e-15, 0.0, mu)
    if np.any(mu < -tol):
        raise ReducibleChainError("solution has negative mass")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if np.max(np.abs(mu @ p_pi - mu)) > tol:
        raise ReducibleChainError("solution is not a fixed point within tolerance")
    return mu


def exact_value(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = r_pi``."""
    p_pi = transition_under_policy(mdp, policy)
    r_pi = reward_under_policy(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def exact_q_value(mdp: Mdp, policy: Policy) -> np.ndarray:
    v = exact_value(mdp, policy)
    return mdp.reward + mdp.gamma * mdp.kernel @ v


def optimal_q_value(mdp: Mdp, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """``Q*`` by value iteration, the target of the Q-learning variant."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        q_new = mdp.reward + mdp.gamma * mdp.kernel @ q.max(axis=1)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    return q


def save_mdp(mdp: Mdp, path, **extra):
    """Write a JSON fixture; ``extra`` arrays (features, weights) ride along."""
    data = mdp.to_dict()
    for key, value in extra.items():
        data[key] = np.asarray(value).tolist()
    Path(path).write_text(json.dumps(data, indent=1))


def load_mdp(path) -> tuple[Mdp, dict]:
    data = json.loads(Path(path).read_text())
    mdp = Mdp.from_dict(data)
    known = {"name", "n_states", "n_actions", "gamma", "start_state", "terminal_states", "kernel", "reward"}
    extra = {k: np.asarray(v) for k, v in data.items() if k not in known}
    return mdp, extra
