"""Environment builders: CliffWalking grid, Garnet random MDPs, heterogeneity."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import Mdp, Policy

UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


@dataclass(frozen=True)
class CliffWalkingSpec:
    """Gym-style cliff grid; start bottom-left, goal bottom-right, cliff between."""

    rows: int = 4
    cols: int = 12
    step_reward: float = -1.0
    cliff_reward: float = -100.0
    slip_prob: float = 0.0
    gamma: float = 0.9
    absorbing_goal: bool = False

    def __post_init__(self):
        if self.rows < 2 or self.cols < 3:
            raise ValueError("grid needs at least 2 rows and 3 columns")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")

    @property
    def start(self) -> int:
        return (self.rows - 1) * self.cols

    @property
    def goal(self) -> int:
        return self.rows * self.cols - 1

    def is_cliff(self, s: int) -> bool:
        r, c = divmod(s, self.cols)
        return r == self.rows - 1 and 0 < c < self.cols - 1


@dataclass(frozen=True)
class GarnetSpec:
    n_states: int = 10
    n_actions: int = 2
    branching: int = 3
    reward_scale: float = 1.0
    gamma: float = 0.9

    def __post_init__(self):
        if not 1 <= self.branching <= self.n_states:
            raise ValueError("branching must lie in [1, n_states]")
        if self.n_actions < 1:
            raise ValueError("need at least one action")


@dataclass
class HeterogeneityConfig:
    kernel_noise: float = 0.0
    policy_set: list = field(default_factory=list)


def build_cliffwalking(spec: CliffWalkingSpec = CliffWalkingSpec()) -> Mdp:
    """48-state unichain CliffWalking.

    Entering the cliff costs ``cliff_reward`` and lands on the start cell.
    The goal and the (unreachable) cliff cells route every action to the
    start with reward 0, which closes episodes into a single recurrent chain.
    With ``absorbing_goal`` the goal self-loops instead (episodic returns).
    """
    n = spec.rows * spec.cols
    kernel = np.zeros((n, 4, n))
    reward = np.zeros((n, 4))
    for s in range(n):
        if s == spec.goal and spec.absorbing_goal:
            kernel[s, :, s] = 1.0
            continue
        if s == spec.goal or spec.is_cliff(s):
            kernel[s, :, spec.start] = 1.0
            continue
        for a in range(4):
            for move, weight in _move_distribution(a, spec.slip_prob):
                nxt, rew = _grid_step(spec, s, move)
                kernel[s, a, nxt] += weight
                reward[s, a] += weight * rew
    return Mdp(kernel, reward, spec.gamma, start_state=spec.start, name="cliffwalking",
               terminal_states=(spec.goal,))


def _move_distribution(action, slip_prob):
    if slip_prob == 0.0:
        return [(action, 1.0)]
    return [(m, (1.0 - slip_prob) * (m == action) + slip_prob / 4.0) for m in range(4)]


def _grid_step(spec: CliffWalkingSpec, s: int, move: int) -> tuple[int, float]:
    r, c = divmod(s, spec.cols)
    dr, dc = _MOVES[move]
    r = min(max(r + dr, 0), spec.rows - 1)
    c = min(max(c + dc, 0), spec.cols - 1)
    nxt = r * spec.cols + c
    if spec.is_cliff(nxt):
        return spec.start, spec.cliff_reward
    return nxt, spec.step_reward


def shortest_path_actions(spec: CliffWalkingSpec = CliffWalkingSpec()) -> np.ndarray:
    """Greedy action toward the goal on the deterministic grid (ties: lowest action)."""
    n = spec.rows * spec.cols
    dist = np.full(n, np.inf)
    dist[spec.goal] = 0.0
    queue = deque([spec.goal])
    while queue:
        s = queue.popleft()
        for t in range(n):
            if dist[t] == np.inf and not spec.is_cliff(t) and t != spec.goal:
                if any(_raw_target(spec, t, m) == s for m in range(4)):
                    dist[t] = dist[s] + 1
                    queue.append(t)
    actions = np.zeros(n, dtype=int)
    for s in range(n):
        if s == spec.goal or spec.is_cliff(s):
            continue
        costs = []
        for m in range(4):
            raw = _raw_target(spec, s, m)
            costs.append(np.inf if spec.is_cliff(raw) else dist[raw])
        actions[s] = int(np.argmin(costs))
    return actions


def _raw_target(spec, s, move):
    r, c = divmod(s, spec.cols)
    dr, dc = _MOVES[move]
    return min(max(r + dr, 0), spec.rows - 1) * spec.cols + min(max(c + dc, 0), spec.cols - 1)


def epsilon_soft_policy(actions: np.ndarray, n_actions: int, epsilon: float) -> Policy:
    probs = np.full((actions.size, n_actions), epsilon / n_actions)
    probs[np.arange(actions.size), actions] += 1.0 - epsilon
    return Policy(probs)


def cliffwalking_policies(spec: CliffWalkingSpec = CliffWalkingSpec(), epsilons=(0.1, 0.2, 0.3)):
    actions = shortest_path_actions(spec)
    return [epsilon_soft_policy(actions, 4, eps) for eps in epsilons]


def build_garnet(spec: GarnetSpec, rng: np.random.Generator) -> Mdp:
    """Each ``(s, a)`` gets ``branching`` distinct successors with Dirichlet(1) weights."""
    n, m, b = spec.n_states, spec.n_actions, spec.branching
    kernel = np.zeros((n, m, n))
    for s in range(n):
        for a in range(m):
            succ = rng.choice(n, size=b, replace=False)
            kernel[s, a, succ] = rng.dirichlet(np.ones(b))
    # renormalize away Dirichlet round-off
    kernel /= kernel.sum(axis=2, keepdims=True)
    reward = rng.uniform(-spec.reward_scale, spec.reward_scale, size=(n, m))
    return Mdp(kernel, reward, spec.gamma, name="garnet")


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> Policy:
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


def perturb_kernel(mdp: Mdp, magnitude: float, rng: np.random.Generator) -> Mdp:
    """Mix each row with an independent random row: ``(1 - m) P + m noise``."""
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    if magnitude == 0:
        return mdp
    noise = rng.dirichlet(np.ones(mdp.n_states), size=(mdp.n_states, mdp.n_actions))
    kernel = (1.0 - magnitude) * mdp.kernel + magnitude * noise
    kernel /= kernel.sum(axis=2, keepdims=True)
    return Mdp(kernel, mdp.reward, mdp.gamma, mdp.start_state, mdp.name, mdp.terminal_states)
