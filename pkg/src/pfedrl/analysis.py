"""Theory instrumentation: TD fixed points, expected update maps, Lyapunov
function, mixing profiles and Lipschitz audits."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mdp import Mdp, Observation, Policy, reward_under_policy, stationary_distribution, transition_under_policy
from .learners import grad_g, grad_h_dense
from .representation import clip_weights, init_features, project_rows


class RankDeficientFeaturesError(np.linalg.LinAlgError):
    """The projected Bellman system ``A theta = b`` has no unique solution."""


class MixingError(RuntimeError):
    """The chain's total-variation profile does not decay (e.g. a periodic chain)."""


@dataclass
class FixedPointSolution:
    theta_star: np.ndarray
    residual_norm: float


class PolicyEvaluationProblem:
    """Cached ``mu``, ``P_pi``, ``r_pi`` of one agent for repeated fixed-point solves."""

    def __init__(self, mdp: Mdp, policy: Policy):
        self.mdp = mdp
        self.policy = policy
        self.p_pi = transition_under_policy(mdp, policy)
        self.r_pi = reward_under_policy(mdp, policy)
        self.mu = stationary_distribution(self.p_pi)
        weighted = self.mu[:, None] * (np.eye(mdp.n_states) - mdp.gamma * self.p_pi)
        self._m = weighted
        self._c = self.mu * self.r_pi

    def system(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``A = Phi^T D (I - gamma P) Phi`` and ``b = Phi^T D r``."""
        return phi.T @ self._m @ phi, phi.T @ self._c

    def fixed_point(self, phi: np.ndarray, cond_limit: float = 1e12) -> np.ndarray:
        a, b = self.system(phi)
        if not np.all(np.isfinite(a)) or np.linalg.cond(a) > cond_limit:
            raise RankDeficientFeaturesError("A = Phi^T D (I - gamma P) Phi is singular")
        return np.linalg.solve(a, b)

    def expected_feature_update(self, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Steady-state mean of the feature map, ``(mu * E[delta | s]) theta^T``."""
        v = phi @ theta
        row_delta = self.mu * (self.r_pi + self.mdp.gamma * (self.p_pi @ v) - v)
        return row_delta[:, None] * np.asarray(theta)[None, :]

    def weighted_mse(self, values: np.ndarray, truth: np.ndarray) -> float:
        return float(self.mu @ (values - truth) ** 2)


def td_fixed_point(mdp: Mdp, policy: Policy, phi: np.ndarray) -> FixedPointSolution:
    """TD(0) fixed point ``y(Phi)`` for a fixed feature matrix."""
    problem = PolicyEvaluationProblem(mdp, policy)
    theta = problem.fixed_point(phi)
    a, b = problem.system(phi)
    return FixedPointSolution(theta, float(np.linalg.norm(b - a @ theta)))


def expected_updates(mdp: Mdp, policy: Policy, phi: np.ndarray, theta: np.ndarray):
    """Steady-state means of the g and h maps by exact summation over ``(s, a, s')``.

    Returns ``(g_bar, h_bar)`` with ``g_bar`` of length d and ``h_bar`` shaped
    like ``phi``.
    """
    mu = stationary_distribution(transition_under_policy(mdp, policy))
    v = phi @ theta
    # delta[s, a, s'] = R(s, a) + gamma V(s') - V(s)
    delta = mdp.reward[:, :, None] + mdp.gamma * v[None, None, :] - v[:, None, None]
    weight = mu[:, None, None] * policy.probs[:, :, None] * mdp.kernel
    row_delta = np.einsum("sat,sat->s", weight, delta)
    g_bar = np.einsum("s,sd->d", row_delta, phi)
    h_bar = row_delta[:, None] * np.asarray(theta)[None, :]
    return g_bar, h_bar


def lyapunov(phi_t, thetas_next, phi_star, y_of_phi_t, beta_prev: float, alpha_t: float):
    """Weighted Lyapunov value coupling the feature residual and weight tracking.

    Returns ``(M, phi_term, tracking_term)`` where ``tracking_term`` is the
    unweighted ``(1/N) sum ||theta_i - y_i(Phi_t)||^2``.
    """
    phi_term = float(np.sum((np.asarray(phi_t) - np.asarray(phi_star)) ** 2))
    tracking = float(np.mean([
        np.sum((np.asarray(th) - np.asarray(y)) ** 2) for th, y in zip(thetas_next, y_of_phi_t, strict=True)
    ]))
    return phi_term + (beta_prev / alpha_t) * tracking, phi_term, tracking


@dataclass
class MixingProfile:
    tv_by_step: np.ndarray
    fitted_C: float
    fitted_rho: float
    tau_delta: int
    delta: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tv_by_step"] = self.tv_by_step.tolist()
        return out


def tv_mixing_profile(p_pi: np.ndarray, mu: np.ndarray, k_max: int = 1000, delta: float = 0.01) -> MixingProfile:
    """Worst-case TV distance ``d_k = max_x TV(P^k(x, .), mu)`` for ``k = 0..k_max``.

    ``(C, rho)`` come from a least-squares fit of ``log d_k`` on ``k`` over
    the steps where ``d_k`` is above round-off.
    """
    p_pi = np.asarray(p_pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    power = np.eye(p_pi.shape[0])
    tv = [0.5 * np.abs(power - mu).sum(axis=1).max()]
    floor = 1e-13
    for _ in range(k_max):
        power = power @ p_pi
        tv.append(0.5 * np.abs(power - mu).sum(axis=1).max())
        if tv[-1] <= floor:
            break
    tv = np.array(tv)
    hits = np.nonzero(tv <= delta)[0]
    if hits.size == 0:
        raise MixingError(f"TV distance stayed above {delta} for {k_max} steps (d_k ends at {tv[-1]:.3g})")
    tau = int(hits[0])
    ks = np.arange(1, tv.size)
    keep = tv[1:] > floor * 10
    if keep.sum() >= 2:
        slope, intercept = np.polyfit(ks[keep], np.log(tv[1:][keep]), 1)
        rho, c = float(np.exp(slope)), float(np.exp(intercept))
    else:
        rho, c = 0.0, float(tv[0])
    if rho >= 1.0:
        raise MixingError(f"fitted rho = {rho:.4f} >= 1")
    return MixingProfile(tv, c, rho, tau, delta)


def lipschitz_constants(gamma: float, bound: float) -> tuple[float, float]:
    """Closed-form constants ``(L_g, L_h)`` for rows in the unit ball and ``||theta|| <= B``."""
    return max(1 + gamma, (2 + 2 * gamma) * bound), max((1 + gamma) * bound**2, (2 + 2 * gamma) * bound)


@dataclass
class LipschitzReport:
    samples_tested: int
    max_ratio_g: float
    max_ratio_h: float
    bound_g: float
    bound_h: float
    violations: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ball(rng, n, d, radius):
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * (radius * rng.random((n, 1)) ** (1.0 / d))


def lipschitz_check(gamma: float, bound: float, n_samples: int, rng: np.random.Generator,
                    n_states: int = 5, d: int = 4, reward_bound: float = 1.0) -> LipschitzReport:
    """Audit the g/h Lipschitz inequalities on random feasible pairs.

    Half the pairs are drawn independently, half as small perturbations of
    a feasible point (probing the local slope). Rewards lie in
    ``[-reward_bound, reward_bound]``.
    """
    if bound <= 0:
        raise ValueError("bound must be positive")
    l_g, l_h = lipschitz_constants(gamma, bound)
    max_g = max_h = 0.0
    violations = 0
    for i in range(n_samples):
        theta1 = _ball(rng, 1, d, bound)[0]
        phi1 = _ball(rng, n_states, d, 1.0)
        if i % 2 == 0:
            theta2 = _ball(rng, 1, d, bound)[0]
            phi2 = _ball(rng, n_states, d, 1.0)
        else:
            scale = 10.0 ** rng.uniform(-6, -1)
            theta2 = clip_weights(theta1 + scale * rng.standard_normal(d), bound)
            phi2 = project_rows(phi1 + scale * rng.standard_normal(phi1.shape))
        obs = Observation(int(rng.integers(n_states)), float(rng.uniform(-reward_bound, reward_bound)),
                          int(rng.integers(n_states)))
        gap = np.linalg.norm(theta1 - theta2) + np.linalg.norm(phi1 - phi2)
        if gap == 0:
            continue
        dg = np.linalg.norm(grad_g(phi1, theta1, obs, gamma) - grad_g(phi2, theta2, obs, gamma))
        dh = np.linalg.norm(grad_h_dense(phi1, theta1, obs, gamma) - grad_h_dense(phi2, theta2, obs, gamma))
        rg, rh = dg / gap, dh / gap
        max_g, max_h = max(max_g, rg), max(max_h, rh)
        violations += int(rg > l_g * (1 + 1e-12)) + int(rh > l_h * (1 + 1e-12))
    return LipschitzReport(n_samples, float(max_g), float(max_h), l_g, l_h, violations)


def y_lipschitz_ratio(mdp: Mdp, policy: Policy, d: int, n_pairs: int, rng: np.random.Generator,
                      max_cond: float = 1e4) -> float:
    """Largest observed ``||y(Phi1) - y(Phi2)|| / ||Phi1 - Phi2||`` over well-conditioned pairs."""
    problem = PolicyEvaluationProblem(mdp, policy)
    worst = 0.0
    for _ in range(n_pairs):
        phi1 = init_features(mdp.n_states, d, rng)
        phi2 = project_rows(phi1 + 0.05 * rng.standard_normal(phi1.shape))
        if max(np.linalg.cond(problem.system(p)[0]) for p in (phi1, phi2)) > max_cond:
            continue
        ratio = np.linalg.norm(problem.fixed_point(phi1) - problem.fixed_point(phi2)) / np.linalg.norm(phi1 - phi2)
        worst = max(worst, float(ratio))
    return worst


@dataclass
class ReferenceOptimum:
    phi: np.ndarray
    thetas: list
    converged: bool
    last_step: float
    tracking_error: float


def reference_optimum(setup, long_T: int, tol: float = 1e-6) -> ReferenceOptimum:
    """Long-run stand-in for the equilibrium near ``Phi_0``.

    Runs ``pfedtd-rep`` from the same initialization for ``long_T`` rounds.
    ``converged`` is False when the final per-round feature step exceeds ``tol``.
    """
    from .federation import run_training

    _, state = run_training(setup.replace(variant="pfedtd-rep"), long_T, record=False)
    problems = [PolicyEvaluationProblem(m, p) for m, p in zip(setup.mdps, setup.policies)]
    ys = [pr.fixed_point(state.phi) for pr in problems]
    tracking = float(np.mean([np.sum((th - y) ** 2) for th, y in zip(state.thetas, ys)]))
    return ReferenceOptimum(state.phi, list(state.thetas), state.last_phi_step <= tol,
                            state.last_phi_step, tracking)
