"""Property suites behind the ``check`` command."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .analysis import (
    MixingError,
    PolicyEvaluationProblem,
    expected_updates,
    lipschitz_check,
    td_fixed_point,
    tv_mixing_profile,
)
from .envs import CliffWalkingSpec, GarnetSpec, build_cliffwalking, build_garnet, cliffwalking_policies
from .learners import grad_g, grad_h
from .mdp import Observation, Policy, ReducibleChainError, exact_value, stationary_distribution, transition_under_policy
from .representation import DEFAULT_BOUND, init_features


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<12} {self.detail}  ({self.seconds:.2f}s)"


def _timed(name, fn):
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def _td_loss(phi_s, theta, target):
    return 0.5 * (phi_s @ theta - target) ** 2


def _ball_point(rng, d, radius):
    x = rng.standard_normal(d)
    return x / np.linalg.norm(x) * radius * rng.random() ** (1.0 / d)


def gradient_suite(n: int = 1000, seed: int = 0, tol: float = 1e-6, step: float = 1e-5):
    """Compare the analytic maps with central differences of the half squared TD error.

    The bootstrapped target is held at its base-point value, as the loss
    is defined with the target treated as a constant.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    failures = 0
    gamma = 0.9
    for _ in range(n):
        n_states, d = int(rng.integers(2, 8)), int(rng.integers(1, 7))
        phi = np.stack([_ball_point(rng, d, 1.0) for _ in range(n_states)])
        theta = _ball_point(rng, d, DEFAULT_BOUND)
        obs = Observation(int(rng.integers(n_states)), float(rng.uniform(-1, 1)), int(rng.integers(n_states)))
        target = obs.reward + gamma * phi[obs.next_state] @ theta
        s = obs.state
        eye = np.eye(d)
        fd_theta = np.array([
            _td_loss(phi[s], theta + step * e, target) - _td_loss(phi[s], theta - step * e, target) for e in eye
        ]) / (2 * step)
        fd_row = np.array([
            _td_loss(phi[s] + step * e, theta, target) - _td_loss(phi[s] - step * e, theta, target) for e in eye
        ]) / (2 * step)
        row, h = grad_h(phi, theta, obs, gamma)
        g = grad_g(phi, theta, obs, gamma)
        for analytic, numeric in ((g, -fd_theta), (h, -fd_row)):
            rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
            worst = max(worst, rel)
            failures += int(rel > tol)
        failures += int(row != s)
    return failures == 0, f"{n} instances, {failures} failures, worst relative error {worst:.2e}"


def _garnet_with_mu(rng, n_states, n_actions, branching):
    policy = Policy.uniform(n_states, n_actions)
    while True:
        mdp = build_garnet(GarnetSpec(n_states, n_actions, branching), rng)
        try:
            mu = stationary_distribution(transition_under_policy(mdp, policy))
        except ReducibleChainError:
            continue
        # tabular features need every state recurrent
        if mu.min() > 1e-9:
            return mdp, policy


def fixed_point_suite(n: int = 50, seed: int = 0, tol_identity: float = 1e-10, tol_stationary: float = 1e-8):
    """Tabular features recover exact values; random features zero the mean weight update."""
    rng = np.random.default_rng(seed)
    worst_identity = worst_g = 0.0
    for _ in range(n):
        n_states = int(rng.integers(5, 21))
        mdp, policy = _garnet_with_mu(rng, n_states, 2, 3)
        sol = td_fixed_point(mdp, policy, np.eye(n_states))
        worst_identity = max(worst_identity, float(np.max(np.abs(sol.theta_star - exact_value(mdp, policy)))))
        phi = init_features(n_states, 4, rng)
        y = PolicyEvaluationProblem(mdp, policy).fixed_point(phi)
        g_bar, _ = expected_updates(mdp, policy, phi, y)
        worst_g = max(worst_g, float(np.linalg.norm(g_bar)))
    ok = worst_identity <= tol_identity and worst_g <= tol_stationary
    return ok, f"{n} Garnets, max |y(I) - V| = {worst_identity:.1e}, max ||g_bar(y)|| = {worst_g:.1e}"


def lipschitz_suite(n: int = 10_000, seed: int = 0, gamma: float = 0.9, bound: float = DEFAULT_BOUND):
    report = lipschitz_check(gamma, bound, n, np.random.default_rng(seed))
    detail = (f"{n} pairs, {report.violations} violations; max ratio g {report.max_ratio_g:.3g} <= "
              f"{report.bound_g:g}, h {report.max_ratio_h:.3g} <= {report.bound_h:g}")
    return report.violations == 0, detail


def mixing_suite(delta: float = 1e-3, k_max: int = 1000):
    spec = CliffWalkingSpec()
    mdp = build_cliffwalking(spec)
    parts, ok = [], True
    for eps, policy in zip((0.1, 0.2, 0.3), cliffwalking_policies(spec)):
        p_pi = transition_under_policy(mdp, policy)
        try:
            prof = tv_mixing_profile(p_pi, stationary_distribution(p_pi), k_max=k_max, delta=delta)
            parts.append(f"eps={eps}: rho={prof.fitted_rho:.3f} tau={prof.tau_delta}")
            ok &= prof.fitted_rho < 1
        except MixingError as err:
            parts.append(f"eps={eps}: {err}")
            ok = False
    cycle = np.array([[0.0, 1.0], [1.0, 0.0]])
    try:
        tv_mixing_profile(cycle, np.array([0.5, 0.5]), k_max=k_max, delta=delta)
        parts.append("2-cycle accepted")
        ok = False
    except MixingError:
        parts.append("2-cycle rejected")
    return ok, "; ".join(parts)


SUITES = {
    "gradients": gradient_suite,
    "fixed-point": fixed_point_suite,
    "lipschitz": lipschitz_suite,
    "mixing": mixing_suite,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(SUITES) if names is None else names
    return [_timed(name, SUITES[name]) for name in names]
