"""Estimator wrapper: learn a shared representation from logged per-agent transitions."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .federation import Schedule, rates_at, server_average
from .learners import _apply_row_updates, weight_steps
from .mdp import Observation
from .representation import DEFAULT_BOUND, init_features
from .validation import (
    check_agent_states,
    check_positive,
    check_positive_int,
    check_states,
    check_transitions,
)


class SharedRepresentationTD(TransformerMixin, BaseEstimator):
    """Personalized federated TD(0) with a shared feature matrix.

    ``fit`` replays each agent's transitions in logged order, ``K`` per
    round, so every agent's rows should come from one continuing
    trajectory. ``predict`` maps ``[agent, state]`` pairs to values and
    ``transform`` maps states to their learned feature rows.

    Fitted attributes: ``components_`` (features, ``n_states x d``),
    ``coef_`` (per-agent weights, ``n_agents x d``), ``n_rounds_``.
    """

    def __init__(self, n_features=4, K=10, gamma=0.9, alpha0=1.0, beta0=1.0,
                 alpha_exponent=5 / 6, beta_exponent=1.0, bound=DEFAULT_BOUND,
                 n_states=None, aggregate="sum", random_state=0):
        self.n_features = n_features
        self.K = K
        self.gamma = gamma
        self.alpha0 = alpha0
        self.beta0 = beta0
        self.alpha_exponent = alpha_exponent
        self.beta_exponent = beta_exponent
        self.bound = bound
        self.n_states = n_states
        self.aggregate = aggregate
        self.random_state = random_state

    def _validate_params(self):
        check_positive_int(self.n_features, "n_features")
        check_positive_int(self.K, "K")
        check_positive(self.bound, "bound")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if self.aggregate not in ("sum", "mean"):
            raise ValueError(f"aggregate must be 'sum' or 'mean', got {self.aggregate!r}")
        return Schedule(self.alpha0, self.beta0, self.alpha_exponent, self.beta_exponent)

    def fit(self, X, y=None):
        schedule = self._validate_params()
        agents, states, next_states, rewards = check_transitions(X)
        n_states = int(max(states.max(), next_states.max())) + 1
        if self.n_states is not None:
            if n_states > self.n_states:
                raise ValueError(f"state index {n_states - 1} exceeds n_states={self.n_states}")
            n_states = self.n_states
        n_agents = int(agents.max()) + 1
        streams = []
        for i in range(n_agents):
            mask = agents == i
            streams.append([Observation(int(s), float(r), int(s2))
                            for s, r, s2 in zip(states[mask], rewards[mask], next_states[mask])])
        n_rounds = min(len(st) for st in streams) // self.K
        if n_rounds < 1:
            raise ValueError(f"every agent needs at least K={self.K} transitions")

        rng = np.random.default_rng(self.random_state)
        phi = init_features(n_states, self.n_features, rng)
        thetas = [np.zeros(self.n_features) for _ in range(n_agents)]
        for t in range(n_rounds):
            alpha, beta = rates_at(schedule, t)
            local_phis = []
            for i in range(n_agents):
                batch = streams[i][t * self.K:(t + 1) * self.K]
                thetas[i] = weight_steps(phi, thetas[i], batch, alpha, self.gamma, self.bound)
                s = np.array([o.state for o in batch], dtype=np.intp)
                s2 = np.array([o.next_state for o in batch], dtype=np.intp)
                r = np.array([o.reward for o in batch])
                deltas = r + self.gamma * (phi[s2] @ thetas[i]) - phi[s] @ thetas[i]
                local_phis.append(_apply_row_updates(phi, s, deltas, thetas[i], beta, self.aggregate, "rows"))
            phi = server_average(local_phis)

        self.components_ = phi
        self.coef_ = np.stack(thetas)
        self.n_agents_ = n_agents
        self.n_states_ = n_states
        self.n_rounds_ = n_rounds
        return self

    def predict(self, X):
        check_is_fitted(self, "components_")
        agents, states = check_agent_states(X, self.n_agents_, self.n_states_)
        return np.einsum("nd,nd->n", self.components_[states], self.coef_[agents])

    def transform(self, X):
        check_is_fitted(self, "components_")
        return self.components_[check_states(X, self.n_states_)]

    def value_table(self) -> np.ndarray:
        """All agents' value estimates, shaped ``(n_agents, n_states)``."""
        check_is_fitted(self, "components_")
        return self.coef_ @ self.components_.T
