"""Round orchestration: local updates on every agent, server averaging, baselines."""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import PolicyEvaluationProblem, RankDeficientFeaturesError
from .learners import LocalHyperparams, local_q_round, local_td_round, weight_update
from .mdp import ChainSampler, exact_value, optimal_q_value
from .representation import DEFAULT_BOUND, init_features

VARIANTS = ("pfedtd-rep", "pfedq-rep", "fedtd-fixed-phi", "independent")

# spawn-key prefixes for SeedSequence; an agent's stream depends only on (seed, i)
_PHI_KEY, _AGENT_KEY = 0, 1


@dataclass(frozen=True)
class Schedule:
    """Decaying two-timescale rates ``alpha0/(t+2)^a`` and ``beta0/(t+2)^b``."""

    alpha0: float = 1.0
    beta0: float = 1.0
    alpha_exponent: float = 5 / 6
    beta_exponent: float = 1.0

    def __post_init__(self):
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")
        if self.alpha_exponent < 0 or self.beta_exponent < 0:
            raise ValueError("exponents must be non-negative")
        if self.alpha_exponent > self.beta_exponent:
            raise ValueError("beta_t / alpha_t must be non-increasing: need alpha_exponent <= beta_exponent")


def rates_at(schedule: Schedule, t: int) -> tuple[float, float]:
    if t < 0:
        raise ValueError("round index must be non-negative")
    return _rates(schedule, t)


def _rates(schedule, t):
    return (schedule.alpha0 / (t + 2) ** schedule.alpha_exponent,
            schedule.beta0 / (t + 2) ** schedule.beta_exponent)


def server_average(locals_: list[np.ndarray]) -> np.ndarray:
    if not locals_:
        raise ValueError("nothing to average")
    shape = np.shape(locals_[0])
    if any(np.shape(p) != shape for p in locals_):
        raise ValueError("local feature matrices disagree in shape")
    return np.mean(np.stack(locals_), axis=0)


@dataclass(frozen=True)
class FederationSetup:
    """Everything that determines a training run besides the round count."""

    mdps: tuple
    policies: tuple
    d: int = 6
    K: int = 10
    schedule: Schedule = Schedule()
    bound: float = DEFAULT_BOUND
    variant: str = "pfedtd-rep"
    seed: int = 0
    aggregate: str = "sum"
    normalization: str = "rows"
    epsilon_greedy: float = 0.1
    episode_length: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mdps", tuple(self.mdps))
        object.__setattr__(self, "policies", tuple(self.policies))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.mdps) == 0 or len(self.mdps) != len(self.policies):
            raise ValueError("need one policy per agent MDP")
        if self.d < 1 or self.K < 1:
            raise ValueError("d and K must be positive")
        if self.bound <= 0:
            raise ValueError("bound must be positive")
        shapes = {(m.n_states, m.n_actions) for m in self.mdps}
        if len(shapes) != 1:
            raise ValueError("agents must share state and action spaces")

    @property
    def n_agents(self) -> int:
        return len(self.mdps)

    @property
    def feature_rows(self) -> int:
        m = self.mdps[0]
        return m.n_states * m.n_actions if self.variant == "pfedq-rep" else m.n_states

    def replace(self, **changes) -> "FederationSetup":
        return dataclasses.replace(self, **changes)

    def hyper(self, t: int) -> LocalHyperparams:
        alpha, beta = rates_at(self.schedule, t)
        return LocalHyperparams(self.K, alpha, beta, self.epsilon_greedy, self.bound,
                                self.aggregate, self.normalization)


@dataclass
class FederationState:
    phi: np.ndarray
    thetas: list
    chain_states: list
    round: int = 0
    local_phis: list | None = None
    episodes: list = field(default_factory=list)
    steps_in_episode: list = field(default_factory=list)
    last_phi_step: float = float("inf")

    def agent_phi(self, i: int) -> np.ndarray:
        return self.phi if self.local_phis is None else self.local_phis[i]


def agent_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_AGENT_KEY, i)))


def init_state(setup: FederationSetup) -> tuple[FederationState, list[ChainSampler]]:
    """Zero weights, shared random unit-row features, per-agent private samplers."""
    phi_rng = np.random.default_rng(np.random.SeedSequence(setup.seed, spawn_key=(_PHI_KEY,)))
    phi0 = init_features(setup.feature_rows, setup.d, phi_rng)
    n = setup.n_agents
    samplers = [
        ChainSampler(m, None if setup.variant == "pfedq-rep" else p, agent_rng(setup.seed, i))
        for i, (m, p) in enumerate(zip(setup.mdps, setup.policies))
    ]
    state = FederationState(
        phi=phi0,
        thetas=[np.zeros(setup.d) for _ in range(n)],
        chain_states=[s.state for s in samplers],
        local_phis=[phi0.copy() for _ in range(n)] if setup.variant == "independent" else None,
        episodes=[0] * n,
        steps_in_episode=[0] * n,
    )
    return state, samplers


def _count_episodes(observations, terminals, episode_length, episodes, steps):
    for obs in observations:
        steps += 1
        if obs.state in terminals or steps >= episode_length:
            episodes += 1
            steps = 0
    return episodes, steps


def _map(fn, n, n_jobs):
    if n_jobs > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def run_round(state: FederationState, samplers: list[ChainSampler], setup: FederationSetup) -> FederationState:
    """One communication round; ``samplers`` advance in place.

    Every agent starts from the same round-``t`` features. Feature and weight
    merging happen only after all agents finish.
    """
    hyper = setup.hyper(state.round)
    variant = setup.variant
    n = setup.n_agents

    if variant == "fedtd-fixed-phi":
        shared = state.thetas[0]

        def work(i):
            return weight_update(state.phi, shared, samplers[i], hyper)
    elif variant == "pfedq-rep":
        def work(i):
            return local_q_round(state.phi, state.thetas[i], samplers[i], hyper)
    else:
        def work(i):
            return local_td_round(state.agent_phi(i), state.thetas[i], samplers[i], hyper)

    results = _map(work, n, setup.n_jobs)

    episodes, steps = list(state.episodes), list(state.steps_in_episode)
    for i, res in enumerate(results):
        observations = res[1] if variant == "fedtd-fixed-phi" else res.observations
        terminals = samplers[i].mdp.terminal_states
        episodes[i], steps[i] = _count_episodes(observations, terminals, setup.episode_length,
                                                episodes[i], steps[i])

    local_phis = None
    if variant == "fedtd-fixed-phi":
        avg = np.mean(np.stack([r[0] for r in results]), axis=0)
        thetas = [avg.copy() for _ in range(n)]
        phi = state.phi
        step = 0.0
    elif variant == "independent":
        thetas = [r.new_theta for r in results]
        local_phis = [r.local_phi for r in results]
        phi = server_average(local_phis)
        step = max(float(np.linalg.norm(new - old)) for new, old in zip(local_phis, state.local_phis))
    else:
        thetas = [r.new_theta for r in results]
        phi = server_average([r.local_phi for r in results])
        step = float(np.linalg.norm(phi - state.phi))

    return FederationState(
        phi=phi,
        thetas=thetas,
        chain_states=[s.state for s in samplers],
        round=state.round + 1,
        local_phis=local_phis,
        episodes=episodes,
        steps_in_episode=steps,
        last_phi_step=step,
    )


@dataclass
class LyapunovTrace:
    """Per-round diagnostics; rows are rounds, columns agents where applicable.

    ``tracking_error`` is the per-agent ``||theta_{t+1} - y(Phi_t)||^2``;
    ``lyapunov`` combines its agent mean with the agent mean of
    ``phi_residual`` (identical columns unless features are local).
    """

    lyapunov: np.ndarray
    phi_residual: np.ndarray
    beta_prev: np.ndarray
    tracking_error: np.ndarray
    value_mse: np.ndarray
    feature_stationarity: np.ndarray
    episodes: np.ndarray
    phi_drift: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def mean_tracking(self) -> np.ndarray:
        return self.tracking_error.mean(axis=1)

    @property
    def n_rounds(self) -> int:
        return self.alpha.size


class _Recorder:
    def __init__(self, setup: FederationSetup):
        self.setup = setup
        self.q_mode = setup.variant == "pfedq-rep"
        if self.q_mode:
            self.problems = None
            self.truth = [optimal_q_value(m).ravel() for m in setup.mdps]
        else:
            self.problems = [PolicyEvaluationProblem(m, p) for m, p in zip(setup.mdps, setup.policies)]
            self.truth = [exact_value(m, p) for m, p in zip(setup.mdps, setup.policies)]
        self.rows = []
        self.phis = []

    def record(self, before: FederationState, after: FederationState):
        n = self.setup.n_agents
        alpha, beta = rates_at(self.setup.schedule, before.round)
        tracking = np.full(n, np.nan)
        mse = np.empty(n)
        drift = np.empty(n)
        h_bars = []
        for i in range(n):
            phi_t = before.agent_phi(i)
            theta = after.thetas[i]
            if self.q_mode:
                mse[i] = float(np.mean((phi_t @ theta - self.truth[i]) ** 2))
            else:
                mse[i] = self.problems[i].weighted_mse(phi_t @ theta, self.truth[i])
                try:
                    y = self.problems[i].fixed_point(phi_t)
                except RankDeficientFeaturesError:
                    y = None
                if y is not None:
                    tracking[i] = float(np.sum((theta - y) ** 2))
                    h_bars.append(self.problems[i].expected_feature_update(phi_t, y))
            drift[i] = float(np.linalg.norm(after.agent_phi(i) - phi_t))
        self.rows.append((alpha, beta, tracking, mse, np.array(after.episodes, dtype=float), drift,
                          self._stationarity(h_bars, before.local_phis is None)))
        if before.local_phis is None:
            self.phis.append(before.phi[None])
        else:
            self.phis.append(np.stack(before.local_phis))

    def _stationarity(self, h_bars, shared) -> float:
        # squared norm of the mean-field feature update at the tracked optimum;
        # local features are scored per agent instead
        if self.q_mode or len(h_bars) < self.setup.n_agents:
            return float("nan")
        if shared:
            return float(np.sum(np.mean(h_bars, axis=0) ** 2))
        return float(np.mean([np.sum(h ** 2) for h in h_bars]))

    def finish(self, reference_phis) -> LyapunovTrace:
        alpha = np.array([r[0] for r in self.rows])
        beta = np.array([r[1] for r in self.rows])
        tracking = np.stack([r[2] for r in self.rows])
        phis = np.stack(self.phis)
        ref = np.asarray(reference_phis)
        if ref.ndim == 2:
            ref = ref[None]
        phi_res = np.sum((phis - ref[None]) ** 2, axis=(2, 3))
        phi_res = np.broadcast_to(phi_res, tracking.shape).copy()
        t = np.arange(alpha.size)
        # beta_{t-1} from the same formula, so round 0 uses beta0 / 1
        beta_prev = self.setup.schedule.beta0 / (t + 1) ** self.setup.schedule.beta_exponent
        lyap = phi_res.mean(axis=1) + beta_prev / alpha * tracking.mean(axis=1)
        return LyapunovTrace(
            lyapunov=lyap,
            phi_residual=phi_res,
            beta_prev=beta_prev,
            tracking_error=tracking,
            value_mse=np.stack([r[3] for r in self.rows]),
            feature_stationarity=np.array([r[6] for r in self.rows]),
            episodes=np.stack([r[4] for r in self.rows]),
            phi_drift=np.stack([r[5] for r in self.rows]),
            alpha=alpha,
            beta=beta,
        )


def run_training(setup: FederationSetup, T: int, record: bool = True, reference_phi=None,
                 state=None, samplers=None):
    """Run ``T`` rounds and return ``(trace, final_state)``.

    ``reference_phi`` is the feature matrix the Lyapunov residual is measured
    against; by default the run's own terminal features. ``trace`` is None
    when ``record`` is False. Pass ``state``/``samplers`` to resume.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if state is None:
        state, samplers = init_state(setup)
    recorder = _Recorder(setup) if record else None
    for _ in range(T):
        new_state = run_round(state, samplers, setup)
        if recorder is not None:
            recorder.record(state, new_state)
        state = new_state
    trace = None
    if recorder is not None:
        if reference_phi is None:
            reference_phi = state.phi if state.local_phis is None else np.stack(state.local_phis)
        trace = recorder.finish(reference_phi)
    return trace, state


def save_checkpoint(state: FederationState, samplers: list[ChainSampler], path):
    data = {
        "round": state.round,
        "phi": state.phi.tolist(),
        "thetas": [t.tolist() for t in state.thetas],
        "chain_states": [int(s.state) for s in samplers],
        "local_phis": None if state.local_phis is None else [p.tolist() for p in state.local_phis],
        "episodes": list(state.episodes),
        "steps_in_episode": list(state.steps_in_episode),
        "last_phi_step": state.last_phi_step,
        "rng_states": [s.rng.bit_generator.state for s in samplers],
    }
    Path(path).write_text(json.dumps(data))


def load_checkpoint(setup: FederationSetup, path) -> tuple[FederationState, list[ChainSampler]]:
    data = json.loads(Path(path).read_text())
    samplers = []
    for i, (m, p) in enumerate(zip(setup.mdps, setup.policies)):
        rng = np.random.default_rng()
        rng.bit_generator.state = data["rng_states"][i]
        policy = None if setup.variant == "pfedq-rep" else p
        samplers.append(ChainSampler(m, policy, rng, state=data["chain_states"][i]))
    state = FederationState(
        phi=np.asarray(data["phi"]),
        thetas=[np.asarray(t) for t in data["thetas"]],
        chain_states=list(data["chain_states"]),
        round=data["round"],
        local_phis=None if data["local_phis"] is None else [np.asarray(p) for p in data["local_phis"]],
        episodes=list(data["episodes"]),
        steps_in_episode=list(data["steps_in_episode"]),
        last_phi_step=data["last_phi_step"],
    )
    return state, samplers
