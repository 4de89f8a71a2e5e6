"""Experiment configuration, execution, agent-count sweeps and metrics output."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import reference_optimum
from .envs import (
    CliffWalkingSpec,
    GarnetSpec,
    build_cliffwalking,
    build_garnet,
    cliffwalking_policies,
    perturb_kernel,
    random_policy,
)
from .federation import VARIANTS, FederationSetup, Schedule, run_training
from .mdp import Policy, stationary_distribution, transition_under_policy

METRICS_HEADER = (
    "round", "agent_id", "value_mse", "tracking_error", "lyapunov", "phi_drift",
    "alpha_t", "beta_t", "episodes_elapsed", "wall_seconds",
)
AGGREGATE_ID = "all"
_NOISE_KEY = 2


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.field = field
        self.line = line


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


@dataclass
class ExperimentConfig:
    env: str
    agents: int
    d: int
    K: int
    T: int
    gamma: float
    alpha0: float
    beta0: float
    variant: str
    alpha_exponent: float = 5 / 6
    beta_exponent: float = 1.0
    bound: float = 10.0
    seed: int = 0
    reward_scale: float = 1.0
    kernel_noise: float = 0.0
    # cliffwalking
    grid_rows: int = 4
    grid_cols: int = 12
    step_reward: float = -1.0
    cliff_reward: float = -100.0
    slip_prob: float = 0.0
    policy_epsilons: tuple = (0.1, 0.2, 0.3)
    # garnet
    garnet_states: int = 10
    garnet_actions: int = 2
    garnet_branching: int = 3
    garnet_reward_scale: float = 1.0
    garnet_policy: str = "uniform"
    env_seed: int = 0
    # learner plumbing
    aggregate: str = "sum"
    normalization: str = "rows"
    epsilon_greedy: float = 0.1
    episode_length: int = 100
    n_jobs: int = 1
    # metrics
    mse_fraction: float = 0.05
    patience: int = 10
    designated_agent: int = 0
    reference_T: int = 0
    output: str = "out"

    def validate(self):
        def need(cond, name, message):
            if not cond:
                raise ConfigError(f"{name}: {message}", field=name)

        need(self.env in ("cliffwalking", "garnet"), "env", "must be 'cliffwalking' or 'garnet'")
        need(self.variant in VARIANTS, "variant", f"must be one of {', '.join(VARIANTS)}")
        for name in ("agents", "d", "K", "T", "episode_length", "patience", "n_jobs"):
            need(getattr(self, name) >= 1, name, "must be a positive integer")
        need(0.0 < self.gamma < 1.0, "gamma", "must lie in (0, 1)")
        for name in ("alpha0", "beta0", "bound", "reward_scale"):
            need(getattr(self, name) > 0, name, "must be positive")
        need(self.alpha_exponent <= self.beta_exponent, "alpha_exponent",
             "must not exceed beta_exponent (beta_t/alpha_t non-increasing)")
        need(0.0 <= self.kernel_noise <= 1.0, "kernel_noise", "must lie in [0, 1]")
        need(0.0 <= self.slip_prob < 1.0, "slip_prob", "must lie in [0, 1)")
        need(len(self.policy_epsilons) >= 1 and all(0 <= e <= 1 for e in self.policy_epsilons),
             "policy_epsilons", "must be a comma list of values in [0, 1]")
        need(self.garnet_policy in ("uniform", "random", "random_per_agent"), "garnet_policy",
             "must be uniform, random or random_per_agent")
        need(0 <= self.designated_agent < self.agents, "designated_agent", "must index an agent")
        need(self.reference_T >= 0, "reference_T", "must be non-negative")
        need(0 < self.mse_fraction < 1, "mse_fraction", "must lie in (0, 1)")
        need(self.aggregate in ("sum", "mean"), "aggregate", "must be sum or mean")
        need(self.normalization in ("rows", "frobenius"), "normalization", "must be rows or frobenius")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["policy_epsilons"] = list(self.policy_epsilons)
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_REQUIRED = [f.name for f in dataclasses.fields(ExperimentConfig) if f.default is dataclasses.MISSING]


def _convert(name: str, raw: str, line: int | None):
    kind = _FIELDS[name].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return _floats(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}", field=name, line=line) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", field=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", field=key, line=lineno)
        values[key] = _convert(key, value, lineno)
    for name in _REQUIRED:
        if name not in values:
            raise ConfigError(f"{name}: required key is missing", field=name)
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text())


def build_setup(config: ExperimentConfig) -> FederationSetup:
    """Per-agent MDPs and policies plus the learner knobs."""
    n = config.agents
    if config.env == "cliffwalking":
        spec = CliffWalkingSpec(config.grid_rows, config.grid_cols, config.step_reward,
                                config.cliff_reward, config.slip_prob, config.gamma)
        base = build_cliffwalking(spec)
        fixture = cliffwalking_policies(spec, config.policy_epsilons)
        policies = [fixture[i % len(fixture)] for i in range(n)]
    else:
        spec = GarnetSpec(config.garnet_states, config.garnet_actions, config.garnet_branching,
                          config.garnet_reward_scale, config.gamma)
        env_rng = np.random.default_rng(config.env_seed)
        base = _accepted_garnet(spec, env_rng)
        if config.garnet_policy == "uniform":
            policies = [Policy.uniform(spec.n_states, spec.n_actions)] * n
        elif config.garnet_policy == "random":
            policies = [random_policy(spec.n_states, spec.n_actions, env_rng)] * n
        else:
            policies = [random_policy(spec.n_states, spec.n_actions, env_rng) for _ in range(n)]
    base = base.with_reward_scale(config.reward_scale)
    mdps = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_NOISE_KEY, i)))
        mdps.append(perturb_kernel(base, config.kernel_noise, rng))
    return FederationSetup(
        mdps=mdps,
        policies=policies,
        d=config.d,
        K=config.K,
        schedule=Schedule(config.alpha0, config.beta0, config.alpha_exponent, config.beta_exponent),
        bound=config.bound,
        variant=config.variant,
        seed=config.seed,
        aggregate=config.aggregate,
        normalization=config.normalization,
        epsilon_greedy=config.epsilon_greedy,
        episode_length=config.episode_length,
        n_jobs=config.n_jobs,
    )


def _accepted_garnet(spec, rng, attempts=100):
    uniform = Policy.uniform(spec.n_states, spec.n_actions)
    for _ in range(attempts):
        mdp = build_garnet(spec, rng)
        try:
            stationary_distribution(transition_under_policy(mdp, uniform))
            return mdp
        except ValueError:
            continue
    raise RuntimeError("could not draw an irreducible Garnet MDP")


@dataclass
class MetricsRow:
    round: int
    agent_id: int | str
    value_mse: float
    tracking_error: float
    lyapunov: float
    phi_drift: float
    alpha_t: float
    beta_t: float
    episodes_elapsed: float
    wall_seconds: float = 0.0


def _fmt(value) -> str:
    if isinstance(value, (int, str)) and not isinstance(value, bool):
        return str(value)
    return f"{float(value):.12g}"


def emit_metrics(rows, path, format: str = "csv"):
    """Write metric rows with a fixed column order (12 significant digits)."""
    path = Path(path)
    if format == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            for row in rows:
                writer.writerow([_fmt(getattr(row, name)) for name in METRICS_HEADER])
    elif format == "json":
        records = [{name: _fmt(getattr(row, name)) for name in METRICS_HEADER} for row in rows]
        path.write_text(json.dumps(records, indent=1))
    else:
        raise ValueError(f"unknown format {format!r}")


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def episodes_to_threshold(value_mse, episodes, fraction: float = 0.05, patience: int = 10):
    """First episode after which the MSE stays below ``fraction`` of its initial value
    for ``patience`` consecutive episodes; None if never.

    The per-episode series takes the MSE at the first round where the
    cumulative episode count reaches each index.
    """
    value_mse = np.asarray(value_mse, dtype=float)
    episodes = np.asarray(episodes, dtype=float)
    threshold = fraction * value_mse[0]
    last = int(episodes[-1])
    idx = np.searchsorted(episodes, np.arange(last + 1), side="left")
    series = value_mse[np.minimum(idx, value_mse.size - 1)]
    below = series < threshold
    run = 0
    for e, ok in enumerate(below):
        run = run + 1 if ok else 0
        if run == patience:
            return e - patience + 1
    return None


def rounds_to_threshold(series, threshold: float):
    hits = np.nonzero(np.asarray(series) < threshold)[0]
    return int(hits[0]) if hits.size else None


def metrics_rows(trace, wall=None) -> list[MetricsRow]:
    n_rounds, n_agents = trace.value_mse.shape
    weight = trace.beta_prev / trace.alpha
    rows = []
    for t in range(n_rounds):
        secs = 0.0 if wall is None else wall[t]
        per_agent_lyap = trace.phi_residual[t] + weight[t] * trace.tracking_error[t]
        for i in range(n_agents):
            rows.append(MetricsRow(t, i, trace.value_mse[t, i], trace.tracking_error[t, i],
                                   per_agent_lyap[i], trace.phi_drift[t, i], trace.alpha[t],
                                   trace.beta[t], trace.episodes[t, i], secs))
        rows.append(MetricsRow(t, AGGREGATE_ID, trace.value_mse[t].mean(), trace.mean_tracking[t],
                               trace.lyapunov[t], trace.phi_drift[t].mean(), trace.alpha[t],
                               trace.beta[t], trace.episodes[t].sum(), secs))
    return rows


@dataclass
class ExperimentResult:
    trace: object
    state: object
    summary: dict
    rows: list = field(default_factory=list)


def execute(config: ExperimentConfig) -> ExperimentResult:
    """Run one configured experiment in memory (no files)."""
    setup = build_setup(config)
    reference_phi = None
    if config.reference_T > 0 and config.variant != "pfedq-rep":
        reference_phi = reference_optimum(setup, config.reference_T).phi
    start = time.perf_counter()
    trace, state = run_training(setup, config.T, reference_phi=reference_phi)
    elapsed = time.perf_counter() - start
    wall = np.linspace(elapsed / config.T, elapsed, config.T)
    rows = metrics_rows(trace, wall)
    eps = [episodes_to_threshold(trace.value_mse[:, i], trace.episodes[:, i],
                                 config.mse_fraction, config.patience) for i in range(config.agents)]
    summary = {
        "variant": config.variant,
        "seed": config.seed,
        "rounds": config.T,
        "final_value_mse": trace.value_mse[-1].tolist(),
        "initial_value_mse": trace.value_mse[0].tolist(),
        "episodes_to_epsilon": eps,
        "episodes_elapsed": [int(e) for e in state.episodes],
        "final_tracking_error": _finite_or_none(trace.mean_tracking[-1]),
        "final_lyapunov": _finite_or_none(trace.lyapunov[-1]),
        "config": config.to_dict(),
    }
    return ExperimentResult(trace, state, summary, rows)


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Run and write ``metrics.csv`` plus ``summary.json`` into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    result = execute(config)
    emit_metrics(result.rows, out / "metrics.csv")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True))
    return result.summary


SWEEP_METRICS = ("tracking", "feature_stationarity")


def _sweep_series(trace, metric):
    if metric == "tracking":
        return trace.mean_tracking
    return trace.feature_stationarity


def sweep_agents(config: ExperimentConfig, agent_counts, threshold: float, seeds=range(5),
                 metric: str = "tracking") -> list[dict]:
    """Rounds until ``metric`` first drops below ``threshold``, per agent count.

    ``"tracking"`` is the agent-mean ``||theta_i - y_i(Phi_t)||^2``;
    ``"feature_stationarity"`` is the squared norm of the mean-field
    feature update at ``y(Phi_t)``. Each entry reports the median over
    ``seeds``; a run that never reaches the threshold counts as ``T`` rounds
    and is flagged ``censored``.
    """
    if metric not in SWEEP_METRICS:
        raise ValueError(f"metric must be one of {SWEEP_METRICS}")
    counts = [int(n) for n in agent_counts]
    if not counts or counts != sorted(counts) or counts[0] < 1:
        raise ValueError("agent_counts must be a nonempty ascending list of positive integers")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    table = []
    for n in counts:
        per_seed, censored = [], False
        for seed in seeds:
            cfg = config.replace(agents=n, seed=seed, designated_agent=0)
            trace, _ = run_training(build_setup(cfg), cfg.T)
            hit = rounds_to_threshold(_sweep_series(trace, metric), threshold)
            if hit is None:
                censored = True
                hit = cfg.T
            per_seed.append(hit)
        table.append({"agents": n, "rounds": float(np.median(per_seed)), "per_seed": per_seed,
                      "censored": censored})
    base = table[0]["rounds"]
    for entry in table:
        if entry["rounds"] > 0:
            entry["speedup"] = base / entry["rounds"]
        else:
            entry["speedup"] = 1.0 if base == 0 else math.inf
    return table
