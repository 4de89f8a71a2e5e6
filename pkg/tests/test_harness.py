import csv
import time
from pathlib import Path

import numpy as np
import pytest

from pfedrl.harness import (
    AGGREGATE_ID,
    METRICS_HEADER,
    ConfigError,
    MetricsRow,
    build_setup,
    emit_metrics,
    episodes_to_threshold,
    execute,
    load_config,
    parse_config,
    read_metrics,
    rounds_to_threshold,
    run_experiment,
    sweep_agents,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
env = garnet
agents = 2
d = 3
K = 4
T = 30
gamma = 0.9
alpha0 = 1.0
beta0 = 2.0
variant = pfedtd-rep
"""


def _cfg(extra=""):
    return parse_config(MINIMAL + extra)


class TestConfig:
    def test_fixture_loads(self):
        cfg = load_config(CONFIGS / "cliffwalking3.cfg")
        assert (cfg.agents, cfg.d, cfg.grid_rows, cfg.grid_cols) == (3, 6, 4, 12)
        setup = build_setup(cfg)
        assert setup.n_agents == 3 and setup.mdps[0].n_states == 48

    def test_all_shipped_configs_load(self):
        for path in CONFIGS.glob("*.cfg"):
            load_config(path)

    def test_missing_gamma_named(self):
        text = "\n".join(line for line in MINIMAL.splitlines() if not line.startswith("gamma"))
        with pytest.raises(ConfigError, match="gamma") as info:
            parse_config(text)
        assert info.value.field == "gamma"

    def test_negative_k(self):
        with pytest.raises(ConfigError, match="K") as info:
            parse_config(MINIMAL.replace("K = 4", "K = -1"))
        assert info.value.field == "K"

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match="line 11") as info:
            _cfg("color = red\n")
        assert info.value.line == 11

    def test_type_error(self):
        with pytest.raises(ConfigError, match="d"):
            parse_config(MINIMAL.replace("d = 3", "d = three"))

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            _cfg("d = 4\n")

    def test_comments_and_lists(self):
        cfg = _cfg("policy_epsilons = 0.1, 0.4  # two agents\n")
        assert cfg.policy_epsilons == (0.1, 0.4)

    def test_schedule_order(self):
        with pytest.raises(ConfigError, match="alpha_exponent"):
            _cfg("alpha_exponent = 1.5\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.cfg")

    def test_heterogeneous_garnet_agents_differ(self):
        setup = build_setup(_cfg("kernel_noise = 0.3\n"))
        assert not np.array_equal(setup.mdps[0].kernel, setup.mdps[1].kernel)


class TestMetrics:
    def test_header_only(self, tmp_path):
        emit_metrics([], tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text() == ",".join(METRICS_HEADER) + "\n"

    def test_roundtrip_twelve_digits(self, tmp_path):
        row = MetricsRow(3, 1, 1 / 3, np.pi, np.e * 1e-7, 2.0 ** 0.5, 0.5612310241546865, 0.2, 17.0, 0.125)
        emit_metrics([row], tmp_path / "m.csv")
        back = read_metrics(tmp_path / "m.csv")[0]
        for name in METRICS_HEADER:
            value = getattr(row, name)
            assert back[name] == (str(value) if isinstance(value, int) else f"{value:.12g}")
            if not isinstance(value, int):
                assert float(back[name]) == float(f"{value:.12g}")

    def test_json_format(self, tmp_path):
        emit_metrics([MetricsRow(0, "all", 1.0, 2.0, 3.0, 0.0, 0.5, 0.5, 0.0)], tmp_path / "m.json", "json")
        assert '"agent_id": "all"' in (tmp_path / "m.json").read_text()
        with pytest.raises(ValueError):
            emit_metrics([], tmp_path / "x", "xml")

    def test_bulk_write_speed(self, tmp_path):
        rows = [MetricsRow(i, i % 4, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 7.0, 0.0) for i in range(100_000)]
        start = time.perf_counter()
        emit_metrics(rows, tmp_path / "big.csv")
        assert time.perf_counter() - start < 2.0


class TestEpisodesToThreshold:
    def test_simple(self):
        mse = np.array([1.0, 0.5, 0.01, 0.01, 0.01, 0.01])
        episodes = np.array([0, 1, 2, 3, 4, 5])
        assert episodes_to_threshold(mse, episodes, 0.05, patience=3) == 2

    def test_requires_patience(self):
        mse = np.array([1.0, 0.01, 0.5, 0.01, 0.01])
        assert episodes_to_threshold(mse, np.arange(5), 0.05, patience=2) == 3

    def test_never(self):
        assert episodes_to_threshold(np.ones(5), np.arange(5), 0.05, 2) is None

    def test_episode_clock(self):
        # several rounds per episode: the episode series samples the first round reaching each count
        mse = np.array([1.0, 0.9, 0.01, 0.01, 0.01, 0.01])
        episodes = np.array([0, 0, 1, 1, 2, 3])
        assert episodes_to_threshold(mse, episodes, 0.05, patience=2) == 1

    def test_rounds_to_threshold(self):
        assert rounds_to_threshold([3.0, 2.0, 0.5, 0.1], 1.0) == 2
        assert rounds_to_threshold([3.0, 2.0], 1.0) is None


class TestRun:
    def test_artifacts(self, tmp_path):
        summary = run_experiment(_cfg(), tmp_path)
        rows = read_metrics(tmp_path / "metrics.csv")
        assert len(rows) == 30 * 3
        assert {r["agent_id"] for r in rows} == {"0", "1", AGGREGATE_ID}
        assert summary["seed"] == 0 and len(summary["final_value_mse"]) == 2
        assert (tmp_path / "summary.json").exists()

    def test_byte_identical_except_wall(self, tmp_path):
        for name in ("a", "b"):
            run_experiment(_cfg(), tmp_path / name)
        strip = lambda p: [r[:-1] for r in csv.reader(open(p))]  # noqa: E731
        assert strip(tmp_path / "a" / "metrics.csv") == strip(tmp_path / "b" / "metrics.csv")

    def test_fixed_phi_drift_is_zero(self):
        rows = execute(_cfg().replace(variant="fedtd-fixed-phi")).rows
        assert all(r.phi_drift == 0.0 for r in rows)

    def test_cliffwalking_mse_trend(self):
        cfg = load_config(CONFIGS / "cliffwalking3.cfg").replace(T=600)
        result = execute(cfg)
        mse = np.array([[r.value_mse for r in result.rows if r.agent_id == i] for i in range(3)])
        assert np.all(mse[:, 0] > 0)
        assert np.all(mse[:, -100:].mean(axis=1) < mse[:, :10].mean(axis=1))

    def test_aggregate_row_is_agent_mean(self):
        rows = execute(_cfg()).rows
        per = [r for r in rows if r.round == 5 and r.agent_id != AGGREGATE_ID]
        agg = next(r for r in rows if r.round == 5 and r.agent_id == AGGREGATE_ID)
        assert agg.value_mse == pytest.approx(np.mean([r.value_mse for r in per]))
        assert agg.lyapunov == pytest.approx(np.mean([r.lyapunov for r in per]))

    def test_reference_run(self):
        summary = execute(_cfg("reference_T = 60\n")).summary
        assert summary["final_lyapunov"] is not None


class TestSweep:
    def test_single_count_speedup_one(self):
        table = sweep_agents(_cfg(), [2], threshold=10.0, seeds=range(2))
        assert table[0]["speedup"] == 1.0

    def test_rerun_identical(self):
        a = sweep_agents(_cfg(), [1, 2], threshold=0.05, seeds=range(2))
        b = sweep_agents(_cfg(), [1, 2], threshold=0.05, seeds=range(2))
        assert a == b

    def test_censoring(self):
        table = sweep_agents(_cfg(), [1], threshold=1e-30, seeds=range(2))
        assert table[0]["censored"] and table[0]["rounds"] == 30

    def test_arguments(self):
        with pytest.raises(ValueError):
            sweep_agents(_cfg(), [4, 2], 0.1)
        with pytest.raises(ValueError):
            sweep_agents(_cfg(), [2], 0.1, metric="loss")
        with pytest.raises(ValueError):
            sweep_agents(_cfg(), [2], -1.0)
