import csv
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import desk_network
from mmwave_cran import cli, harness, kernels
from mmwave_cran.channel import LinkPairState
from mmwave_cran.dynamics import GlobalState
from mmwave_cran.harness import ConfigError, config_from_dict, load_config
from mmwave_cran.simulation import Simulator, mean_sojourn

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def desk_raw(**top):
    raw = yaml.safe_load((CONFIGS / "desk.yaml").read_text())
    raw.update(horizon=20_000, warmup=2_000)
    raw.update(top)
    return raw


def pipe_raw(lam=2, kind="deterministic", rate=8, **top):
    """One RRH behind a constant link of ``rate`` packets per slot."""
    raw = {"seed": 1, "horizon": 5_000, "warmup": 500, "policy": "max_rate",
           "system": {"J": 1, "q_max": 10, "drop_weight": 30.0},
           "traffic": {"lam": lam, "kind": kind},
           "channel": {"states": ["LOS"], "rates": [rate], "stay": 1.0},
           "diagnostics": {"little": True}}
    raw.update(top)
    return raw


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    @pytest.mark.parametrize("name", ["default.yaml", "desk.yaml"])
    def test_shipped_configs_load(self, name):
        cfg = load_config(CONFIGS / name)
        assert cfg.horizon > cfg.burn_in >= 0
        assert len(cfg.chains) == 2 * cfg.params.J

    def test_default_profile(self):
        cfg = load_config(CONFIGS / "default.yaml")
        p = cfg.params
        assert (p.J, p.q_max, p.slot, p.signalling) == (3, 10, 1.0, 0.5)
        assert cfg.chains[0].space.rates == (0.0, 3.0, 8.0)
        assert cfg.learner.alpha0 == 0.6

    def test_warmup_defaults_to_tenth(self):
        raw = desk_raw()
        del raw["warmup"]
        assert config_from_dict(raw).burn_in == 2_000

    @pytest.mark.parametrize("patch,match", [
        ({"horizon": 100, "warmup": 100}, "warmup"),
        ({"policy": "greedy"}, "unknown policy"),
        ({"seed": -1}, "64-bit"),
        ({"bogus": 1}, "unknown key"),
        ({"system": {"J": 2, "q_max": 0}}, "q_max"),
        ({"traffic": {"lam": -2}}, "arrival rate"),
        ({"channel": {"states": ["A", "B"], "rates": [1, 2], "transition": [[0.5, 0.6], [0, 1]]}},
         "sum to 1"),
        ({"trace": {"entries": [{"table": "rrh", "rrh": 3, "fronthaul": "LOS",
                                 "access": "LOS", "queue": 0}]}}, "rrh 3"),
        ({"trace": {"entries": [{"table": "cu", "queue": 9}]}}, "queue 9"),
        ({"initial": {"q_cu": 5, "links": "first"}}, "queue"),
        ({"learner": {"ref_cu": 7}}, "reference"),
    ])
    def test_validation(self, patch, match):
        with pytest.raises(ConfigError, match=match):
            config_from_dict(desk_raw(**patch))

    def test_malformed_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("seed: [1, 2\n")
        with pytest.raises(ConfigError, match="YAML"):
            load_config(p)
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.yaml")

    def test_explicit_initial_state(self):
        cfg = config_from_dict(desk_raw(initial={"links": [["LOS", "NLOS"], ["NLOS", "NLOS"]],
                                                 "q_cu": 2, "queues": [1, 0]}))
        assert cfg.initial_state == GlobalState(
            2, (LinkPairState(1, 0), LinkPairState(0, 0)), (1, 0))

    def test_overrides(self):
        cfg = config_from_dict(desk_raw())
        o = cfg.with_overrides(drop_weight=1.0, lam=3.0, seed=9)
        assert (o.params.drop_weight, o.traffic.lam, o.seed) == (1.0, 3.0, 9)
        assert cfg.params.drop_weight == 30.0


class TestRunSlot:
    def test_frozen_zero_system(self):
        from conftest import frozen_network
        sim = Simulator(frozen_network(), "max_rate", seed=0, initial_links="first")
        for _ in range(20):
            rec = sim.run_slot()
            assert rec.next_state == rec.state
            assert (rec.delivered, rec.arrivals, rec.drops, rec.decision.l1) == (0, 0, 0, 0)

    def test_replay(self):
        net = desk_network()
        a = Simulator(net, "random", seed=42)
        b = Simulator(net, "random", seed=42)
        for _ in range(50):
            assert a.run_slot() == b.run_slot()

    def test_slot_order(self):
        """Arrivals join the CU after the push, links move after delivery."""
        net = desk_network(lam=2.0)
        sim = Simulator(net, "max_rate", seed=8)
        for _ in range(500):
            rec = sim.run_slot()
            s, d, nxt = rec.state, rec.decision, rec.next_state
            assert nxt.q_cu == min(net.params.q_max, s.q_cu - d.l1 + rec.arrivals)
            assert nxt.queues[d.rrh] == s.queues[d.rrh] + d.l1 - rec.delivered


class TestRunExperiment:
    def test_deterministic(self):
        cfg = config_from_dict(desk_raw())
        a = harness.run_experiment(cfg)
        b = harness.run_experiment(cfg)
        assert a.metrics == b.metrics
        np.testing.assert_array_equal(a.trace, b.trace)

    def test_no_traffic(self):
        cfg = config_from_dict(desk_raw(traffic={"lam": 0.0}))
        for policy in ("proposed", "max_rate", "random"):
            m = harness.run_experiment(cfg, policy=policy).metrics
            assert m.avg_queue_len == 0 and m.avg_drop_rate == 0 and m.objective == 0

    @pytest.mark.parametrize("policy", ["proposed", "max_rate", "max_queue", "random", "exact"])
    def test_accounting_closure(self, policy):
        cfg = config_from_dict(desk_raw(traffic={"lam": 3.0},
                                        initial={"links": "first", "q_cu": 2,
                                                 "queues": [1, 2]}))
        m = harness.run_experiment(cfg, policy=policy).metrics
        assert m.arrivals_total == (m.delivered_total + m.drops_total
                                    + m.final_backlog - m.initial_backlog)
        assert m.drops_total > 0

    def test_objective_identity(self):
        cfg = config_from_dict(desk_raw(traffic={"lam": 3.0}))
        m = harness.run_experiment(cfg).metrics
        assert m.objective == m.avg_queue_len + cfg.params.drop_weight * m.avg_drop_rate
        assert m.slot_count == cfg.horizon - cfg.burn_in

    def test_exact_policy_matches_gain(self):
        raw = desk_raw(horizon=1_000_000, warmup=10_000)
        cfg = config_from_dict(raw)
        sol = harness.solve_exact(cfg)
        m = harness.run_experiment(cfg, policy="exact", solution=sol).metrics
        assert m.objective == pytest.approx(sol.gain, rel=0.02)

    def test_trace_sampling(self):
        cfg = config_from_dict(desk_raw())
        res = harness.run_experiment(cfg)
        assert res.trace_names == ["v_rrh1[1,1,0]"]
        assert res.trace.shape == (cfg.horizon // cfg.trace.every, 1)
        assert harness.run_experiment(cfg, policy="max_rate").trace is None


class TestLittle:
    def test_deterministic_pipe(self):
        res = harness.run_experiment(config_from_dict(pipe_raw()))
        # two packets arrive per slot and leave the next slot
        assert res.metrics.mean_sojourn == pytest.approx(1.0, abs=0.01)
        assert res.little_error < 0.05

    def test_poisson_light_load(self):
        res = harness.run_experiment(config_from_dict(pipe_raw(lam=1.5, kind="poisson",
                                                               horizon=100_000)))
        assert res.little_error < 0.05

    def test_no_traffic(self):
        res = harness.run_experiment(config_from_dict(pipe_raw(lam=0)))
        assert res.little_error == 0.0

    def test_unstable_is_flagged(self, caplog):
        res = harness.run_experiment(config_from_dict(pipe_raw(lam=6, kind="poisson",
                                                               rate=3)))
        assert res.metrics.saturation_fraction > 0.5
        assert math.isnan(res.little_error)
        assert "unstable" in caplog.text

    def test_sojourn_fifo(self):
        rec = np.zeros((3, kernels.N_REC), dtype=np.int64)
        rec[0, kernels.R_ARRIVALS] = 2
        rec[1, kernels.R_DELIVERED] = 1
        rec[2, kernels.R_DELIVERED] = 2
        # initial packet leaves at 1 (2 slots), arrivals at 0 leave at 2
        assert mean_sojourn(rec, initial_backlog=1) == pytest.approx((2 + 2 + 2) / 3)


class TestSweeps:
    def test_points(self):
        cfg = config_from_dict(desk_raw(sweep={"drop_weight": [1, 30], "lam": [1, 2]}))
        assert harness.sweep_points(cfg) == [
            {"drop_weight": 1.0, "lam": 1.0}, {"drop_weight": 1.0, "lam": 2.0},
            {"drop_weight": 30.0, "lam": 1.0}, {"drop_weight": 30.0, "lam": 2.0}]
        assert harness.sweep_points(config_from_dict(desk_raw())) == [{}]

    def test_parallel_equals_sequential(self):
        cfg = config_from_dict(desk_raw(horizon=5_000, warmup=500,
                                        sweep={"drop_weight": [1, 30], "lam": [2],
                                               "policies": ["proposed", "random"],
                                               "replicates": 2}))
        seq = harness.run_sweep(cfg, workers=1)
        par = harness.run_sweep(cfg, workers=2)
        # repr so that NaN diagnostics compare equal
        assert [repr(r.row()) for r in seq] == [repr(r.row()) for r in par]
        assert len(seq) == 8

    def test_replicates_differ_policies_share(self):
        cfg = config_from_dict(desk_raw(horizon=3_000, warmup=0,
                                        sweep={"lam": [0.0], "replicates": 2,
                                               "policies": ["max_rate", "random"]}))
        res = harness.run_sweep(cfg)
        keys = [(r.config_row["policy"], r.config_row["replicate"]) for r in res]
        assert keys == [("max_rate", 0), ("max_rate", 1), ("random", 0), ("random", 1)]

    def test_summarize(self):
        cfg = config_from_dict(desk_raw(horizon=3_000, warmup=300))
        res = harness.compare(cfg.with_overrides(compare=("max_rate", "random"),
                                                 compare_replicates=3))
        rows = harness.summarize(res)
        assert [r["policy"] for r in rows] == ["max_rate", "random"]
        vals = [r.metrics.objective for r in res[:3]]
        assert rows[0]["objective_mean"] == pytest.approx(np.mean(vals))
        assert rows[0]["objective_sem"] == pytest.approx(np.std(vals, ddof=1) / math.sqrt(3))


class TestOutput:
    def test_output_dir_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv(harness.OUT_ENV, str(tmp_path / "env"))
        assert harness.output_dir() == tmp_path / "env"
        assert harness.output_dir(str(tmp_path / "cli")) == tmp_path / "cli"
        monkeypatch.delenv(harness.OUT_ENV)
        monkeypatch.chdir(tmp_path)
        assert harness.output_dir() == Path("out") and (tmp_path / "out").is_dir()

    def test_csv_round_trip(self, tmp_path):
        rows = [{"a": 0.1, "b": True, "c": 3}, {"a": 1e-20, "b": False, "c": -1}]
        harness.write_csv(tmp_path / "x.csv", rows)
        text = (tmp_path / "x.csv").read_text()
        assert text == "a,b,c\n0.1,true,3\n1e-20,false,-1\n"


def run_cli(args, out):
    env = dict(os.environ, **{harness.OUT_ENV: str(out)})
    return subprocess.run([sys.executable, "-m", "mmwave_cran.cli", *args],
                          env=env, capture_output=True, text=True)


class TestCLI:
    def write_cfg(self, tmp_path, **top):
        p = tmp_path / "cfg.yaml"
        p.write_text(yaml.safe_dump(desk_raw(**top)))
        return p

    def test_run_writes_outputs(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
        out = tmp_path / "o"
        rows = read_csv(out / "metrics.csv")
        assert rows[0]["policy"] == "proposed" and rows[0]["seed"] == "7"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["command"] == "run" and "trace.csv" in summary["files"]
        assert len(read_csv(out / "trace.csv")) == 200

    def test_seed_override(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        assert cli.main(["run", str(cfg), "--seed", "99", "--out", str(tmp_path / "a")]) == 0
        assert read_csv(tmp_path / "a" / "metrics.csv")[0]["seed"] == "99"
        assert cli.main(["run", str(cfg), "--out", str(tmp_path / "b")]) == 0
        assert (read_csv(tmp_path / "a" / "metrics.csv")[0]["objective"]
                != read_csv(tmp_path / "b" / "metrics.csv")[0]["objective"])

    def test_env_output_dir(self, tmp_path):
        cfg = self.write_cfg(tmp_path, horizon=2_000, warmup=200)
        res = run_cli(["run", str(cfg), "--policy", "max_rate"], tmp_path / "env")
        assert res.returncode == 0, res.stderr
        assert (tmp_path / "env" / "metrics.csv").exists()

    def test_validation_failure_exit_code(self, tmp_path):
        cfg = self.write_cfg(tmp_path, policy="nope")
        res = run_cli(["run", str(cfg)], tmp_path)
        assert res.returncode == 2
        assert "config error" in res.stderr
        assert cli.main(["run", str(tmp_path / "missing.yaml")]) == 2
        assert cli.main(["run", str(cfg), "--warmup", "10",
                         "--horizon", "5", "--policy", "random"]) == 2

    def test_state_space_too_large_exit_code(self, tmp_path):
        p = tmp_path / "big.yaml"
        p.write_text(yaml.safe_dump({"system": {"J": 3, "q_max": 10}}))
        assert cli.main(["solve", str(p), "--out", str(tmp_path)]) == 2

    def test_solve(self, tmp_path):
        cfg = self.write_cfg(tmp_path)
        assert cli.main(["solve", str(cfg), "--policy-table", "--out", str(tmp_path)]) == 0
        payload = json.loads((tmp_path / "solve.json").read_text())
        assert payload["states"] == 864 and payload["residual"] <= 1e-9
        rows = read_csv(tmp_path / "policy.csv")
        assert len(rows) == 864
        assert {r["rrh"] for r in rows} <= {"1", "2"}
        assert {r["prev_rrh"] for r in rows} == {"1", "2"}

    def test_sweep_and_compare(self, tmp_path):
        cfg = self.write_cfg(tmp_path, horizon=3_000, warmup=300,
                             sweep={"drop_weight": [1, 30], "replicates": 2,
                                    "policies": ["proposed", "max_rate"]})
        assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "s")]) == 0
        assert len(read_csv(tmp_path / "s" / "sweep.csv")) == 8
        assert len(read_csv(tmp_path / "s" / "sweep_summary.csv")) == 4
        assert cli.main(["compare", str(cfg), "--out", str(tmp_path / "c")]) == 0
        rows = read_csv(tmp_path / "c" / "compare_summary.csv")
        assert [r["policy"] for r in rows] == ["exact", "proposed", "max_rate",
                                              "max_queue", "random"]
