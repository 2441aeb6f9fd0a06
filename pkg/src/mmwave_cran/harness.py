"""Experiment configuration, runs, sweeps, policy comparisons and outputs.

Configurations are YAML files (see ``configs/default.yaml`` for the full
schema). Every run derives its random streams from the config seed and a
key: ``()`` for a single run, ``(grid point, replicate)`` inside a sweep and
``(0, replicate)`` in a comparison, so all policies of a comparison see the
same arrivals and link trajectories.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import exact, kernels
from .channel import LinkChain, LinkPairState, LinkStateSpace, sticky_chain
from .dynamics import GlobalState, Network, SystemParams, TrafficModel
from .learning import LearnerConfig
from .policies import POLICY_CODES
from .simulation import Metrics, Simulator, mean_sojourn

log = logging.getLogger(__name__)

OUT_ENV = "MMWAVE_CRAN_OUT"
DEFAULT_OUT = "out"
SWEEP_AXES = ("drop_weight", "lam")
COMPARE_DEFAULT = ("proposed", "max_rate", "max_queue", "random")
UNSTABLE_SATURATION = 0.5


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExactSettings:
    augment: bool = False
    tolerance: float = 1e-9
    max_iters: int = 200_000
    max_states: int = exact.DEFAULT_MAX_STATES
    damping: float = 1.0


@dataclass(frozen=True)
class TraceSpec:
    """Tracked table entries as kernel tuples ``(rrh or -1, f, a, q)``."""

    entries: tuple[tuple[int, int, int, int], ...] = ()
    every: int = 1


@dataclass(frozen=True)
class SweepSpec:
    drop_weight: tuple[float, ...] = ()
    lam: tuple[float, ...] = ()
    policies: tuple[str, ...] = ()
    replicates: int = 1
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    params: SystemParams = field(default_factory=SystemParams)
    chains: tuple[LinkChain, ...] = ()
    traffic: TrafficModel = field(default_factory=TrafficModel)
    policy: str = "proposed"
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    horizon: int = 100_000
    warmup: int | None = None  # None: 10% of the horizon
    seed: int = 0
    initial_links: str = "stationary"
    initial_state: GlobalState | None = None
    trace: TraceSpec = field(default_factory=TraceSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    compare: tuple[str, ...] = COMPARE_DEFAULT
    compare_replicates: int = 1
    exact: ExactSettings = field(default_factory=ExactSettings)
    little: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not self.horizon > self.burn_in >= 0:
            raise ConfigError(f"need horizon > warmup >= 0, got horizon="
                              f"{self.horizon}, warmup={self.burn_in}")
        for name in (self.policy, *self.compare, *self.sweep.policies):
            if name not in POLICY_CODES:
                raise ConfigError(f"unknown policy {name!r}; choose from "
                                  f"{sorted(POLICY_CODES)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.initial_links not in ("stationary", "first"):
            raise ConfigError(f"unknown initial link mode {self.initial_links!r}")
        if self.sweep.replicates < 1 or self.compare_replicates < 1:
            raise ConfigError("replicates must be >= 1")
        try:
            self.network()
            if self.initial_state is not None:
                self.initial_state.check(self.params)
            self.learner.ref_array(_tables_shape(self.network()))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def burn_in(self) -> int:
        return self.horizon // 10 if self.warmup is None else self.warmup

    def network(self) -> Network:
        return Network(self.params, self.chains, self.traffic)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with ``seed``, ``horizon``, ``drop_weight`` or ``lam`` replaced."""
        cfg = self
        if "drop_weight" in changes:
            cfg = replace(cfg, params=replace(cfg.params,
                                              drop_weight=float(changes.pop("drop_weight"))))
        if "lam" in changes:
            cfg = replace(cfg, traffic=TrafficModel(float(changes.pop("lam")),
                                                    cfg.traffic.kind))
        return replace(cfg, **changes) if changes else cfg


def _tables_shape(net: Network):
    from .learning import ValueTables
    return ValueTables.zeros(net)


# ------------------------------------------------------------------ loading
def _state_index(space: LinkStateSpace, value) -> int:
    if isinstance(value, str):
        return space.index(value)
    idx = int(value)
    if not 0 <= idx < len(space):
        raise ConfigError(f"link state {value} outside {space.states}")
    return idx


def _chain(spec: dict) -> LinkChain:
    space = LinkStateSpace(tuple(spec.get("states", LinkStateSpace().states)),
                           tuple(float(r) for r in spec.get("rates", LinkStateSpace().rates)))
    if spec.get("transition") is not None:
        return LinkChain(space, np.asarray(spec["transition"], dtype=float))
    return sticky_chain(space, float(spec.get("stay", 0.6)))


def _chains(spec: dict, J: int) -> tuple[LinkChain, ...]:
    spec = dict(spec or {})
    links = spec.pop("links", None)
    if links is None:
        base = _chain(spec)
        return (base,) * (2 * J)
    if len(links) != 2 * J:
        raise ConfigError(f"channel.links needs {2 * J} entries "
                          f"(fronthaul, access per RRH), got {len(links)}")
    return tuple(_chain({**spec, **(link or {})}) for link in links)


def _check_keys(section: str, got: dict, allowed):
    extra = set(got) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")


_TOP_KEYS = ("seed", "horizon", "warmup", "policy", "system", "traffic", "channel",
             "learner", "initial", "trace", "sweep", "compare", "exact", "diagnostics")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config; any problem raises ``ConfigError``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _check_keys("config", raw, _TOP_KEYS)
    try:
        system = dict(raw.get("system") or {})
        _check_keys("system", system, SystemParams.__dataclass_fields__)
        params = SystemParams(**system)
        traffic_raw = dict(raw.get("traffic") or {})
        _check_keys("traffic", traffic_raw, ("lam", "kind"))
        traffic = TrafficModel(float(traffic_raw.get("lam", 4.0)),
                               traffic_raw.get("kind", "poisson"))
        chains = _chains(raw.get("channel"), params.J)
        net = Network(params, chains, traffic)

        lr = dict(raw.get("learner") or {})
        _check_keys("learner", lr, LearnerConfig.__dataclass_fields__)
        refs = lr.get("ref_rrh")
        if refs is not None:
            refs = tuple(
                (_state_index(net.fronthaul(j).space, r[0]),
                 _state_index(net.access(j).space, r[1]), int(r[2]))
                for j, r in enumerate(refs))
            lr["ref_rrh"] = refs
        learner = LearnerConfig(**lr)

        init = dict(raw.get("initial") or {})
        _check_keys("initial", init, ("links", "q_cu", "queues"))
        links = init.get("links", "stationary")
        initial_state = None
        if not isinstance(links, str) or "q_cu" in init or "queues" in init:
            if isinstance(links, str):
                if links != "first":
                    raise ConfigError("explicit initial queues need explicit "
                                      "links or links: first")
                pairs = tuple(LinkPairState(0, 0) for _ in range(params.J))
            else:
                if len(links) != params.J:
                    raise ConfigError(f"initial.links needs {params.J} pairs")
                pairs = tuple(LinkPairState(_state_index(net.fronthaul(j).space, p[0]),
                                            _state_index(net.access(j).space, p[1]))
                              for j, p in enumerate(links))
            initial_state = GlobalState(int(init.get("q_cu", 0)), pairs,
                                        tuple(init.get("queues", (0,) * params.J)))
            links = "first"

        trace = _trace(raw.get("trace"), net)

        sw = dict(raw.get("sweep") or {})
        _check_keys("sweep", sw, SweepSpec.__dataclass_fields__)
        sweep = SweepSpec(
            drop_weight=tuple(float(x) for x in sw.get("drop_weight", ())),
            lam=tuple(float(x) for x in sw.get("lam", ())),
            policies=tuple(sw.get("policies", ())),
            replicates=int(sw.get("replicates", 1)),
            workers=int(sw.get("workers", 1)))

        cmp_raw = dict(raw.get("compare") or {})
        _check_keys("compare", cmp_raw, ("policies", "replicates"))

        ex = dict(raw.get("exact") or {})
        _check_keys("exact", ex, ExactSettings.__dataclass_fields__)
        diag = dict(raw.get("diagnostics") or {})
        _check_keys("diagnostics", diag, ("little",))

        warmup = raw.get("warmup")
        return ExperimentConfig(
            params=params, chains=chains, traffic=traffic,
            policy=raw.get("policy", "proposed"), learner=learner,
            horizon=int(raw.get("horizon", 100_000)),
            warmup=None if warmup is None else int(warmup),
            seed=int(raw.get("seed", 0)),
            initial_links=links, initial_state=initial_state, trace=trace,
            sweep=sweep,
            compare=tuple(cmp_raw.get("policies", COMPARE_DEFAULT)),
            compare_replicates=int(cmp_raw.get("replicates", 1)),
            exact=ExactSettings(**ex), little=bool(diag.get("little", False)))
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, IndexError) as exc:
        raise ConfigError(str(exc)) from exc


def _trace(raw, net: Network) -> TraceSpec:
    if not raw:
        return TraceSpec()
    raw = dict(raw)
    _check_keys("trace", raw, ("entries", "every"))
    entries = []
    for e in raw.get("entries", ()):
        e = dict(e)
        table = e.get("table", "rrh")
        q = int(e["queue"])
        if not 0 <= q <= net.params.q_max:
            raise ConfigError(f"trace queue {q} outside [0, {net.params.q_max}]")
        if table == "cu":
            entries.append((-1, 0, 0, q))
        elif table == "rrh":
            j = int(e["rrh"]) - 1
            if not 0 <= j < net.J:
                raise ConfigError(f"trace rrh {j + 1} outside 1..{net.J}")
            entries.append((j, _state_index(net.fronthaul(j).space, e["fronthaul"]),
                            _state_index(net.access(j).space, e["access"]), q))
        else:
            raise ConfigError(f"trace table must be cu or rrh, got {table!r}")
    every = int(raw.get("every", 1))
    if every < 1:
        raise ConfigError("trace.every must be >= 1")
    return TraceSpec(tuple(entries), every)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return config_from_dict(raw or {})


# ------------------------------------------------------------------ running
@dataclass
class RunResult:
    config_row: dict
    metrics: Metrics
    trace_names: list = field(default_factory=list)
    trace: np.ndarray | None = None
    little_error: float = math.nan

    def row(self) -> dict:
        return {**self.config_row, **self.metrics.as_row(),
                "little_error": self.little_error}


def solve_exact(config: ExperimentConfig) -> exact.ExactSolution:
    s = config.exact
    return exact.solve(config.network(), augment=s.augment, tolerance=s.tolerance,
                       max_iters=s.max_iters, max_states=s.max_states,
                       damping=s.damping)


def run_experiment(config: ExperimentConfig, *, policy: str | None = None,
                   key: tuple[int, ...] = (), solution=None) -> RunResult:
    """Simulate ``config.horizon`` slots and average over the slots after
    warmup. Identical config, policy and key give identical results."""
    policy = policy or config.policy
    net = config.network()
    if policy == "exact" and solution is None:
        solution = solve_exact(config)
    sim = Simulator(net, policy, seed=config.seed, key=key, learner=config.learner,
                    solution=solution, initial_state=config.initial_state,
                    initial_links=config.initial_links, warmup=config.burn_in,
                    trace_entries=config.trace.entries if policy == "proposed" else ())
    tracing = bool(sim.trace_names)
    records, _, traces = sim.run(config.horizon, record=config.little, trace=tracing)
    sojourn = math.nan
    if config.little:
        w = config.burn_in
        window = records[w:]
        backlog = int(window[0, kernels.R_QSUM]) if len(window) else 0
        sojourn = mean_sojourn(window, backlog)
    metrics = sim.metrics(sojourn)
    result = RunResult(
        config_row=_config_row(config, policy, key), metrics=metrics,
        trace_names=sim.trace_names,
        trace=traces[config.trace.every - 1::config.trace.every] if tracing else None)
    if config.little:
        throughput = metrics.delivered_total / config.horizon
        result.little_error = little_law_check(metrics, throughput, config.traffic.lam)
    return result


def little_law_check(metrics: Metrics, effective_throughput: float,
                     arrival_rate: float | None = None) -> float:
    """Relative gap between ``avg_queue_len / throughput`` and the measured
    mean sojourn.

    Zero traffic gives 0 by convention. A run whose CU buffer is full in more
    than half of the slots is flagged unstable and the check returns NaN.
    """
    if arrival_rate == 0 or (effective_throughput == 0 and metrics.avg_queue_len == 0):
        return 0.0
    if metrics.saturation_fraction > UNSTABLE_SATURATION:
        log.warning("unstable run (CU buffer full %.0f%% of slots); "
                    "Little's law check skipped", 100 * metrics.saturation_fraction)
        return math.nan
    if effective_throughput <= 0 or not math.isfinite(metrics.mean_sojourn):
        return math.nan
    predicted = metrics.avg_queue_len / effective_throughput
    return abs(predicted - metrics.mean_sojourn) / metrics.mean_sojourn


def _config_row(config: ExperimentConfig, policy: str, key) -> dict:
    key = tuple(key)
    return {
        "policy": policy,
        "point": key[0] if len(key) > 0 else 0,
        "replicate": key[1] if len(key) > 1 else 0,
        "J": config.params.J, "q_max": config.params.q_max,
        "drop_weight": config.params.drop_weight, "lam": config.traffic.lam,
        "traffic": config.traffic.kind, "handover": config.params.handover,
        "horizon": config.horizon, "warmup": config.burn_in, "seed": config.seed,
    }


def _job(args):
    config, policy, key = args
    return run_experiment(config, policy=policy, key=key)


def _map(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    # map() keeps submission order, so results never depend on scheduling
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def sweep_points(config: ExperimentConfig) -> list[dict]:
    grids = [(axis, getattr(config.sweep, axis)) for axis in SWEEP_AXES]
    grids = [(axis, vals) for axis, vals in grids if vals]
    if not grids:
        return [{}]
    names = [g[0] for g in grids]
    return [dict(zip(names, combo)) for combo in itertools.product(*(g[1] for g in grids))]


def run_sweep(config: ExperimentConfig, workers: int | None = None) -> list[RunResult]:
    """Grid over drop weight and arrival rate, every policy and replicate.

    Policies at the same grid point and replicate share the stream key
    ``(point, replicate)``.
    """
    policies = config.sweep.policies or (config.policy,)
    jobs = []
    for p_idx, point in enumerate(sweep_points(config)):
        cfg = config.with_overrides(**point)
        for policy in policies:
            for rep in range(config.sweep.replicates):
                jobs.append((cfg, policy, (p_idx, rep)))
    return _map(jobs, config.sweep.workers if workers is None else workers)


def compare(config: ExperimentConfig, workers: int = 1) -> list[RunResult]:
    """All configured policies on shared random streams ``(0, replicate)``."""
    solution = solve_exact(config) if "exact" in config.compare else None
    results = []
    jobs = [(config, p, (0, rep)) for p in config.compare if p != "exact"
            for rep in range(config.compare_replicates)]
    by_policy = iter(_map(jobs, workers))
    for p in config.compare:
        for rep in range(config.compare_replicates):
            if p == "exact":
                results.append(run_experiment(config, policy="exact", key=(0, rep),
                                              solution=solution))
            else:
                results.append(next(by_policy))
    return results


def summarize(results: Sequence[RunResult],
              by=("policy", "drop_weight", "lam")) -> list[dict]:
    """Mean and standard error of the main metrics per group, in first-seen
    order."""
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        groups.setdefault(tuple(r.config_row[k] for k in by), []).append(r)
    rows = []
    for key, rs in groups.items():
        row = dict(zip(by, key))
        row["replicates"] = len(rs)
        for m in ("avg_queue_len", "avg_drop_rate", "objective"):
            vals = np.array([getattr(r.metrics, m) for r in rs])
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_sem"] = (float(vals.std(ddof=1) / math.sqrt(len(vals)))
                               if len(vals) > 1 else 0.0)
        rows.append(row)
    return rows


# ------------------------------------------------------------------ output
def output_dir(cli_value: str | None = None) -> Path:
    """``--out`` beats the environment variable, which beats ``./out``."""
    path = Path(cli_value or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    if not rows:
        path.write_text("")
        return path
    cols = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])
    return path


def write_trace(path: Path, result: RunResult, every: int) -> Path:
    rows = [{"t": (i + 1) * every,
             **{n: float(v) for n, v in zip(result.trace_names, vals)}}
            for i, vals in enumerate(result.trace)]
    return write_csv(path, rows)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               default=_json_default) + "\n", encoding="utf-8")
    return path


def policy_table_rows(solution: exact.ExactSolution) -> list[dict]:
    """Optimal decision per state; RRHs are 1-based."""
    model = solution.model
    net = model.net
    rows = []
    for i in range(model.indexer.size):
        state, prev = model.indexer.decode(i)
        row = {"state": i, "q_cu": state.q_cu}
        for j, (pair, q) in enumerate(zip(state.links, state.queues)):
            row[f"fronthaul{j + 1}"] = net.fronthaul(j).space.states[pair.fronthaul]
            row[f"access{j + 1}"] = net.access(j).space.states[pair.access]
            row[f"q{j + 1}"] = q
        if model.augment:
            row["prev_rrh"] = "" if prev is None else prev + 1
        row["rrh"] = int(solution.policy_b[i]) + 1
        row["l1"] = int(solution.policy_l1[i])
        row["value"] = float(solution.values[i])
        rows.append(row)
    return rows
