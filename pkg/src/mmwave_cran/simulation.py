"""Slot-by-slot simulator driving the compiled kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .channel import LinkPairState
from .dynamics import Decision, GlobalState, Network
from .exact import ExactSolution
from .learning import LearnerConfig, ValueTables
from .policies import policy_code

CHUNK = 1 << 16


@dataclass(frozen=True)
class SlotRecord:
    t: int                      # 1-based slot index
    state: GlobalState
    prev_rrh: int | None
    decision: Decision          # after the feasibility clamp
    handover_time: float
    delivered: int
    arrivals: int
    drops: int
    handover: bool
    next_state: GlobalState


@dataclass(frozen=True)
class Metrics:
    """Window averages over slots after warmup; ``*_total`` and backlogs
    cover the whole run."""

    avg_queue_len: float
    avg_drop_rate: float
    objective: float
    handover_count: int
    delivered_total: int
    slot_count: int
    arrivals_total: int
    drops_total: int
    initial_backlog: int
    final_backlog: int
    saturation_fraction: float
    mean_sojourn: float = math.nan

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def seed_streams(seed: int, key: tuple[int, ...] = ()):
    """Initial-state and slot generators for one run.

    Both derive from ``SeedSequence(seed, spawn_key=key)``: its first child
    seeds the initial link draw, its second the per-slot uniform stream.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    init_ss, slot_ss = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(init_ss)), \
        np.random.Generator(np.random.PCG64(slot_ss))


class Simulator:
    """Mutable simulation context: state, previous RRH, policy, random stream.

    ``policy`` is one of ``proposed``, ``max_rate``, ``max_queue``,
    ``random``, ``exact`` (the latter needs ``solution``).
    """

    def __init__(self, net: Network, policy: str = "proposed", *,
                 seed: int = 0, key: tuple[int, ...] = (),
                 learner: LearnerConfig | None = None,
                 tables: ValueTables | None = None, learn: bool = True,
                 solution: ExactSolution | None = None,
                 initial_state: GlobalState | None = None,
                 initial_links: str = "stationary",
                 warmup: int = 0, trace_entries=()):
        self.net = net
        self.policy = policy
        self.code = policy_code(policy)
        self.learner = learner or LearnerConfig()
        self.tables = tables if tables is not None else ValueTables.zeros(
            net, self.learner.init_value)
        self.learn = learn
        self.refs = self.learner.ref_array(self.tables)
        self.ref_cu = self.learner.cu_ref(self.tables)

        p = net.params
        self._rate1, self._rate2, self._cdf1, self._cdf2 = net.kernel_arrays()
        self._arr_cdf = net.traffic.cdf
        self._always, self._free = net.handover_flags()

        if self.code == kernels.EXACT:
            if solution is None:
                raise ValueError("the exact policy needs a solved model")
            if solution.model.net.J != net.J or solution.model.net.params.q_max != p.q_max:
                raise ValueError("exact solution was computed for another network")
            self._pol_b = solution.policy_b.astype(np.int64)
            self._pol_l1 = solution.policy_l1.astype(np.int64)
            self._strides = solution.model.indexer.strides
            self._augment = solution.model.augment
        else:
            self._pol_b = self._pol_l1 = self._strides = np.zeros(1, dtype=np.int64)
            self._augment = False

        init_rng, self.rng = seed_streams(seed, key)
        self._U = kernels.n_uniforms(net.J)
        if initial_state is None:
            links = []
            for j in range(net.J):
                if initial_links == "stationary":
                    fh = net.fronthaul(j)
                    ac = net.access(j)
                    links.append(LinkPairState(
                        int(init_rng.choice(fh.n_states, p=fh.stationary())),
                        int(init_rng.choice(ac.n_states, p=ac.stationary()))))
                elif initial_links == "first":
                    links.append(LinkPairState(0, 0))
                else:
                    raise ValueError(f"unknown initial_links {initial_links!r}")
            initial_state = GlobalState(0, tuple(links), (0,) * net.J)
        initial_state.check(p)
        self.q = np.array(initial_state.queues, dtype=np.int64)
        self.f = np.array([s.fronthaul for s in initial_state.links], dtype=np.int64)
        self.a = np.array([s.access for s in initial_state.links], dtype=np.int64)
        self.scal = np.zeros(kernels.N_SCALARS, dtype=np.int64)
        self.scal[kernels.S_QC] = initial_state.q_cu
        self.scal[kernels.S_PREV] = -1
        self.scal[kernels.S_PEND_B] = -1
        self.scal[kernels.S_WARMUP] = warmup
        self.acc = np.zeros(kernels.N_ACC, dtype=np.int64)
        self.initial_backlog = initial_state.total_queue()

        self.trace_names = []
        idx = []
        for entry in trace_entries:
            j, fi, ai, qi = entry
            idx.append((j, fi, ai, qi))
            self.trace_names.append(
                f"v_cu[{qi}]" if j < 0 else f"v_rrh{j + 1}[{fi},{ai},{qi}]")
        self._trace_idx = np.array(idx, dtype=np.int64).reshape(-1, 4)
        self._no_rec = np.zeros((0, kernels.N_REC), dtype=np.int64)
        self._no_rho = np.zeros(0)
        self._no_trace = np.zeros((0, max(1, len(idx))))

    # ---------------------------------------------------------------- state
    @property
    def t(self) -> int:
        return int(self.scal[kernels.S_T])

    @property
    def prev_rrh(self) -> int | None:
        prev = int(self.scal[kernels.S_PREV])
        return None if prev < 0 else prev

    @property
    def state(self) -> GlobalState:
        links = tuple(LinkPairState(int(fi), int(ai)) for fi, ai in zip(self.f, self.a))
        return GlobalState(int(self.scal[kernels.S_QC]), links,
                           tuple(int(x) for x in self.q))

    @property
    def pending_decision(self) -> Decision | None:
        b = int(self.scal[kernels.S_PEND_B])
        return None if b < 0 else Decision(b, int(self.scal[kernels.S_PEND_L1]))

    # ---------------------------------------------------------------- loop
    def _kernel(self, u, rec, rec_rho, trace_out):
        p = self.net.params
        kernels.run_slots(
            u, self.scal, self.q, self.f, self.a,
            p.q_max, p.slot, p.signalling, p.drop_weight, self._always, self._free,
            self._rate1, self._rate2, self._cdf1, self._cdf2, self._arr_cdf,
            self.code, self.tables.v_cu, self.tables.v_rrh, self.learner.alpha0,
            self.ref_cu, self.refs, self.learner.exploration_eps, self.learn,
            self._pol_b, self._pol_l1, self._strides, self._augment,
            self.acc, rec, rec_rho, self._trace_idx, trace_out)

    def run(self, n: int, record: bool = False, trace: bool = False):
        """Advance ``n`` slots. Returns ``(records, rho, traces)``; arrays
        are empty unless requested."""
        recs, rhos, traces = [], [], []
        done = 0
        while done < n:
            m = min(CHUNK, n - done)
            u = self.rng.random((m, self._U))
            rec = np.zeros((m, kernels.N_REC), dtype=np.int64) if record else self._no_rec
            rho = np.zeros(m) if record else self._no_rho
            tr = (np.zeros((m, self._trace_idx.shape[0]))
                  if trace and len(self._trace_idx) else self._no_trace)
            self._kernel(u, rec, rho, tr)
            if record:
                recs.append(rec)
                rhos.append(rho)
            if tr is not self._no_trace:
                traces.append(tr)
            done += m
        cat = lambda xs, empty: np.concatenate(xs) if xs else empty
        return (cat(recs, self._no_rec), cat(rhos, self._no_rho),
                cat(traces, np.zeros((0, len(self._trace_idx)))))

    def run_slot(self) -> SlotRecord:
        before = self.state
        prev = self.prev_rrh
        t = self.t + 1
        rec, rho, _ = self.run(1, record=True)
        r = rec[0]
        return SlotRecord(
            t=t, state=before, prev_rrh=prev,
            decision=Decision(int(r[kernels.R_B]), int(r[kernels.R_L1])),
            handover_time=float(rho[0]), delivered=int(r[kernels.R_DELIVERED]),
            arrivals=int(r[kernels.R_ARRIVALS]), drops=int(r[kernels.R_DROPS]),
            handover=bool(r[kernels.R_HANDOVER]), next_state=self.state)

    # ---------------------------------------------------------------- output
    def metrics(self, mean_sojourn: float = math.nan) -> Metrics:
        acc = self.acc
        n = int(acc[kernels.A_COUNTED])
        avg_q = acc[kernels.A_QSUM] / n if n else 0.0
        avg_d = acc[kernels.A_DROPS] / n if n else 0.0
        return Metrics(
            avg_queue_len=float(avg_q), avg_drop_rate=float(avg_d),
            objective=float(avg_q + self.net.params.drop_weight * avg_d),
            handover_count=int(acc[kernels.A_HANDOVERS]),
            delivered_total=int(acc[kernels.A_DELIVERED]),
            slot_count=n,
            arrivals_total=int(acc[kernels.A_ARRIVALS]),
            drops_total=int(acc[kernels.A_DROPS_TOTAL]),
            initial_backlog=self.initial_backlog,
            final_backlog=self.state.total_queue(),
            saturation_fraction=float(acc[kernels.A_SAT] / n) if n else 0.0,
            mean_sojourn=mean_sojourn)


def mean_sojourn(records: np.ndarray, initial_backlog: int = 0) -> float:
    """Mean slots between admission and delivery, matching packets in
    arrival order to deliveries in departure order.

    A packet admitted at the end of slot t and delivered in slot s spends
    s - t slot starts in the system. Packets present initially count as
    admitted at slot -1. The mean does not depend on the matching, only on
    which packets are matched, so reordering across RRHs is harmless.
    """
    t = np.arange(len(records))
    admitted = records[:, kernels.R_ARRIVALS] - records[:, kernels.R_DROPS]
    arr = np.concatenate([np.full(initial_backlog, -1), np.repeat(t, admitted)])
    dep = np.repeat(t, records[:, kernels.R_DELIVERED])
    n = len(dep)
    if n == 0:
        return math.nan
    return float((dep - arr[:n]).mean())
