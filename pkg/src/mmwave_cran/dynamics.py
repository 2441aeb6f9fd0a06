"""One-slot system dynamics: handover time, scheduling bounds, delivery,
queue evolution, arrivals and the per-slot cost."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from .channel import LinkChain, LinkPairState, default_chain

HANDOVER_MODES = ("history", "always")
ARRIVAL_TAIL = 1e-12


@dataclass(frozen=True)
class SystemParams:
    """Scalar system parameters.

    ``handover="always"`` charges the signalling time in every slot, which
    is the model the exact solver uses when the previous association is not
    part of the state. ``free_first_association`` waives the charge for the
    very first slot.
    """

    J: int = 3
    q_max: int = 10
    slot: float = 1.0
    signalling: float = 0.5
    drop_weight: float = 30.0
    packet_size: float = 1.0
    handover: str = "history"
    free_first_association: bool = False

    def __post_init__(self):
        if self.J < 1:
            raise ValueError(f"J must be >= 1, got {self.J}")
        if self.q_max < 1:
            raise ValueError(f"q_max must be >= 1, got {self.q_max}")
        if not self.slot > 0:
            raise ValueError(f"slot must be > 0, got {self.slot}")
        if self.signalling < 0:
            raise ValueError(f"signalling must be >= 0, got {self.signalling}")
        if self.drop_weight < 0:
            raise ValueError(f"drop_weight must be >= 0, got {self.drop_weight}")
        if self.handover not in HANDOVER_MODES:
            raise ValueError(f"handover must be one of {HANDOVER_MODES}")


@dataclass(frozen=True)
class GlobalState:
    q_cu: int
    links: tuple[LinkPairState, ...]
    queues: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "queues", tuple(int(x) for x in self.queues))
        if len(self.links) != len(self.queues):
            raise ValueError("need one link pair per RRH queue")

    @property
    def J(self) -> int:
        return len(self.queues)

    def total_queue(self) -> int:
        return self.q_cu + sum(self.queues)

    def check(self, params: SystemParams):
        if self.J != params.J:
            raise ValueError(f"state has {self.J} RRHs, params say {params.J}")
        for qv in (self.q_cu, *self.queues):
            if not 0 <= qv <= params.q_max:
                raise ValueError(f"queue length {qv} outside [0, {params.q_max}]")


@dataclass(frozen=True)
class Decision:
    """Selected RRH (0-based) and number of packets pushed over its fronthaul."""

    rrh: int
    l1: int


@dataclass(frozen=True, eq=False)
class TrafficModel:
    """I.i.d. arrivals per slot: ``poisson`` with mean ``lam`` or
    ``deterministic`` with exactly ``lam`` packets (must be integral)."""

    lam: float = 4.0
    kind: str = "poisson"
    pmf: np.ndarray = field(init=False, repr=False)
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"arrival rate must be >= 0, got {self.lam}")
        if self.kind == "poisson":
            if self.lam == 0:
                pmf = np.array([1.0])
            else:
                a_max = int(stats.poisson.ppf(1.0 - ARRIVAL_TAIL, self.lam))
                # ppf can land one short of the CDF threshold
                while stats.poisson.cdf(a_max, self.lam) < 1.0 - ARRIVAL_TAIL:
                    a_max += 1
                pmf = stats.poisson.pmf(np.arange(a_max + 1), self.lam)
                pmf[-1] = 1.0 - math.fsum(pmf[:-1])
        elif self.kind == "deterministic":
            if self.lam != int(self.lam):
                raise ValueError("deterministic arrivals need an integer count")
            pmf = np.zeros(int(self.lam) + 1)
            pmf[-1] = 1.0
        else:
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        pmf.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "cdf", cdf)

    @property
    def a_max(self) -> int:
        return len(self.pmf) - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))


@dataclass(frozen=True)
class SlotOutcome:
    next: GlobalState
    delivered: int
    drops: int
    handover_time: float


@dataclass(frozen=True, eq=False)
class Network:
    """Parameters, 2J link chains (fronthaul, access per RRH) and traffic."""

    params: SystemParams = field(default_factory=SystemParams)
    chains: tuple[LinkChain, ...] = ()
    traffic: TrafficModel = field(default_factory=TrafficModel)

    def __post_init__(self):
        chains = tuple(self.chains) or tuple(
            default_chain() for _ in range(2 * self.params.J))
        if len(chains) != 2 * self.params.J:
            raise ValueError(f"need {2 * self.params.J} link chains for "
                             f"J={self.params.J}, got {len(chains)}")
        object.__setattr__(self, "chains", chains)

    @property
    def J(self) -> int:
        return self.params.J

    def fronthaul(self, j: int) -> LinkChain:
        return self.chains[2 * j]

    def access(self, j: int) -> LinkChain:
        return self.chains[2 * j + 1]

    def rates(self, state: GlobalState, j: int) -> tuple[float, float]:
        pair = state.links[j]
        return (self.fronthaul(j).space.rates[pair.fronthaul],
                self.access(j).space.rates[pair.access])

    def handover_flags(self) -> tuple[bool, bool]:
        return self.params.handover == "always", self.params.free_first_association

    def with_params(self, **changes) -> "Network":
        return replace(self, params=replace(self.params, **changes))

    def with_traffic(self, traffic: TrafficModel) -> "Network":
        return replace(self, traffic=traffic)

    def kernel_arrays(self):
        """Padded rate and cumulative-transition tables for the kernels."""
        cached = self.__dict__.get("_kernel_arrays")
        if cached is not None:
            return cached
        J = self.J
        s1 = max(self.fronthaul(j).n_states for j in range(J))
        s2 = max(self.access(j).n_states for j in range(J))
        rate1 = np.zeros((J, s1))
        rate2 = np.zeros((J, s2))
        cdf1 = np.ones((J, s1, s1))
        cdf2 = np.ones((J, s2, s2))
        for j in range(J):
            fh, ac = self.fronthaul(j), self.access(j)
            rate1[j, :fh.n_states] = fh.rates
            rate2[j, :ac.n_states] = ac.rates
            cdf1[j, :fh.n_states, :fh.n_states] = fh.cdf
            cdf2[j, :ac.n_states, :ac.n_states] = ac.cdf
        for arr in (rate1, rate2, cdf1, cdf2):
            arr.setflags(write=False)
        object.__setattr__(self, "_kernel_arrays", (rate1, rate2, cdf1, cdf2))
        return rate1, rate2, cdf1, cdf2


def state_arrays(state: GlobalState):
    """RRH queues, fronthaul and access indices as int64 arrays."""
    q = np.array(state.queues, dtype=np.int64)
    f = np.array([p.fronthaul for p in state.links], dtype=np.int64)
    a = np.array([p.access for p in state.links], dtype=np.int64)
    return q, f, a


def handover_cost(prev_rrh: int | None, rrh: int, rates: tuple[float, float],
                  params: SystemParams) -> float:
    """Signalling time spent in the slot; ``math.inf`` if a hop is in outage."""
    r1, r2 = rates
    if r1 < 0 or r2 < 0:
        raise ValueError(f"rates must be >= 0, got {rates}")
    prev = -1 if prev_rrh is None else prev_rrh
    changed = kernels.is_handover(rrh, prev, params.handover == "always",
                                  params.free_first_association)
    return float(kernels.handover_time(changed, float(r1), float(r2),
                                       params.signalling))


def l1_upper_bound(state: GlobalState, rrh: int, rho: float, r1: float,
                   params: SystemParams) -> int:
    """Largest number of packets the CU may push to ``rrh`` this slot."""
    return int(kernels.l1_bound(state.q_cu, state.queues[rrh], params.q_max,
                                float(rho), float(r1), params.slot))


def delivered_packets(q_rrh: int, l1: int, rho: float,
                      rates: tuple[float, float], params: SystemParams) -> int:
    r1, r2 = rates
    return int(kernels.delivered(q_rrh, l1, float(rho), float(r1), float(r2),
                                 params.slot))


def check_decision(state: GlobalState, decision: Decision, params: SystemParams):
    """Raise ``ValueError`` unless ``state`` respects the queue bounds and
    the decision is admissible in it (rate-independent part of the bound)."""
    state.check(params)
    b, l1 = decision.rrh, decision.l1
    if not 0 <= b < state.J:
        raise ValueError(f"RRH index {b} out of range for J={state.J}")
    if l1 < 0 or l1 > state.q_cu or state.queues[b] + l1 > params.q_max:
        raise ValueError(f"infeasible packet count {l1} in state {state}")


def step_queues(state: GlobalState, decision: Decision, arrivals: int,
                delivered: int, params: SystemParams) -> tuple[GlobalState, int]:
    """Apply one slot of queue dynamics. Link states are left untouched."""
    check_decision(state, decision, params)
    b, l1 = decision.rrh, decision.l1
    if not 0 <= delivered <= state.queues[b] + l1:
        raise ValueError(f"cannot deliver {delivered} packets from "
                         f"{state.queues[b] + l1}")
    if arrivals < 0:
        raise ValueError("arrivals must be >= 0")
    total = state.q_cu + arrivals - l1
    drops = max(0, total - params.q_max)
    queues = list(state.queues)
    queues[b] += l1 - delivered
    return GlobalState(min(params.q_max, total), state.links, tuple(queues)), drops


def expected_drops(q_cu_post: int, traffic: TrafficModel, q_max: int) -> float:
    """Mean drops when arrivals land on a CU queue of ``q_cu_post`` packets."""
    a = np.arange(len(traffic.pmf))
    return float(np.dot(traffic.pmf, np.maximum(0, q_cu_post + a - q_max)))


def expected_slot_cost(state: GlobalState, decision: Decision,
                       traffic: TrafficModel, params: SystemParams) -> float:
    """Total queue length plus the weighted expected drops of the decision."""
    check_decision(state, decision, params)
    drops = expected_drops(state.q_cu - decision.l1, traffic, params.q_max)
    return state.total_queue() + params.drop_weight * drops


def sample_arrivals(traffic: TrafficModel, rng: np.random.Generator,
                    size: int | None = None):
    """Draw from the truncated arrival pmf; scalar int or an int array."""
    if size is None:
        return int(kernels.draw(traffic.cdf, rng.random()))
    u = rng.random(size)
    return np.searchsorted(traffic.cdf, u, side="right").clip(max=traffic.a_max)


def run_one_slot(net: Network, state: GlobalState, decision: Decision,
                 prev_rrh: int | None, arrivals: int) -> SlotOutcome:
    """Queue part of a slot with explicit arrivals (links not advanced)."""
    b = decision.rrh
    rates = net.rates(state, b)
    rho = handover_cost(prev_rrh, b, rates, net.params)
    if decision.l1 > l1_upper_bound(state, b, rho, rates[0], net.params):
        raise ValueError(f"decision {decision} exceeds the scheduling bound")
    d = delivered_packets(state.queues[b], decision.l1, rho, rates, net.params)
    nxt, drops = step_queues(state, decision, arrivals, d, net.params)
    return SlotOutcome(nxt, d, drops, rho)
