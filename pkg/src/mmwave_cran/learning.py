"""Online learning of decomposed post-decision values.

The global post-decision value is approximated by one table over the CU
queue plus one table per RRH over (fronthaul state, access state, queue).
Decisions are greedy with respect to those tables (best packet count per
RRH, then best RRH) and the tables are updated by relative stochastic
approximation after every slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .channel import LinkPairState
from .dynamics import Decision, GlobalState, Network, state_arrays


@dataclass(frozen=True)
class PostDecisionState:
    q_cu_post: int
    links: tuple[LinkPairState, ...]
    queues_post: tuple[int, ...]


@dataclass
class ValueTables:
    """CU table ``v_cu[q]`` and RRH tables ``v_rrh[j, f, a, q]``.

    ``v_rrh`` is padded to the largest link state counts; ``shapes`` keeps
    the true (|R1|, |R2|) of every RRH.
    """

    v_cu: np.ndarray
    v_rrh: np.ndarray
    shapes: tuple[tuple[int, int], ...]

    @classmethod
    def zeros(cls, net: Network, fill: float = 0.0) -> "ValueTables":
        shapes = tuple((net.fronthaul(j).n_states, net.access(j).n_states)
                       for j in range(net.J))
        s1 = max(s[0] for s in shapes)
        s2 = max(s[1] for s in shapes)
        n_q = net.params.q_max + 1
        return cls(np.full(n_q, float(fill)),
                   np.full((net.J, s1, s2, n_q), float(fill)), shapes)

    @property
    def J(self) -> int:
        return len(self.shapes)

    def entry_count(self) -> int:
        n_q = len(self.v_cu)
        return n_q + sum(s1 * s2 * n_q for s1, s2 in self.shapes)

    def rrh_table(self, j: int) -> np.ndarray:
        s1, s2 = self.shapes[j]
        return self.v_rrh[j, :s1, :s2, :]

    def copy(self) -> "ValueTables":
        return ValueTables(self.v_cu.copy(), self.v_rrh.copy(), self.shapes)


@dataclass(frozen=True)
class LearnerConfig:
    alpha0: float = 0.6
    ref_cu: int | None = None  # None: midpoint of the CU buffer
    ref_rrh: tuple[tuple[int, int, int], ...] | None = None  # (f, a, q) per RRH
    exploration_eps: float = 0.0
    init_value: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha0 < 1:
            raise ValueError(f"alpha0 must be in (0, 1), got {self.alpha0}")
        if not 0 <= self.exploration_eps <= 1:
            raise ValueError("exploration_eps must be in [0, 1]")

    def cu_ref(self, tables: ValueTables) -> int:
        n_q = len(tables.v_cu)
        ref = (n_q - 1) // 2 if self.ref_cu is None else self.ref_cu
        if not 0 <= ref < n_q:
            raise ValueError(f"CU reference {ref} outside table")
        return ref

    def ref_array(self, tables: ValueTables) -> np.ndarray:
        J = tables.J
        refs = self.ref_rrh or tuple((0, 0, 0) for _ in range(J))
        if len(refs) != J:
            raise ValueError(f"need {J} RRH reference states, got {len(refs)}")
        n_q = len(tables.v_cu)
        self.cu_ref(tables)
        for j, (f, a, q) in enumerate(refs):
            s1, s2 = tables.shapes[j]
            if not (0 <= f < s1 and 0 <= a < s2 and 0 <= q < n_q):
                raise ValueError(f"RRH {j} reference {(f, a, q)} outside table")
        return np.array(refs, dtype=np.int64).reshape(J, 3)


@dataclass
class TransitionRecord:
    """What the learner sees for slot t once slot t+1's action is known."""

    state: GlobalState
    decision: Decision
    arrivals: int
    drops: int
    next_state: GlobalState
    post: PostDecisionState
    next_post: PostDecisionState | None
    alpha: float


def learning_rate(t: int, config: LearnerConfig | float = 0.6) -> float:
    """alpha0 / (ln t + 1) for slot index t >= 1."""
    alpha0 = config.alpha0 if isinstance(config, LearnerConfig) else config
    if t < 1:
        raise ValueError("slot index starts at 1")
    return alpha0 / (math.log(t) + 1.0)


def post_decision(state: GlobalState, decision: Decision,
                  delivered: int) -> PostDecisionState:
    queues = list(state.queues)
    queues[decision.rrh] += decision.l1 - delivered
    return PostDecisionState(state.q_cu - decision.l1, state.links, tuple(queues))


def decomposed_value(tables: ValueTables, post: PostDecisionState) -> float:
    v = tables.v_cu[post.q_cu_post]
    for j, (pair, q) in enumerate(zip(post.links, post.queues_post)):
        v += tables.v_rrh[j, pair.fronthaul, pair.access, q]
    return float(v)


def rho_of(net: Network, state: GlobalState, rrh: int, prev_rrh: int | None) -> float:
    q, f, a = state_arrays(state)
    rate1, rate2, _, _ = net.kernel_arrays()
    always, free = net.handover_flags()
    prev = -1 if prev_rrh is None else prev_rrh
    return float(kernels.rho_for(rrh, prev, f, a, rate1, rate2,
                                 net.params.signalling, always, free))


def score_candidate(tables: ValueTables, state: GlobalState, rrh: int, l1: int,
                    prev_rrh: int | None, net: Network) -> float:
    """Change of the decomposed value if ``l1`` packets go to ``rrh``."""
    p = net.params
    rho = rho_of(net, state, rrh, prev_rrh)
    r1, r2 = net.rates(state, rrh)
    ub = kernels.l1_bound(state.q_cu, state.queues[rrh], p.q_max, rho, r1, p.slot)
    if not 0 <= l1 <= ub:
        raise ValueError(f"l1={l1} outside feasible range [0, {ub}]")
    d = kernels.delivered(state.queues[rrh], l1, rho, r1, r2, p.slot)
    pair = state.links[rrh]
    vj = tables.v_rrh[rrh, pair.fronthaul, pair.access]
    qj = state.queues[rrh]
    return float(tables.v_cu[state.q_cu - l1] + vj[qj + l1 - d]
                 - tables.v_cu[state.q_cu] - vj[qj])


def select_action(tables: ValueTables, state: GlobalState, prev_rrh: int | None,
                  config: LearnerConfig, rng: np.random.Generator | None,
                  net: Network) -> Decision:
    """Greedy two-step decision, or a uniform feasible one with probability
    ``config.exploration_eps``."""
    p = net.params
    q, f, a = state_arrays(state)
    rate1, rate2, _, _ = net.kernel_arrays()
    always, free = net.handover_flags()
    prev = -1 if prev_rrh is None else prev_rrh
    u0 = u1 = 0.0
    if config.exploration_eps > 0:
        if rng is None:
            raise ValueError("exploration needs a random generator")
        u0, u1 = rng.random(), rng.random()
    b, l1 = kernels.decide(kernels.PROPOSED, state.q_cu, q, f, a, prev,
                           tables.v_cu, tables.v_rrh, config.exploration_eps,
                           _EMPTY, _EMPTY, _EMPTY, False, rate1, rate2,
                           p.q_max, p.slot, p.signalling, always, free,
                           u0, u1, 0.0)
    return Decision(int(b), int(l1))


_EMPTY = np.zeros(1, dtype=np.int64)


def update(tables: ValueTables, record: TransitionRecord, config: LearnerConfig,
           drop_weight: float) -> ValueTables:
    """One relative stochastic-approximation step (in place).

    Touches the CU entry of the slot's post-decision queue and the entry of
    the served RRH only.
    """
    if record.next_post is None:
        raise ValueError("update needs the next slot's post-decision state; "
                         "select the next action first")
    refs = config.ref_array(tables)
    alpha = record.alpha
    b = record.decision.rrh
    nxt, post, npost = record.next_state, record.post, record.next_post

    target_c = (drop_weight * record.drops + nxt.q_cu
                + tables.v_cu[npost.q_cu_post] - tables.v_cu[config.cu_ref(tables)])
    npair = nxt.links[b]
    rb = refs[b]
    target_b = (nxt.queues[b]
                + tables.v_rrh[b, npair.fronthaul, npair.access, npost.queues_post[b]]
                - tables.v_rrh[b, rb[0], rb[1], rb[2]])

    pc = post.q_cu_post
    tables.v_cu[pc] = (1.0 - alpha) * tables.v_cu[pc] + alpha * target_c
    pair = post.links[b]
    idx = (b, pair.fronthaul, pair.access, post.queues_post[b])
    tables.v_rrh[idx] = (1.0 - alpha) * tables.v_rrh[idx] + alpha * target_b
    return tables


def tables_from_exact(solution, net: Network,
                      config: LearnerConfig | None = None) -> ValueTables:
    """Least-squares additive split of exact post-decision values.

    On the full grid the fit is the main-effects decomposition: marginal
    means per CU queue and per RRH local state. Each table is then shifted
    so its reference entry holds that component's stationary cost share
    (CU queue plus weighted drops, or the RRH queue) under the exact policy;
    the shares add up to the gain, which is where the relative updates have
    their fixed point.
    """
    from .exact import stationary_distribution

    config = config or LearnerConfig()
    model = solution.model
    dims = model.indexer.dims
    V = solution.post_values.reshape(dims)
    pi = stationary_distribution(model, solution.policy_b,
                                 solution.policy_l1).reshape(dims)
    if model.augment:
        V = V.mean(axis=-1)
        pi = pi.sum(axis=-1)
    tables = ValueTables.zeros(net)
    axes_all = tuple(range(V.ndim))
    grand = V.mean()
    tables.v_cu[:] = V.mean(axis=axes_all[1:]) - grand
    refs = config.ref_array(tables)
    q = np.arange(net.params.q_max + 1)
    gains = []
    for j in range(net.J):
        keep = (1 + 3 * j, 2 + 3 * j, 3 + 3 * j)
        other = tuple(ax for ax in axes_all if ax not in keep)
        s1, s2 = tables.shapes[j]
        tables.v_rrh[j, :s1, :s2, :] = V.mean(axis=other) - grand
        g = float(np.dot(pi.sum(axis=other).sum(axis=(0, 1)), q))
        f, a, r = refs[j]
        tables.v_rrh[j, :s1, :s2, :] += g - tables.v_rrh[j, f, a, r]
        gains.append(g)
    g_cu = solution.gain - sum(gains)
    tables.v_cu += g_cu - tables.v_cu[config.cu_ref(tables)]
    return tables


def fixed_point_tables(solution, net: Network,
                       config: LearnerConfig | None = None) -> ValueTables:
    """Additive tables at which the expected relative update is zero while
    the exact policy drives the system.

    For every table entry the update target, averaged over the slots that
    touch the entry under the exact policy's stationary distribution, must
    equal the entry. With the policy fixed this is one linear system per
    component table. Entries the policy never visits are pinned to the
    reference value.
    """
    from .exact import stationary_distribution

    config = config or LearnerConfig()
    model = solution.model
    p = net.params
    b, l1 = solution.policy_b, solution.policy_l1
    pi = stationary_distribution(model, b, l1)
    P = model.policy_transition(b, l1)
    X, J, n_q = model.X, net.J, p.q_max + 1
    tables = ValueTables.zeros(net)
    refs = config.ref_array(tables)

    post_c = np.empty(X, dtype=np.int64)
    post_r = np.empty((J, X), dtype=np.int64)  # flat (f, a, q) per RRH
    queue = np.empty((J, X))
    s2m = tables.v_rrh.shape[2]
    for x in range(X):
        s, prev = model.indexer.decode(x)
        bx, lx = int(b[x]), int(l1[x])
        r1, r2 = net.rates(s, bx)
        d = kernels.delivered(s.queues[bx], lx, model.rho(s, bx, prev), r1, r2, p.slot)
        post_c[x] = s.q_cu - lx
        for j, (pair, qj) in enumerate(zip(s.links, s.queues)):
            qp = qj + lx - d if j == bx else qj
            post_r[j, x] = (pair.fronthaul * s2m + pair.access) * n_q + qp
            queue[j, x] = qj

    def solve_component(entry, touched, reward, next_entry, n, ref):
        # rows: sum_x w(x) [r(x) + E v(next(x)) - v(ref) - v(entry)] = 0
        w = pi * touched
        W = sp.csr_matrix((w, (entry, np.arange(X))), shape=(n, X))
        N = sp.csr_matrix((np.ones(X), (np.arange(X), next_entry)), shape=(X, n))
        weight = np.asarray(W.sum(axis=1)).ravel()
        A = (W @ (P @ N)).toarray() - np.diag(weight)
        A[:, ref] -= weight
        rhs = -(W @ reward)
        idle = weight <= 0
        A[idle] = 0.0
        A[idle, np.flatnonzero(idle)] = 1.0
        A[idle, ref] -= 1.0
        rhs[idle] = 0.0
        return np.linalg.lstsq(A, rhs, rcond=None)[0]

    reward_c = model.drop_cost[post_c] + P @ model.indexer.coords()[0].astype(float)
    tables.v_cu[:] = solve_component(post_c, np.ones(X), reward_c, post_c, n_q,
                                     config.cu_ref(tables))
    flat = tables.v_rrh.reshape(J, -1)
    for j in range(J):
        f, a, q = refs[j]
        ref = (f * s2m + a) * n_q + q
        flat[j] = solve_component(post_r[j], (b == j).astype(float), P @ queue[j],
                                  post_r[j], flat.shape[1], ref)
    return tables
