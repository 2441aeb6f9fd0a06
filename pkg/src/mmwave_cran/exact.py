"""Exact average-cost solution on small instances.

The global state (CU queue, per-RRH link pair and queue) is enumerated
densely, the Bellman optimality equation is solved by relative value
iteration and the optimal stationary policy is read off the converged
relative values.

The previous association is not part of the state by default, so every
association is charged the signalling time (``worst case``). Passing
``augment=True`` adds the previous RRH to the state, which reproduces the
simulator's ``history`` handover rule exactly at J times the state count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from ._accel import jit
from .channel import LinkPairState
from .dynamics import Decision, GlobalState, Network, expected_drops

log = logging.getLogger(__name__)

DEFAULT_MAX_STATES = 500_000


class StateSpaceTooLarge(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual, iterations):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


def state_count(q_max: int, link_sizes) -> int:
    """Closed-form global state count; ``link_sizes`` holds (|R1|, |R2|) per RRH."""
    J = len(link_sizes)
    n = (1 + q_max) ** (1 + J)
    for s1, s2 in link_sizes:
        n *= s1 * s2
    return n


class StateIndexer:
    """Dense bijection between global states and 0..size-1 (C order over
    CU queue, then fronthaul/access/queue per RRH, then previous RRH)."""

    def __init__(self, net: Network, augment: bool = False):
        self.J = net.J
        self.q_max = net.params.q_max
        self.augment = augment
        dims = [self.q_max + 1]
        for j in range(self.J):
            dims += [net.fronthaul(j).n_states, net.access(j).n_states,
                     self.q_max + 1]
        if augment:
            dims.append(self.J)
        self.dims = tuple(dims)
        self.size = int(np.prod(dims, dtype=np.int64))
        strides = np.ones(len(dims), dtype=np.int64)
        for k in range(len(dims) - 2, -1, -1):
            strides[k] = strides[k + 1] * dims[k + 1]
        self.strides = strides

    def __len__(self):
        return self.size

    def encode(self, state: GlobalState, prev: int | None = None) -> int:
        coords = [state.q_cu]
        for pair, qj in zip(state.links, state.queues):
            coords += [pair.fronthaul, pair.access, qj]
        if self.augment:
            coords.append(0 if prev is None else prev)
        for c, d in zip(coords, self.dims):
            if not 0 <= c < d:
                raise IndexError(f"coordinate {c} out of range {d}")
        return int(np.dot(coords, self.strides))

    def decode(self, index: int) -> tuple[GlobalState, int | None]:
        if not 0 <= index < self.size:
            raise IndexError(f"state index {index} out of range {self.size}")
        coords = np.unravel_index(index, self.dims)
        links = tuple(LinkPairState(int(coords[1 + 3 * j]), int(coords[2 + 3 * j]))
                      for j in range(self.J))
        queues = tuple(int(coords[3 + 3 * j]) for j in range(self.J))
        prev = int(coords[-1]) if self.augment else None
        return GlobalState(int(coords[0]), links, queues), prev

    def coords(self) -> np.ndarray:
        """All state coordinates, shape (len(dims), size)."""
        return np.indices(self.dims).reshape(len(self.dims), -1)


@jit
def _build_actions(coords, J, q_max, slot, zeta, rate1, rate2, augment,
                   always, strides, sentinel):
    """Post-decision index per (state, action) and the action table.

    Actions are ordered RRH ascending, then packet count descending, so
    the first minimiser is the documented tie-break.
    """
    X = coords.shape[1]
    n_l = q_max + 1
    post = np.full((X, J * n_l), sentinel, dtype=np.int64)
    for x in range(X):
        qc = coords[0, x]
        prev = coords[1 + 3 * J, x] if augment else -1
        for b in range(J):
            fb = coords[1 + 3 * b, x]
            ab = coords[2 + 3 * b, x]
            qb = coords[3 + 3 * b, x]
            r1 = rate1[b, fb]
            r2 = rate2[b, ab]
            changed = True if always else prev != b
            rho = kernels.handover_time(changed, r1, r2, zeta)
            ub = kernels.l1_bound(qc, qb, q_max, rho, r1, slot)
            for l in range(ub + 1):
                d = kernels.delivered(qb, l, rho, r1, r2, slot)
                idx = 0
                for k in range(coords.shape[0]):
                    idx += coords[k, x] * strides[k]
                idx += (-l) * strides[0]
                idx += (l - d) * strides[3 + 3 * b]
                if augment:
                    idx += (b - prev) * strides[1 + 3 * J]
                post[x, b * n_l + (q_max - l)] = idx
    return post


@dataclass
class ExactSolution:
    values: np.ndarray        # relative values, zero at the reference state
    gain: float               # optimal long-run average cost per slot
    policy_b: np.ndarray      # 0-based RRH per state
    policy_l1: np.ndarray
    residual: float           # span of (T V - V) at return
    iterations: int
    post_values: np.ndarray   # expected post-decision values (without the gain)
    model: "ExactModel"

    def decision(self, state: GlobalState, prev: int | None = None) -> Decision:
        i = self.model.indexer.encode(state, prev)
        return Decision(int(self.policy_b[i]), int(self.policy_l1[i]))


class ExactModel:
    """Enumerated controlled Markov chain for one network."""

    def __init__(self, net: Network, augment: bool = False,
                 max_states: int = DEFAULT_MAX_STATES):
        self.net = net
        self.augment = augment
        # without the previous RRH in the state every slot pays signalling
        self.always = not augment or net.params.handover == "always"
        self.indexer = StateIndexer(net, augment)
        X = self.indexer.size
        if X > max_states:
            raise StateSpaceTooLarge(
                f"exact solver refuses {X} states (budget {max_states}); "
                f"reduce J, q_max or link state counts")
        p = net.params
        self.X = X
        coords = self.indexer.coords()
        self.q_sum = coords[0] + sum(coords[3 + 3 * j] for j in range(net.J))
        rate1, rate2, _, _ = net.kernel_arrays()
        self.post_index = _build_actions(
            coords, net.J, p.q_max, p.slot, p.signalling, rate1, rate2,
            augment, self.always, self.indexer.strides, X)
        n_l = p.q_max + 1
        k = np.arange(net.J * n_l)
        self.action_b = k // n_l
        self.action_l1 = p.q_max - k % n_l
        self._coords = coords

        pmf = net.traffic.pmf
        q = np.arange(n_l)
        A = np.arange(len(pmf))
        nxt = np.minimum(p.q_max, q[:, None] + A[None, :])
        self.arrival_matrix = np.zeros((n_l, n_l))
        np.add.at(self.arrival_matrix, (np.repeat(q, len(A)), nxt.ravel()),
                  np.tile(pmf, n_l))
        self.drop_cost = p.drop_weight * np.array(
            [expected_drops(int(v), net.traffic, p.q_max) for v in q])

    # ------------------------------------------------------------ kernels
    def post_values(self, h: np.ndarray) -> np.ndarray:
        """Expected drop cost plus next-state value for every post-decision
        state (same layout as the state space)."""
        V = h.reshape(self.indexer.dims)
        for j in range(self.net.J):
            for axis, chain in ((1 + 3 * j, self.net.fronthaul(j)),
                                (2 + 3 * j, self.net.access(j))):
                V = np.moveaxis(np.tensordot(chain.transition, V,
                                             axes=([1], [axis])), 0, axis)
        V = np.tensordot(self.arrival_matrix, V, axes=([1], [0]))
        V = V + self.drop_cost.reshape((-1,) + (1,) * (V.ndim - 1))
        return V.ravel()

    def q_values(self, h: np.ndarray) -> np.ndarray:
        """Per (state, action) cost-to-go; infeasible actions are +inf."""
        pv = np.append(self.post_values(h), np.inf)
        return self.q_sum[:, None] + pv[self.post_index]

    def bellman(self, h: np.ndarray) -> np.ndarray:
        return self.q_values(h).min(axis=1)

    # ------------------------------------------------------------ explicit
    def rho(self, state: GlobalState, b: int, prev: int | None) -> float:
        r1, r2 = self.net.rates(state, b)
        changed = True if self.always else prev != b
        return float(kernels.handover_time(changed, r1, r2,
                                           self.net.params.signalling))

    def feasible_decisions(self, state: GlobalState, prev: int | None = None):
        p = self.net.params
        for b in range(self.net.J):
            rho = self.rho(state, b, prev)
            ub = kernels.l1_bound(state.q_cu, state.queues[b], p.q_max, rho,
                                  self.net.rates(state, b)[0], p.slot)
            for l in range(ub + 1):
                yield Decision(b, l)

    def cost_vector(self, policy_b, policy_l1) -> np.ndarray:
        qc = self._coords[0]
        return self.q_sum + self.drop_cost[qc - policy_l1]

    def kernel_matrix(self) -> sp.csr_matrix:
        """Post-decision state -> next state transition matrix (sparse)."""
        mats = [sp.csr_matrix(self.arrival_matrix)]
        eye_q = sp.identity(self.net.params.q_max + 1, format="csr")
        for j in range(self.net.J):
            mats += [sp.csr_matrix(self.net.fronthaul(j).transition),
                     sp.csr_matrix(self.net.access(j).transition), eye_q]
        if self.augment:
            mats.append(sp.identity(self.net.J, format="csr"))
        return reduce(lambda x, y: sp.kron(x, y, format="csr"), mats)

    def policy_transition(self, policy_b, policy_l1) -> sp.csr_matrix:
        n_l = self.net.params.q_max + 1
        k = policy_b * n_l + (self.net.params.q_max - policy_l1)
        post = self.post_index[np.arange(self.X), k]
        if np.any(post >= self.X):
            raise ValueError("policy contains infeasible decisions")
        select = sp.csr_matrix((np.ones(self.X), (np.arange(self.X), post)),
                               shape=(self.X, self.X))
        return select @ self.kernel_matrix()


def transition_distribution(state: GlobalState, decision: Decision,
                            model: ExactModel, prev: int | None = None):
    """Successor states and probabilities, by explicit enumeration."""
    net = model.net
    p = net.params
    b, l1 = decision.rrh, decision.l1
    rho = model.rho(state, b, prev)
    r1, r2 = net.rates(state, b)
    ub = kernels.l1_bound(state.q_cu, state.queues[b], p.q_max, rho, r1, p.slot)
    if not 0 <= l1 <= ub:
        raise ValueError(f"infeasible decision {decision} (bound {ub})")
    d = kernels.delivered(state.queues[b], l1, rho, r1, r2, p.slot)
    queues = list(state.queues)
    queues[b] += l1 - d
    queues = tuple(queues)

    link_moves = []
    for j in range(net.J):
        fh, ac = net.fronthaul(j).transition, net.access(j).transition
        s = state.links[j]
        link_moves.append([(LinkPairState(f2, a2), fh[s.fronthaul, f2] * ac[s.access, a2])
                           for f2 in range(fh.shape[0]) for a2 in range(ac.shape[0])
                           if fh[s.fronthaul, f2] * ac[s.access, a2] > 0])

    out: dict[GlobalState, float] = {}
    combos = [((), 1.0)]
    for moves in link_moves:
        combos = [(c + (m,), pc * pm) for c, pc in combos for m, pm in moves]
    for a, pa in enumerate(net.traffic.pmf):
        if pa == 0:
            continue
        qc = min(p.q_max, state.q_cu + a - l1)
        for links, pl in combos:
            nxt = GlobalState(qc, links, queues)
            out[nxt] = out.get(nxt, 0.0) + pa * pl
    return list(out.items())


def extract_policy(values: np.ndarray, model: ExactModel, tie_tol: float = 1e-9):
    """Greedy policy w.r.t. ``values``: lowest RRH, then largest count,
    among actions within ``tie_tol`` (relative) of the minimum."""
    qv = model.q_values(values)
    best = qv.min(axis=1)
    near = qv <= best[:, None] + tie_tol * np.maximum(1.0, np.abs(best))[:, None]
    k = near.argmax(axis=1)
    return model.action_b[k], model.action_l1[k]


def relative_value_iteration(model: ExactModel, tolerance: float = 1e-9,
                             max_iters: int = 200_000, ref: int = 0,
                             damping: float = 1.0) -> ExactSolution:
    """Solve the average-cost Bellman equation by relative value iteration.

    ``damping`` < 1 mixes in the previous iterate (aperiodicity transform)
    for chains where plain iteration oscillates.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must be in (0, 1]")
    h = np.zeros(model.X)
    span = np.inf
    for it in range(1, max_iters + 1):
        diff = model.bellman(h) - h
        span = float(diff.max() - diff.min())
        h = h + damping * diff
        h -= h[ref]
        if span <= tolerance:
            break
    else:
        raise ConvergenceError(
            f"relative value iteration did not converge in {max_iters} "
            f"iterations (span residual {span:.3e})", span, max_iters)
    diff = model.bellman(h) - h
    residual = float(diff.max() - diff.min())
    gain = float(0.5 * (diff.max() + diff.min()))
    pb, pl = extract_policy(h, model)
    log.info("RVI converged: %d iterations, gain %.6f, residual %.2e",
             it, gain, residual)
    return ExactSolution(values=h, gain=gain, policy_b=pb, policy_l1=pl,
                         residual=residual, iterations=it,
                         post_values=model.post_values(h), model=model)


def evaluate_policy(model: ExactModel, policy_b, policy_l1, ref: int = 0):
    """Average cost and relative values of a fixed policy (linear solve)."""
    P = model.policy_transition(policy_b, policy_l1)
    c = model.cost_vector(policy_b, policy_l1)
    A = (sp.identity(model.X, format="csr") - P).tolil()
    A[:, ref] = np.ones((model.X, 1))
    z = spla.spsolve(A.tocsc(), c)
    gain = float(z[ref])
    h = z.copy()
    h[ref] = 0.0
    return gain, h


def stationary_distribution(model: ExactModel, policy_b, policy_l1,
                            ref: int = 0) -> np.ndarray:
    """Stationary state distribution of a unichain policy."""
    P = model.policy_transition(policy_b, policy_l1)
    A = (sp.identity(model.X, format="csr") - P).T.tolil()
    A[ref, :] = np.ones((1, model.X))
    rhs = np.zeros(model.X)
    rhs[ref] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def solve(net: Network, augment: bool = False, tolerance: float = 1e-9,
          max_iters: int = 200_000, max_states: int = DEFAULT_MAX_STATES,
          ref: int = 0, damping: float = 1.0) -> ExactSolution:
    model = ExactModel(net, augment=augment, max_states=max_states)
    return relative_value_iteration(model, tolerance, max_iters, ref, damping)
