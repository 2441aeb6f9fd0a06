"""Finite-state Markov link models for fronthaul and radio-access hops."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

DEFAULT_STATES = ("Outage", "NLOS", "LOS")
DEFAULT_RATES = (0.0, 3.0, 8.0)
DEFAULT_STAY = 0.6


@dataclass(frozen=True)
class LinkStateSpace:
    """Named link states with a rate (packets per unit time) for each."""

    states: tuple[str, ...] = DEFAULT_STATES
    rates: tuple[float, ...] = DEFAULT_RATES

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if not self.states:
            raise ValueError("a link needs at least one state")
        if len(self.states) != len(self.rates):
            raise ValueError(
                f"{len(self.states)} state names but {len(self.rates)} rates")
        if len(set(self.states)) != len(self.states):
            raise ValueError(f"duplicate state names in {self.states}")
        for r in self.rates:
            if not np.isfinite(r) or r < 0:
                raise ValueError(f"rates must be finite and >= 0, got {r}")

    def __len__(self):
        return len(self.states)

    def index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise ValueError(f"unknown link state {name!r}; "
                             f"known: {self.states}") from None


@dataclass(frozen=True, eq=False)
class LinkChain:
    """A link state space plus its row-stochastic transition matrix."""

    space: LinkStateSpace
    transition: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        n = len(self.space)
        if P.shape != (n, n):
            raise ValueError(f"transition must be {n}x{n}, got {P.shape}")
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("transition entries must lie in [0, 1]")
        rowsum = P.sum(axis=1)
        if np.any(np.abs(rowsum - 1.0) > 1e-12):
            raise ValueError(f"transition rows must sum to 1, got {rowsum}")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        cdf = np.cumsum(P, axis=1)
        # exact 1.0 at the last column so inverse-CDF draws stay in range
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def n_states(self) -> int:
        return len(self.space)

    @property
    def rates(self) -> np.ndarray:
        return np.asarray(self.space.rates)

    @property
    def cdf(self) -> np.ndarray:
        return self._cdf

    def stationary(self, tol: float = 1e-14, max_iters: int = 100_000) -> np.ndarray:
        """Stationary distribution by power iteration from the uniform vector.

        The lazy chain (I + P)/2 is iterated so periodic chains still settle.
        """
        n = self.n_states
        pi = np.full(n, 1.0 / n)
        lazy = 0.5 * (np.eye(n) + self.transition)
        for _ in range(max_iters):
            nxt = pi @ lazy
            if np.abs(nxt - pi).sum() < tol:
                pi = nxt
                break
            pi = nxt
        return pi / pi.sum()


@dataclass(frozen=True)
class LinkPairState:
    """State indices of one RRH's fronthaul and access links."""

    fronthaul: int
    access: int


def sticky_chain(space: LinkStateSpace | None = None,
                 stay: float = DEFAULT_STAY) -> LinkChain:
    """Chain that stays put with probability ``stay`` and otherwise moves to
    a neighbouring state, splitting the remaining mass evenly between the
    neighbours that exist."""
    space = space or LinkStateSpace()
    n = len(space)
    P = np.zeros((n, n))
    for i in range(n):
        nbrs = [k for k in (i - 1, i + 1) if 0 <= k < n]
        if not nbrs:
            P[i, i] = 1.0
            continue
        P[i, i] = stay
        for k in nbrs:
            P[i, k] = (1.0 - stay) / len(nbrs)
    return LinkChain(space, P)


def default_chain() -> LinkChain:
    """Three-state Outage/NLOS/LOS stand-in profile (rates 0, 3, 8)."""
    return sticky_chain(LinkStateSpace(), DEFAULT_STAY)


def sample_next(chain: LinkChain, current: int, rng: np.random.Generator) -> int:
    if not 0 <= current < chain.n_states:
        raise IndexError(f"state {current} out of range for "
                         f"{chain.n_states}-state chain")
    return int(kernels.draw(chain.cdf[current], rng.random()))


def joint_transition_prob(chains: Sequence[LinkChain],
                          frm: Sequence[LinkPairState],
                          to: Sequence[LinkPairState]) -> float:
    """Probability that all 2J links move from ``frm`` to ``to`` in one slot.

    ``chains`` is ordered per RRH as fronthaul, access, fronthaul, access...
    """
    if len(chains) != 2 * len(frm) or len(frm) != len(to):
        raise ValueError(f"expected {2 * len(frm)} chains for {len(frm)} RRHs "
                         f"and matching from/to lengths, got {len(chains)} "
                         f"chains, {len(frm)} -> {len(to)} states")
    p = 1.0
    for j, (s, s2) in enumerate(zip(frm, to)):
        fh, ac = chains[2 * j], chains[2 * j + 1]
        for chain, i, k in ((fh, s.fronthaul, s2.fronthaul),
                            (ac, s.access, s2.access)):
            if not (0 <= i < chain.n_states and 0 <= k < chain.n_states):
                raise IndexError(f"link state index out of range in RRH {j}")
            p *= chain.transition[i, k]
    return float(p)


def all_pair_states(chains: Sequence[LinkChain]):
    """Iterate over every joint link configuration (one pair per RRH)."""
    J = len(chains) // 2
    ranges = []
    for j in range(J):
        ranges.append(range(chains[2 * j].n_states))
        ranges.append(range(chains[2 * j + 1].n_states))
    for combo in itertools.product(*ranges):
        yield [LinkPairState(combo[2 * j], combo[2 * j + 1]) for j in range(J)]
