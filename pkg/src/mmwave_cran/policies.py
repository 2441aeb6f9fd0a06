"""Policy registry and the three heuristic baselines.

Baselines always schedule from the same feasibility bound the simulator
enforces, so they never need clamping.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .dynamics import Decision, GlobalState, Network, state_arrays

POLICY_CODES = {
    "proposed": kernels.PROPOSED,
    "max_rate": kernels.MAX_RATE,
    "max_queue": kernels.MAX_QUEUE,
    "random": kernels.RANDOM,
    "exact": kernels.EXACT,
}
BASELINES = ("max_rate", "max_queue", "random")


def policy_code(name: str) -> int:
    try:
        return POLICY_CODES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from "
                         f"{sorted(POLICY_CODES)}") from None


def _baseline(code, state: GlobalState, prev_rrh, net: Network, u1=0.0, u2=0.0):
    p = net.params
    q, f, a = state_arrays(state)
    rate1, rate2, _, _ = net.kernel_arrays()
    always, free = net.handover_flags()
    prev = -1 if prev_rrh is None else prev_rrh
    b, l1 = kernels.baseline_action(code, state.q_cu, q, f, a, prev, rate1,
                                    rate2, p.q_max, p.slot, p.signalling,
                                    always, free, u1, u2)
    return Decision(int(b), int(l1))


def baseline_max_rate(state: GlobalState, prev_rrh: int | None,
                      net: Network) -> Decision:
    """RRH with the largest fronthaul+access rate, full feasible push."""
    return _baseline(kernels.MAX_RATE, state, prev_rrh, net)


def baseline_max_queue(state: GlobalState, prev_rrh: int | None,
                       net: Network) -> Decision:
    """RRH with the longest queue, full feasible push."""
    return _baseline(kernels.MAX_QUEUE, state, prev_rrh, net)


def baseline_random(state: GlobalState, prev_rrh: int | None, net: Network,
                    rng: np.random.Generator) -> Decision:
    return _baseline(kernels.RANDOM, state, prev_rrh, net, rng.random(), rng.random())
