"""Joint RRH association and packet scheduling in a two-hop mmWave cloud-RAN.

Modules: ``channel`` (link Markov chains), ``dynamics`` (one-slot system
model), ``exact`` (average-cost MDP oracle), ``learning`` (decomposed
post-decision value learner), ``policies`` (baselines), ``simulation``
(slot loop) and ``harness`` (configs, sweeps, outputs).
"""
from ._accel import backend
from .channel import LinkChain, LinkPairState, LinkStateSpace, sticky_chain
from .dynamics import Decision, GlobalState, Network, SystemParams, TrafficModel
from .learning import LearnerConfig, ValueTables
from .simulation import Metrics, Simulator

__version__ = "0.1.0"

__all__ = [
    "backend", "LinkChain", "LinkPairState", "LinkStateSpace", "sticky_chain",
    "Decision", "GlobalState", "Network", "SystemParams", "TrafficModel",
    "LearnerConfig", "ValueTables", "Metrics", "Simulator",
]
