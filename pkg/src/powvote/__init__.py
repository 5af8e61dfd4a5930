"""Deterministic simulator for proof-of-work consensus with parallel voting,
reward discounting, and selfish-mining attack search."""

from .blockdag import GENESIS, Dag, Kind
from .netsim import Scenario, Sim, new_sim
from .protocol import ProtocolKind, Rules
from .rewards import Scheme, chain_rewards, epoch_rewards, scheme_for

__version__ = "0.1.0"

__all__ = [
    "GENESIS", "Dag", "Kind", "Scenario", "Sim", "new_sim",
    "ProtocolKind", "Rules", "Scheme", "chain_rewards", "epoch_rewards",
    "scheme_for", "__version__",
]
