"""Attacker action space, observation extraction, and action execution.

Fork actions follow the selfish-mining playbook: keep withholding (Wait),
release just enough to tie the defenders' preference (Match), release just
enough to strictly beat it (Override), or abandon the private fork (Adopt).
Independently, the vote-inclusion stance decides whether the attacker's
mining templates consider all known votes or only its own.

Release prefixes are scanned element-wise over the withheld set in
topological order; Match and Override take the first prefix whose released
tip reaches, respectively equals or exceeds, the defenders' current
(height, tip votes) key.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple, Optional

from .blockdag import GENESIS, Dag, Kind
from .netsim import ReleaseMode, Sim


class ForkAction(Enum):
    WAIT = "wait"
    MATCH = "match"
    OVERRIDE = "override"
    ADOPT = "adopt"


class VoteFilter(Enum):
    INCLUSIVE = "inclusive"
    EXCLUSIVE = "exclusive"


@dataclass(frozen=True)
class Action:
    fork: ForkAction
    votes: VoteFilter


ACTIONS: tuple[Action, ...] = tuple(
    Action(f, v) for f in ForkAction for v in VoteFilter)


class InfeasibleAction(Exception):
    pass


class Observation(NamedTuple):
    """The attacker's six-variable view of the fork."""
    defender_blocks: int
    attacker_blocks: int
    defender_tip_votes: int
    attacker_tip_votes: int
    attacker_own_tip_votes: int
    mined_locally: bool

    def key(self, cap: int) -> tuple[int, int, int, int, int, bool]:
        return (min(self.defender_blocks, cap),
                min(self.attacker_blocks, cap),
                min(self.defender_tip_votes, cap),
                min(self.attacker_tip_votes, cap),
                min(self.attacker_own_tip_votes, cap),
                self.mined_locally)


@dataclass(frozen=True)
class ForkState:
    public_tip: int
    private_tip: int
    fork_root: int
    withheld: tuple[int, ...]


def fork_root(sim: Sim) -> int:
    """Last block common to the private and the public chain."""
    height = sim.dag._height
    confirms = sim.dag._confirms
    a, b = sim.att_tip, sim.public.tip
    while a != b:
        ha, hb = height[a], height[b]
        if ha > hb:
            a = confirms[a]
        elif hb > ha:
            b = confirms[b]
        else:
            a, b = confirms[a], confirms[b]
    return a


def fork_state(sim: Sim) -> ForkState:
    return ForkState(sim.public.tip, sim.att_tip, fork_root(sim),
                     tuple(sim.withheld))


def observe(sim: Sim, mined_locally: bool) -> Observation:
    height = sim.dag._height
    pub = sim.public
    root = fork_root(sim)
    d_tip, a_tip = pub.tip, sim.att_tip
    hidden = len(sim.withheld_votes_on.get(a_tip, ()))
    return Observation(
        height[d_tip] - height[root],
        height[a_tip] - height[root],
        len(pub.votes_on.get(d_tip, ())),
        len(pub.votes_on.get(a_tip, ())) + hidden,
        len(pub.own_votes_on.get(a_tip, ())) + hidden,
        mined_locally,
    )


# -- release prefix search ----------------------------------------------------

def _released_tip(sim: Sim) -> int:
    """The highest already-public block on the attacker's private chain."""
    confirms = sim.dag._confirms
    known = sim.public.arrival
    b = sim.att_tip
    while b not in known:
        b = confirms[b]
    return b


def _prefix_states(sim: Sim) -> Iterator[tuple[int, int, tuple[int, int]]]:
    """(prefix length, released tip, its (height, votes) key) per prefix."""
    dag, pub = sim.dag, sim.public
    height = dag._height
    extra: dict[int, int] = {}

    def key(b: int) -> tuple[int, int]:
        return (height[b], len(pub.votes_on.get(b, ())) + extra.get(b, 0))

    best = _released_tip(sim)
    yield 0, best, key(best)
    for i, u in enumerate(sim.withheld, start=1):
        if dag._kind[u] is Kind.BLOCK:
            if key(u) > key(best):
                best = u
        else:
            root = dag._confirms[u]
            extra[root] = extra.get(root, 0) + 1
            if root != best and key(root) > key(best):
                best = root
        yield i, best, key(best)


def _defender_key(sim: Sim) -> tuple[int, tuple[int, int]]:
    tip = sim.public.tip
    return tip, (sim.dag._height[tip], len(sim.public.votes_on.get(tip, ())))


def match_prefix(sim: Sim) -> Optional[list[int]]:
    """Minimal withheld prefix whose release ties the defenders' key."""
    d_tip, d_key = _defender_key(sim)
    for i, tip, key in _prefix_states(sim):
        if tip != d_tip and key == d_key:
            return sim.withheld[:i]
    return None


def override_prefix(sim: Sim) -> Optional[list[int]]:
    """Minimal withheld prefix whose release strictly beats the defenders' key."""
    _, d_key = _defender_key(sim)
    for i, _, key in _prefix_states(sim):
        if key > d_key:
            return sim.withheld[:i]
    return None


# -- action interface -----------------------------------------------------------

def feasible(sim: Sim, action: Action) -> bool:
    if action.fork in (ForkAction.WAIT, ForkAction.ADOPT):
        return True
    if action.fork is ForkAction.MATCH:
        return match_prefix(sim) is not None
    return override_prefix(sim) is not None


def apply_action(sim: Sim, action: Action) -> None:
    """Execute the action; raises InfeasibleAction for impossible releases.

    The vote stance always takes effect and persists until changed.
    """
    sim.set_exclusive(action.votes is VoteFilter.EXCLUSIVE)
    if action.fork is ForkAction.WAIT:
        return
    if action.fork is ForkAction.ADOPT:
        sim.adopt()
        return
    if action.fork is ForkAction.MATCH:
        prefix = match_prefix(sim)
        if prefix is None:
            raise InfeasibleAction("no prefix ties the defenders' key")
        sim.release(prefix, ReleaseMode.MATCH_RACE)
        return
    prefix = override_prefix(sim)
    if prefix is None:
        raise InfeasibleAction("no prefix beats the defenders' key")
    sim.release(prefix, ReleaseMode.NORMAL)
