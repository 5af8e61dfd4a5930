"""The four consensus rule-sets and their shared machinery.

Sequential proof-of-work is a plain longest chain (one proof-of-work per
block, k = 1). The parallel variants require k - 1 votes confirming the tip
block before the next block can be assembled, and differ in how votes may
reference each other: not at all (parallel), one same-epoch vote (tree
voting), or any set of same-epoch votes (dag voting).

Fork choice is lexicographic for all four: chain height first, then number
of known votes confirming the tip, then first-received.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, Optional

from .blockdag import GENESIS, Dag, Kind


class ProtocolKind(str, Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"
    TREE = "tree"
    DAG = "dag"


@dataclass(frozen=True)
class Rules:
    kind: ProtocolKind
    k: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kind is ProtocolKind.SEQUENTIAL and self.k != 1:
            raise ValueError("sequential proof-of-work is k = 1 by definition")

    @staticmethod
    def sequential() -> "Rules":
        return Rules(ProtocolKind.SEQUENTIAL, 1)

    @staticmethod
    def parallel(k: int) -> "Rules":
        return Rules(ProtocolKind.PARALLEL, k)

    @staticmethod
    def tree(k: int) -> "Rules":
        return Rules(ProtocolKind.TREE, k)

    @staticmethod
    def dag(k: int) -> "Rules":
        return Rules(ProtocolKind.DAG, k)


# -- validation ----------------------------------------------------------------

class ValidationError(Exception):
    pass


class WrongParentCount(ValidationError):
    pass


class CrossEpochReference(ValidationError):
    pass


class WrongVoteCount(ValidationError):
    pass


class RedundantParent(ValidationError):
    pass


class ForbiddenKind(ValidationError):
    pass


class NotABlock(ValidationError):
    pass


class GenesisHasNoEpoch(ValidationError):
    pass


def _vote_closure(dag: Dag, vote_parents: Iterable[int]) -> set[int]:
    """Referenced votes plus all their same-epoch vote ancestors."""
    out: set[int] = set()
    for v in vote_parents:
        out.add(v)
        out |= dag.epoch_ancestors(v)
    return out


def validate(rules: Rules, dag: Dag, unit: int) -> None:
    """Check one unit against the structural rules; raises on violation."""
    if unit == GENESIS:
        return
    parents = dag.parents(unit)
    kind = dag.kind(unit)
    block_parents = [p for p in parents if dag.kind(p) is Kind.BLOCK]
    vote_parents = [p for p in parents if dag.kind(p) is Kind.VOTE]

    if kind is Kind.VOTE:
        if rules.kind is ProtocolKind.SEQUENTIAL:
            raise ForbiddenKind("sequential proof-of-work has no votes")
        if rules.kind in (ProtocolKind.PARALLEL, ProtocolKind.TREE):
            if len(parents) != 1:
                raise WrongParentCount(f"vote must have one parent, got {len(parents)}")
            if rules.kind is ProtocolKind.PARALLEL and vote_parents:
                raise ForbiddenKind("parallel votes reference the block directly")
            return
        # dag voting: every parent is the epoch root or a same-epoch vote
        if len(block_parents) > 1:
            raise WrongParentCount("vote references more than one block")
        roots = {dag.confirms(v) for v in vote_parents}
        if block_parents:
            roots.add(block_parents[0])
        if len(roots) != 1:
            raise CrossEpochReference(f"vote parents span epochs: roots {sorted(roots)}")
        if block_parents and vote_parents:
            raise RedundantParent("the epoch root is an ancestor of every epoch vote")
        for a in vote_parents:
            for b in vote_parents:
                if a != b and a in dag.epoch_ancestors(b):
                    raise RedundantParent(f"parent {a} is an ancestor of parent {b}")
        return

    # blocks
    if rules.kind is ProtocolKind.SEQUENTIAL:
        if len(parents) != 1 or not block_parents:
            raise WrongParentCount("sequential block needs exactly one block parent")
        return
    if len(block_parents) != 1:
        raise WrongParentCount(f"block needs exactly one block parent, got {len(block_parents)}")
    pred = block_parents[0]
    for v in vote_parents:
        if dag.confirms(v) != pred:
            raise CrossEpochReference(
                f"vote {v} confirms {dag.confirms(v)}, block extends {pred}")
    closure = _vote_closure(dag, vote_parents)
    if len(closure) != rules.k - 1:
        raise WrongVoteCount(
            f"epoch needs {rules.k - 1} votes, ancestry has {len(closure)}")
    if rules.kind is ProtocolKind.PARALLEL:
        for v in closure:
            if dag.parents(v) != (pred,):
                raise CrossEpochReference(f"parallel vote {v} does not sit on {pred}")


def epoch(rules: Rules, dag: Dag, block: int) -> frozenset[int]:
    """All k proofs-of-work of the epoch the given block closes."""
    if dag.kind(block) is not Kind.BLOCK:
        raise NotABlock(f"unit {block} is a vote")
    if block == GENESIS:
        raise GenesisHasNoEpoch("genesis closes no epoch")
    return frozenset(dag.epoch_ancestors(block)) | {block}


def progress(rules: Rules, dag: Dag, block: int) -> int:
    """Proofs-of-work committed on the chain ending at the given block."""
    if dag.kind(block) is not Kind.BLOCK:
        raise NotABlock(f"unit {block} is a vote")
    return rules.k * dag.height(block)


# -- per-node knowledge and fork choice ------------------------------------------

class NodeView:
    """What one node knows, in the order it learned it.

    Tracks, incrementally: arrival sequence numbers, votes confirming each
    block, and the preferred tip under the (height desc, tip votes desc,
    first received) order. Blocks delivered before their parents are
    buffered and surface once the parents are known.
    """

    __slots__ = ("dag", "owner", "arrival", "votes_on", "own_votes_on",
                 "tip", "_next", "_pending")

    def __init__(self, dag: Dag, owner: Optional[int] = None) -> None:
        self.dag = dag
        self.owner = owner
        self.arrival: dict[int, int] = {GENESIS: 0}
        self.votes_on: dict[int, list[int]] = {}
        self.own_votes_on: dict[int, list[int]] = {}
        self.tip: int = GENESIS
        self._next = 1
        self._pending: dict[int, list[int]] = {}

    def knows(self, unit: int) -> bool:
        return unit in self.arrival

    def key(self, block: int) -> tuple[int, int, int]:
        return (self.dag._height[block],
                len(self.votes_on.get(block, ())),
                -self.arrival[block])

    def add(self, unit: int) -> None:
        """Deliver one unit; buffers it if some parent is still unknown."""
        arrival = self.arrival
        if unit in arrival:
            return
        dag = self.dag
        for p in dag._parents[unit]:
            if p not in arrival:
                self._pending.setdefault(p, []).append(unit)
                return
        arrival[unit] = self._next
        self._next += 1
        if dag._kind[unit] is Kind.VOTE:
            root = dag._confirms[unit]
            self.votes_on.setdefault(root, []).append(unit)
            if self.owner is not None and dag._miner[unit] == self.owner:
                self.own_votes_on.setdefault(root, []).append(unit)
            if root != self.tip and self.key(root) > self.key(self.tip):
                self.tip = root
        elif self.key(unit) > self.key(self.tip):
            self.tip = unit
        if unit in self._pending:
            for waiting in self._pending.pop(unit):
                self.add(waiting)

    def votes(self, root: int, own_only: bool = False) -> list[int]:
        src = self.own_votes_on if own_only else self.votes_on
        return src.get(root, [])


def preference(rules: Rules, view: NodeView) -> int:
    """The tip block with the lexicographically best key known to the node."""
    return view.tip


def best_tip_scan(view: NodeView) -> int:
    """Fork choice recomputed from scratch; reference for the incremental tip."""
    dag = view.dag
    blocks = [u for u in view.arrival if dag.kind(u) is Kind.BLOCK]
    return max(blocks, key=view.key)


# -- mining templates --------------------------------------------------------------

class Template(NamedTuple):
    kind: Kind
    parents: tuple[int, ...]
    confirms: int


def select_epoch_votes(dag: Dag, votes: Iterable[int], need: int) -> set[int]:
    """Pick an ancestry-closed set of exactly `need` votes.

    Candidates are scanned deepest-first (ties by id) and taken together
    with their same-epoch ancestors; a branch that would overshoot is
    truncated by selecting the deepest interior vote that still fits.
    """
    chosen: set[int] = set()
    if need == 0:
        return chosen
    depth = dag._epoch_depth
    anc = dag._epoch_ancestors
    order = sorted(votes, key=lambda v: (-depth[v], v))
    for v in order:
        if len(chosen) == need:
            break
        if v in chosen:
            continue
        missing = anc[v] - chosen
        if len(chosen) + len(missing) + 1 <= need:
            chosen |= missing
            chosen.add(v)
            continue
        for u in sorted(missing, key=lambda u: (-depth[u], u)):
            miss_u = anc[u] - chosen
            if len(chosen) + len(miss_u) + 1 <= need:
                chosen |= miss_u
                chosen.add(u)
                break
    if len(chosen) != need:
        raise AssertionError(f"selected {len(chosen)} of {need} votes")
    return chosen


def _leaves_within(dag: Dag, units: set[int]) -> list[int]:
    children = dag._children
    return [u for u in units
            if not any(c in units for c in children[u])]


def _reduced_leaves(dag: Dag, units: Iterable[int]) -> list[int]:
    """Leaves of a same-epoch vote subset, ancestry-redundant members dropped."""
    us = set(units)
    leaves = _leaves_within(dag, us)
    if len(leaves) == 1:
        return leaves
    anc = dag._epoch_ancestors
    return sorted(v for v in leaves
                  if not any(v in anc[w] for w in leaves if w != v))


def mining_template(rules: Rules, dag: Dag, tip: int, votes: list[int]) -> Template:
    """What to mine on the given tip from the given eligible votes.

    With k - 1 or more votes available the template is a block closing the
    epoch; otherwise a vote placed according to the protocol kind.
    """
    k = rules.k
    if len(votes) >= k - 1:
        chosen = select_epoch_votes(dag, votes, k - 1)
        refs = sorted(_leaves_within(dag, chosen))
        return Template(Kind.BLOCK, (tip, *refs), tip)
    if rules.kind is ProtocolKind.PARALLEL:
        return Template(Kind.VOTE, (tip,), tip)
    if rules.kind is ProtocolKind.TREE:
        if votes:
            depth = dag._epoch_depth
            deepest = max(votes, key=lambda v: (depth[v], -v))
            return Template(Kind.VOTE, (deepest,), tip)
        return Template(Kind.VOTE, (tip,), tip)
    if rules.kind is ProtocolKind.DAG:
        refs = _reduced_leaves(dag, votes)
        return Template(Kind.VOTE, tuple(refs) if refs else (tip,), tip)
    raise AssertionError("sequential mining always produces blocks")


def template_for(rules: Rules, view: NodeView, own_only: bool = False) -> Template:
    """Mining template for a node's current knowledge and vote filter."""
    tip = view.tip
    return mining_template(rules, view.dag, tip, view.votes(tip, own_only))
