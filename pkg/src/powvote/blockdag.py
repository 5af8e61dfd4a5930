"""Append-only DAG store for proof-of-work units (blocks and votes).

Units are addressed by dense integer ids assigned in append order, so every
parent id is smaller than its children's and ascending id order is always a
valid topological order. Nothing is ever mutated or removed after append.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Callable, Iterable, NamedTuple, Optional

GENESIS = 0

_EMPTY: frozenset[int] = frozenset()


class Kind(IntEnum):
    BLOCK = 0
    VOTE = 1


class DagError(Exception):
    pass


class UnknownId(DagError):
    pass


class UnknownParent(DagError):
    pass


class UnitRecord(NamedTuple):
    id: int
    parents: tuple[int, ...]
    miner: int
    kind: Kind
    height: int


class Dag:
    """Write-only DAG with cached heights, epoch geometry, and reachability.

    Per-unit caches (computed once at append):
      height      -- number of non-genesis blocks on the chain up to and
                     including this unit's block (votes carry the height of
                     the block they confirm)
      confirms    -- for a vote: the block it confirms (its epoch root);
                     for a block: its predecessor block; None for genesis
      epoch_depth -- length of the longest path of same-epoch proofs-of-work
                     ending here (this unit included)
      epoch_ancestors -- strict same-epoch vote ancestors, as a frozenset

    Global reachability uses per-unit ancestor bitmasks (bit i set iff unit
    i is a strict ancestor). Those are quadratic in dag size, so they are
    built lazily on the first reachability query; simulations that never ask
    global reachability questions pay nothing.
    """

    def __init__(self) -> None:
        self._parents: list[tuple[int, ...]] = [()]
        self._children: list[list[int]] = [[]]
        self._miner: list[int] = [-1]
        self._kind: list[Kind] = [Kind.BLOCK]
        self._height: list[int] = [0]
        self._confirms: list[Optional[int]] = [None]
        self._epoch_depth: list[int] = [0]
        self._epoch_ancestors: list[frozenset[int]] = [_EMPTY]
        self._anc_mask: list[int] = []  # built on first reachability query

    def __len__(self) -> int:
        return len(self._parents)

    def __contains__(self, unit: int) -> bool:
        return 0 <= unit < len(self._parents)

    def _check(self, unit: int) -> None:
        if not (0 <= unit < len(self._parents)):
            raise UnknownId(f"unknown unit id {unit}")

    def append(self, parents: Iterable[int], miner: int, kind: Kind) -> int:
        parents = tuple(parents)
        n = len(self._parents)
        for p in parents:
            if not (0 <= p < n):
                raise UnknownParent(f"parent {p} not in dag")
        if len(set(parents)) != len(parents):
            raise ValueError(f"duplicate parents {parents}")
        if not parents:
            raise ValueError("only genesis has no parents")

        # the first block-kind parent, else the epoch root of the first parent
        ref = None
        for p in parents:
            if self._kind[p] is Kind.BLOCK:
                ref = p
                break
        if ref is None:
            ref = self._confirms[parents[0]]

        vote_parents = [p for p in parents if self._kind[p] is Kind.VOTE]
        depth = 1 + max((self._epoch_depth[p] for p in vote_parents), default=0)
        anc = _EMPTY
        if vote_parents:
            acc = set()
            for p in vote_parents:
                acc.add(p)
                acc |= self._epoch_ancestors[p]
            anc = frozenset(acc)

        if len(self._anc_mask) == n:  # masks are current, keep them current
            mask = 0
            for p in parents:
                mask |= self._anc_mask[p] | (1 << p)
            self._anc_mask.append(mask)

        self._parents.append(parents)
        self._children.append([])
        self._miner.append(miner)
        self._kind.append(kind)
        self._height.append(self._height[ref] + (1 if kind is Kind.BLOCK else 0))
        self._confirms.append(ref)
        self._epoch_depth.append(depth)
        self._epoch_ancestors.append(anc)
        for p in parents:
            self._children[p].append(n)
        return n

    # -- per-unit accessors ------------------------------------------------

    def parents(self, unit: int) -> tuple[int, ...]:
        self._check(unit)
        return self._parents[unit]

    def children(self, unit: int) -> list[int]:
        self._check(unit)
        return self._children[unit]

    def miner(self, unit: int) -> int:
        self._check(unit)
        return self._miner[unit]

    def kind(self, unit: int) -> Kind:
        self._check(unit)
        return self._kind[unit]

    def height(self, unit: int) -> int:
        self._check(unit)
        return self._height[unit]

    def confirms(self, unit: int) -> Optional[int]:
        self._check(unit)
        return self._confirms[unit]

    def epoch_depth(self, unit: int) -> int:
        self._check(unit)
        return self._epoch_depth[unit]

    def epoch_ancestors(self, unit: int) -> frozenset[int]:
        self._check(unit)
        return self._epoch_ancestors[unit]

    def record(self, unit: int) -> UnitRecord:
        self._check(unit)
        return UnitRecord(unit, self._parents[unit], self._miner[unit],
                          self._kind[unit], self._height[unit])

    # -- reachability ------------------------------------------------------

    def _masks(self) -> list[int]:
        mm = self._anc_mask
        while len(mm) < len(self._parents):
            u = len(mm)
            mask = 0
            for p in self._parents[u]:
                mask |= mm[p] | (1 << p)
            mm.append(mask)
        return mm

    def is_ancestor(self, a: int, b: int) -> bool:
        """True iff a is a strict ancestor of b (a == b is not ancestry)."""
        self._check(a)
        self._check(b)
        return bool((self._masks()[b] >> a) & 1)

    def ancestors(self, unit: int,
                  keep: Optional[Callable[[int], bool]] = None) -> set[int]:
        self._check(unit)
        mask = self._masks()[unit]
        out = set()
        while mask:
            low = mask & -mask
            i = low.bit_length() - 1
            if keep is None or keep(i):
                out.add(i)
            mask ^= low
        return out

    def descendants(self, unit: int,
                    keep: Optional[Callable[[int], bool]] = None) -> set[int]:
        self._check(unit)
        out: set[int] = set()
        stack = list(self._children[unit])
        while stack:
            u = stack.pop()
            if u not in out:
                out.add(u)
                stack.extend(self._children[u])
        if keep is not None:
            out = {u for u in out if keep(u)}
        return out

    # -- orderings ---------------------------------------------------------

    def topo_order(self, units: Iterable[int]) -> list[int]:
        """Parents before children, ties broken by ascending id.

        Ids are assigned in append order, so ascending id satisfies both.
        """
        out = sorted(units)
        for u in out:
            self._check(u)
        return out

    def leaves(self, units: Iterable[int]) -> set[int]:
        """Members of the subset with no child inside the subset."""
        subset = set(units)
        for u in subset:
            self._check(u)
        return {u for u in subset
                if not any(c in subset for c in self._children[u])}

    # -- debugging ---------------------------------------------------------

    def to_dot(self, labels: Optional[dict[int, str]] = None) -> str:
        """DOT text dump: diamonds for blocks, circles for votes."""
        lines = ["digraph dag {", "  rankdir=RL;"]
        for u in range(len(self._parents)):
            shape = "diamond" if self._kind[u] is Kind.BLOCK else "circle"
            label = labels.get(u, str(u)) if labels else str(u)
            lines.append(f'  n{u} [shape={shape} label="{label}"];')
        for u in range(len(self._parents)):
            for p in self._parents[u]:
                lines.append(f"  n{u} -> n{p};")
        lines.append("}")
        return "\n".join(lines)
