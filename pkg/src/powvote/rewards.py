"""Reward schemes: constant, depth discount for vote trees, and targeted
discount for vote DAGs.

All three normalize so that a fully linear epoch mints exactly one unit per
proof-of-work. The tree discount scales every epoch member by d/k where d is
the longest in-epoch path ending at the closing block; the dag discount pays
each member (ancestors + descendants + 1) / k counted within the epoch, so
only proofs-of-work that actually sit beside a fork lose reward.
"""

from __future__ import annotations

from enum import Enum

from .blockdag import GENESIS, Dag, Kind
from .protocol import NotABlock, ProtocolKind, Rules, epoch


class Scheme(str, Enum):
    CONSTANT = "constant"
    TREE_DISCOUNT = "tree_discount"
    DAG_DISCOUNT = "dag_discount"


class SchemeProtocolMismatch(Exception):
    pass


_VALID_PAIRINGS = {
    Scheme.CONSTANT: (ProtocolKind.SEQUENTIAL, ProtocolKind.PARALLEL),
    Scheme.TREE_DISCOUNT: (ProtocolKind.TREE,),
    Scheme.DAG_DISCOUNT: (ProtocolKind.DAG,),
}


def scheme_for(kind: ProtocolKind) -> Scheme:
    """The evaluated pairing for each protocol kind."""
    if kind is ProtocolKind.TREE:
        return Scheme.TREE_DISCOUNT
    if kind is ProtocolKind.DAG:
        return Scheme.DAG_DISCOUNT
    return Scheme.CONSTANT


def check_pairing(scheme: Scheme, rules: Rules) -> None:
    if rules.kind not in _VALID_PAIRINGS[scheme]:
        raise SchemeProtocolMismatch(f"{scheme.value} does not pair with {rules.kind.value}")


def epoch_rewards(scheme: Scheme, rules: Rules, dag: Dag,
                  closing_block: int) -> dict[int, float]:
    """Reward per proof-of-work for the epoch the given block closes."""
    check_pairing(scheme, rules)
    members = epoch(rules, dag, closing_block)
    k = rules.k
    if scheme is Scheme.CONSTANT:
        return {m: 1.0 for m in members}
    if scheme is Scheme.TREE_DISCOUNT:
        d = dag.epoch_depth(closing_block)
        r = d / k
        return {m: r for m in members}
    # targeted discount: within-epoch lineage of each member; the closing
    # block is an epoch member and counts as a descendant of every vote
    anc = dag._epoch_ancestors
    out: dict[int, float] = {}
    for m in members:
        a = len(anc[m])
        if m == closing_block:
            s = 0
        else:
            s = 1 + sum(1 for q in members
                        if q != closing_block and m in anc[q])
        out[m] = (a + s + 1) / k
    return out


def chain_rewards(scheme: Scheme, rules: Rules, dag: Dag,
                  tip_block: int) -> dict[int, float]:
    """Total reward per miner over all complete epochs up to the tip."""
    if dag.kind(tip_block) is not Kind.BLOCK:
        raise NotABlock(f"unit {tip_block} is a vote")
    check_pairing(scheme, rules)
    totals: dict[int, float] = {}
    b = tip_block
    while b != GENESIS:
        for unit, r in epoch_rewards(scheme, rules, dag, b).items():
            m = dag.miner(unit)
            totals[m] = totals.get(m, 0.0) + r
        b = dag.confirms(b)
    return totals
