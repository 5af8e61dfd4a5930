"""Shared builders and brute-force oracles for the test suite."""

import random

from powvote.blockdag import GENESIS, Dag, Kind
from powvote.protocol import ProtocolKind, Rules, mining_template, template_for


def mine_vote(rng, rules, dag, root, known, miner):
    """Append one structurally valid vote whose references lie in `known`."""
    if rules.kind is ProtocolKind.PARALLEL or not known:
        parents = (root,)
    elif rules.kind is ProtocolKind.TREE:
        parents = (rng.choice(sorted(known)),)
    else:
        pick = rng.sample(sorted(known), rng.randint(1, min(3, len(known))))
        reduced = [v for v in pick
                   if not any(v != w and dag.is_ancestor(v, w) for w in pick)]
        parents = tuple(sorted(set(reduced)))
    return dag.append(parents, miner, Kind.VOTE)


def closed_subset_of_size(rng, dag, votes, size):
    """Random ancestry-closed subset of the votes with exactly `size` members."""
    chosen = set()
    while len(chosen) < size:
        frontier = [v for v in votes
                    if v not in chosen and dag.epoch_ancestors(v) <= chosen]
        v = rng.choice(frontier)
        chosen.add(v)
    return chosen


def random_epoch(rng, rules, dag, root, extra=0):
    """Grow one random valid epoch on `root`; returns the closing block.

    Mines k - 1 + extra votes with randomized structure, then closes the
    epoch with a block over a random ancestry-closed (k - 1)-subset.
    """
    votes = []
    for i in range(rules.k - 1 + extra):
        votes.append(mine_vote(rng, rules, dag, root, votes, rng.randrange(4)))
    chosen = closed_subset_of_size(rng, dag, votes, rules.k - 1)
    refs = sorted(v for v in chosen
                  if not any(c in chosen for c in dag.children(v)))
    return dag.append((root, *refs), rng.randrange(4), Kind.BLOCK)


def honest_chain(rules, n_epochs, miner=0, seed=None):
    """Single-miner honest chain of n_epochs epochs; returns (dag, tip)."""
    from powvote.protocol import NodeView
    dag = Dag()
    view = NodeView(dag)
    for _ in range(n_epochs * rules.k):
        t = template_for(rules, view)
        view.add(dag.append(t.parents, miner, t.kind))
    return dag, view.tip


# -- reward oracles ------------------------------------------------------------

def epoch_edges(dag, members):
    """parent -> children adjacency restricted to the epoch members."""
    adj = {m: [] for m in members}
    for m in members:
        for p in dag.parents(m):
            if p in members:
                adj[p].append(m)
    return adj


def oracle_longest_path_depth(dag, members, closing_block):
    """Longest path of epoch members ending at the closing block (DFS)."""
    best = 0
    stack = [(closing_block, 1)]
    while stack:
        u, depth = stack.pop()
        best = max(best, depth)
        for p in dag.parents(u):
            if p in members:
                stack.append((p, depth + 1))
    return best


def oracle_dag_rewards(dag, members, closing_block, k):
    """(ancestors + descendants + 1) / k via reachability within the epoch."""
    def reach_up(u):
        seen = set()
        stack = [p for p in dag.parents(u) if p in members]
        while stack:
            w = stack.pop()
            if w not in seen:
                seen.add(w)
                stack.extend(p for p in dag.parents(w) if p in members)
        return seen

    up = {m: reach_up(m) for m in members}
    out = {}
    for m in members:
        a = len(up[m])
        s = sum(1 for q in members if m in up[q])
        out[m] = (a + s + 1) / k
    return out
