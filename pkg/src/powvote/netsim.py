"""Seeded virtual-time simulation of mining and propagation.

One global exponential clock drives proof-of-work successes; the winner is
sampled proportionally to hashrate (equivalent to independent per-node
exponential miners). Defenders follow the protocol and broadcast
immediately; everything the attacker node mines is withheld until a policy
releases it. The attacker hears every proof-of-work the instant it exists,
so its receive order equals creation order.

With base_delay == 0 all non-deceived defenders provably share one view (and
the deceived defenders another), so the simulation keeps one view object per
camp; with base_delay > 0 every defender gets its own view and deliveries
are scheduled events.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
from dataclasses import dataclass
from enum import Enum
from random import Random
from typing import Callable, NamedTuple, Optional

from .blockdag import GENESIS, Dag, Kind
from .protocol import NodeView, Rules, mining_template
from .rewards import Scheme, check_pairing


class InvalidScenario(Exception):
    pass


class NotWithheld(Exception):
    pass


class CapExceeded(Exception):
    pass


class ReleaseMode(Enum):
    NORMAL = "normal"
    MATCH_RACE = "match_race"


@dataclass(frozen=True)
class Scenario:
    """Network and hashrate layout for one simulation.

    alpha            attacker share of total hashrate, in [0, 1)
    gamma            fraction of defender hashrate that receives the
                     attacker's matching release first during a tie race
    n_defenders      number of protocol-following nodes
    mining_rate      proofs-of-work per virtual second (lambda)
    base_delay       defender-to-defender propagation delay, virtual seconds
    defender_weights optional relative hashrates for the defenders
                     (normalized to 1 - alpha); even split when omitted
    """

    alpha: float
    gamma: float = 0.0
    n_defenders: int = 20
    mining_rate: float = 1.0
    base_delay: float = 0.0
    seed: int = 0
    defender_weights: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha < 1.0):
            raise InvalidScenario(f"alpha {self.alpha} not in [0, 1)")
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidScenario(f"gamma {self.gamma} not in [0, 1]")
        if self.n_defenders < 1:
            raise InvalidScenario("need at least one defender")
        if self.mining_rate <= 0:
            raise InvalidScenario("mining rate must be positive")
        if self.base_delay < 0:
            raise InvalidScenario("negative delay")
        if self.defender_weights is not None:
            if len(self.defender_weights) != self.n_defenders:
                raise InvalidScenario("one weight per defender required")
            if min(self.defender_weights) < 0 or sum(self.defender_weights) <= 0:
                raise InvalidScenario("weights must be non-negative, sum positive")


class StepRecord(NamedTuple):
    time: float
    kind: str          # "mine" | "deliver"
    node: int          # miner for "mine", recipient (or camp code) for "deliver"
    unit: int


MINE = 0
DELIVER = 1


class Sim:
    def __init__(self, scenario: Scenario, rules: Rules, scheme: Scheme,
                 emit_log: bool = False) -> None:
        check_pairing(scheme, rules)
        self.scenario = scenario
        self.rules = rules
        self.scheme = scheme
        self.rng = Random(scenario.seed)
        self.dag = Dag()
        self.time = 0.0
        self.puzzles = 0
        self._seq = itertools.count()
        self._queue: list[tuple[float, int, int, int, int]] = []

        n = scenario.n_defenders
        self.attacker = n
        if scenario.defender_weights is None:
            dw = [(1.0 - scenario.alpha) / n] * n
        else:
            total = sum(scenario.defender_weights)
            dw = [w / total * (1.0 - scenario.alpha) for w in scenario.defender_weights]
        self._cum: list[float] = []
        acc = 0.0
        for w in dw:
            acc += w
            self._cum.append(acc)
        self.defender_total = acc

        # deceived defenders: minimal id prefix whose hashrate share is
        # closest to gamma
        best_m, best_err = 0, abs(scenario.gamma)
        run = 0.0
        for m, w in enumerate(dw, start=1):
            run += w
            err = abs(run / self.defender_total - scenario.gamma)
            if err < best_err:
                best_m, best_err = m, err
        self.deceived = frozenset(range(best_m))

        # views: the public observer tracks attacker-owned votes so the
        # attacker can assemble blocks from its own released votes
        self.public = NodeView(self.dag, owner=self.attacker)
        self.per_node = scenario.base_delay > 0
        if self.per_node:
            self._views: list[NodeView] = [NodeView(self.dag) for _ in range(n)]
            self._camps: list[tuple[int, NodeView]] = []
        else:
            # camp codes: -2 the non-deceived defenders, -3 the deceived ones
            self._camps = []
            if len(self.deceived) < n:
                self._camps.append((-2, NodeView(self.dag)))
            if self.deceived:
                self._camps.append((-3, NodeView(self.dag)))
            by_code = dict(self._camps)
            self._views = [by_code[-3 if d in self.deceived else -2]
                           for d in range(n)]
        self._camp_by_code = dict(self._camps)

        # attacker state: private overlay over public knowledge
        self.withheld: list[int] = []
        self._withheld_set: set[int] = set()
        self.withheld_votes_on: dict[int, list[int]] = {}
        self.discarded: set[int] = set()
        self.exclusive = False
        self.att_tip = GENESIS

        self.log: Optional[list[str]] = [] if emit_log else None
        if self.log is not None:
            s = scenario
            self.log.append("# powvote-log v1")
            self.log.append(
                "# protocol=%s k=%d scheme=%s alpha=%r gamma=%r defenders=%d "
                "rate=%r delay=%r seed=%d weights=%s"
                % (rules.kind.value, rules.k, scheme.value, s.alpha, s.gamma,
                   s.n_defenders, s.mining_rate, s.base_delay, s.seed,
                   ",".join(repr(w) for w in s.defender_weights) if s.defender_weights else "even"))

        self._schedule_mine()

    # -- scheduling --------------------------------------------------------

    def _schedule_mine(self) -> None:
        gap = self.rng.expovariate(self.scenario.mining_rate)
        heapq.heappush(self._queue, (self.time + gap, next(self._seq), MINE, -1, -1))

    def _schedule_deliver(self, when: float, node: int, unit: int) -> None:
        heapq.heappush(self._queue, (when, next(self._seq), DELIVER, node, unit))

    # -- attacker bookkeeping ------------------------------------------------

    def _att_key(self, block: int) -> tuple[int, int, int]:
        votes = len(self.public.votes_on.get(block, ())) \
            + len(self.withheld_votes_on.get(block, ()))
        return (self.dag._height[block], votes, -block)

    def _att_learn(self, unit: int) -> None:
        if self.dag._kind[unit] is Kind.VOTE:
            root = self.dag._confirms[unit]
            if root != self.att_tip and self._att_key(root) > self._att_key(self.att_tip):
                self.att_tip = root
        elif self._att_key(unit) > self._att_key(self.att_tip):
            self.att_tip = unit

    def merged_votes(self, root: int, own_only: bool = False) -> list[int]:
        """Votes available to the attacker's templates on the given root."""
        pub = self.public.votes(root, own_only=own_only)
        hidden = self.withheld_votes_on.get(root, [])
        return pub + hidden if hidden else pub

    def adopt(self) -> None:
        """Discard the private fork and follow the defenders' chain."""
        self.discarded.update(self._withheld_set)
        self.withheld.clear()
        self._withheld_set.clear()
        self.withheld_votes_on.clear()
        self.att_tip = self.public.tip

    def set_exclusive(self, flag: bool) -> None:
        self.exclusive = flag

    # -- event processing -----------------------------------------------------

    def step(self) -> StepRecord:
        t, _, ekind, node, unit = heapq.heappop(self._queue)
        self.time = t
        if ekind == DELIVER:
            if self.per_node:
                self._views[node].add(unit)
            else:
                self._camp_by_code[node].add(unit)
            if self.log is not None:
                self.log.append(f"{t:.9f}\tdeliver\t{node}\t{unit}\t\t")
            return StepRecord(t, "deliver", node, unit)
        return self._mine()

    def _mine(self) -> StepRecord:
        t = self.time
        r = self.rng.random()
        # winner: defenders own [0, defender_total), attacker the rest
        if r >= self.defender_total:
            w = self.attacker
        else:
            w = bisect.bisect_right(self._cum, r)

        if w == self.attacker:
            tip = self.att_tip
            votes = self.merged_votes(tip, own_only=self.exclusive)
            tpl = mining_template(self.rules, self.dag, tip, votes)
            unit = self.dag.append(tpl.parents, w, tpl.kind)
            self.withheld.append(unit)
            self._withheld_set.add(unit)
            if tpl.kind is Kind.VOTE:
                self.withheld_votes_on.setdefault(tpl.confirms, []).append(unit)
            self._att_learn(unit)
        else:
            view = self._views[w]
            tpl = mining_template(self.rules, self.dag, view.tip,
                                  view.votes(view.tip))
            unit = self.dag.append(tpl.parents, w, tpl.kind)
            self._broadcast(unit, miner=w)
            self._att_learn(unit)

        self.puzzles += 1
        if self.log is not None:
            parents = ",".join(str(p) for p in self.dag.parents(unit))
            kind = "block" if self.dag.kind(unit) is Kind.BLOCK else "vote"
            self.log.append(f"{t:.9f}\tmine\t{w}\t{unit}\t{parents}\t{kind}")
        self._schedule_mine()
        return StepRecord(t, "mine", w, unit)

    def _broadcast(self, unit: int, miner: int) -> None:
        """A defender shares a fresh unit: public at once, peers after delay."""
        self.public.add(unit)
        if self.per_node:
            self._views[miner].add(unit)
            when = self.time + self.scenario.base_delay
            for d in range(self.scenario.n_defenders):
                if d != miner:
                    self._schedule_deliver(when, d, unit)
        else:
            for code, _ in self._camps:
                self._schedule_deliver(self.time, code, unit)

    def release(self, units, mode: ReleaseMode) -> None:
        """Hand withheld units to the defenders, in topological order.

        NORMAL reaches every defender after base_delay. MATCH_RACE reaches
        deceived defenders immediately (before the competing block they have
        not yet received) and everyone else after base_delay, behind it.
        """
        units = list(units)
        for u in units:
            if u not in self._withheld_set:
                raise NotWithheld(f"unit {u} is not withheld")
        for u in self.dag.topo_order(units):
            self._withheld_set.remove(u)
            self.withheld.remove(u)
            if self.dag.kind(u) is Kind.VOTE:
                root = self.dag.confirms(u)
                self.withheld_votes_on[root].remove(u)
                if not self.withheld_votes_on[root]:
                    del self.withheld_votes_on[root]
            self.public.add(u)
            if self.log is not None:
                self.log.append(
                    f"{self.time:.9f}\trelease\t{self.attacker}\t{u}\t\t{mode.value}")
            when = self.time + self.scenario.base_delay
            if self.per_node:
                for d in range(self.scenario.n_defenders):
                    if mode is ReleaseMode.MATCH_RACE and d in self.deceived:
                        self._views[d].add(u)
                    else:
                        self._schedule_deliver(when, d, u)
            else:
                for code, view in self._camps:
                    if mode is ReleaseMode.MATCH_RACE and code == -3:
                        view.add(u)
                    else:
                        self._schedule_deliver(self.time, code, u)

    # -- running ----------------------------------------------------------------

    def committed_progress(self) -> int:
        return self.rules.k * self.dag.height(self.public.tip)

    def run_until(self, pred: Callable[["Sim"], bool],
                  cap: Optional[int] = None) -> "Sim":
        steps = 0
        while not pred(self):
            if cap is not None and steps >= cap:
                raise CapExceeded(f"{steps} steps without satisfying predicate")
            self.step()
            steps += 1
        return self

    def view_of(self, defender: int) -> NodeView:
        return self._views[defender]


def new_sim(scenario: Scenario, rules: Rules, scheme: Scheme,
            emit_log: bool = False) -> Sim:
    return Sim(scenario, rules, scheme, emit_log=emit_log)


def progress_at_least(n: int) -> Callable[[Sim], bool]:
    return lambda sim: sim.committed_progress() >= n


def puzzles_at_least(n: int) -> Callable[[Sim], bool]:
    return lambda sim: sim.puzzles >= n
