"""Attacker policies and the decision environment around the simulator.

The environment advances the simulation one proof-of-work at a time (the
attacker learns every proof-of-work immediately, so each one is a decision
point), applies the chosen action with a Wait fallback for infeasible
releases, and pays the shaped reward

    delta(attacker committed reward) - rho * delta(committed progress)

whose zero-mean fixed point over episodes makes rho the attacker's
normalized revenue. Committed means: on the defenders' currently preferred
chain, counted in complete epochs.

Policies: honest replication, a generalized selfish-mining baseline (sm1),
and a tabular Q-learner over capped observations.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from random import Random
from typing import NamedTuple, Optional

from .attacker import (
    ACTIONS,
    Action,
    ForkAction,
    InfeasibleAction,
    Observation,
    VoteFilter,
    apply_action,
    feasible,
    observe,
)
from .blockdag import GENESIS
from .netsim import Scenario, Sim
from .protocol import Rules, progress
from .rewards import Scheme, epoch_rewards

WAIT = ForkAction.WAIT
MATCH = ForkAction.MATCH
OVERRIDE = ForkAction.OVERRIDE
ADOPT = ForkAction.ADOPT
INCL = VoteFilter.INCLUSIVE
EXCL = VoteFilter.EXCLUSIVE


class SteppingDoneEpisode(Exception):
    pass


class EnvStep(NamedTuple):
    observation: Observation
    reward: float
    done: bool


@dataclass(frozen=True)
class StopRule:
    """Episode end: defenders' chain progress and/or total puzzles solved."""
    progress: Optional[int] = None
    puzzles: Optional[int] = None

    def holds(self, sim: Sim) -> bool:
        if self.progress is not None and sim.committed_progress() >= self.progress:
            return True
        if self.puzzles is not None and sim.puzzles >= self.puzzles:
            return True
        return False


_ZERO_OBS = Observation(0, 0, 0, 0, 0, False)


class Env:
    """One attack episode against a fresh simulation."""

    def __init__(self, scenario: Scenario, rules: Rules, scheme: Scheme,
                 stop: StopRule, rho: float = 0.0, emit_log: bool = False) -> None:
        self.rules = rules
        self.scheme = scheme
        self.stop = stop
        self.rho = rho
        self.sim = Sim(scenario, rules, scheme, emit_log=emit_log)
        self.done = False
        self._attacker_cum: dict[int, float] = {GENESIS: 0.0}
        self._last_reward = 0.0
        self._last_progress = 0

    # committed attacker reward, memoized per chain block
    def _cum(self, block: int) -> float:
        memo = self._attacker_cum
        got = memo.get(block)
        if got is not None:
            return got
        chain = []
        b = block
        while (cached := memo.get(b)) is None:
            chain.append(b)
            b = self.sim.dag.confirms(b)
        acc = cached
        attacker = self.sim.attacker
        dag = self.sim.dag
        for b in reversed(chain):
            acc += sum(r for u, r in
                       epoch_rewards(self.scheme, self.rules, dag, b).items()
                       if dag.miner(u) == attacker)
            memo[b] = acc
        return acc

    def committed(self) -> tuple[float, int]:
        """(attacker committed reward, committed progress) right now."""
        tip = self.sim.public.tip
        return self._cum(tip), progress(self.rules, self.sim.dag, tip)

    def result(self) -> float:
        """Normalized revenue of the episode so far."""
        reward, prog = self.committed()
        return reward / prog if prog else 0.0

    def reset_observation(self) -> Observation:
        return _ZERO_OBS

    def _shaped_delta(self) -> float:
        reward, prog = self.committed()
        delta = (reward - self._last_reward) - self.rho * (prog - self._last_progress)
        self._last_reward = reward
        self._last_progress = prog
        return delta

    def _settle(self) -> None:
        """Episode-end resolution: cash out the fork, then count the chain."""
        sim = self.sim
        if feasible(sim, Action(OVERRIDE, INCL)):
            apply_action(sim, Action(OVERRIDE, INCL))
        else:
            apply_action(sim, Action(ADOPT, INCL))

    def step(self, action: Action) -> EnvStep:
        if self.done:
            raise SteppingDoneEpisode("episode is over")
        sim = self.sim
        if not feasible(sim, action):
            action = Action(WAIT, action.votes)
        apply_action(sim, action)
        if self.stop.holds(sim):
            return self._finish(action_origin=False)
        while True:
            ev = sim.step()
            if ev.kind == "mine":
                mined_locally = ev.node == sim.attacker
                break
        if self.stop.holds(sim):
            return self._finish(action_origin=mined_locally)
        return EnvStep(observe(sim, mined_locally), self._shaped_delta(), False)

    def _finish(self, action_origin: bool) -> EnvStep:
        self._settle()
        self.done = True
        return EnvStep(observe(self.sim, action_origin), self._shaped_delta(), True)


def env_reset(scenario: Scenario, rules: Rules, scheme: Scheme, seed: int,
              stop: StopRule = StopRule(progress=128), rho: float = 0.0,
              emit_log: bool = False) -> tuple[Env, Observation]:
    env = Env(dataclasses.replace(scenario, seed=seed), rules, scheme, stop,
              rho=rho, emit_log=emit_log)
    return env, env.reset_observation()


# -- policies -------------------------------------------------------------------

class Policy:
    name = "policy"

    def reset(self, rng: Optional[Random] = None) -> None:
        pass

    def act(self, obs: Observation) -> Action:
        raise NotImplementedError


class HonestPolicy(Policy):
    """Release own proofs-of-work when fresh, follow defender progress."""

    name = "honest"

    def act(self, obs: Observation) -> Action:
        if obs.mined_locally:
            return Action(OVERRIDE, INCL)
        return Action(ADOPT, INCL)


class Sm1Policy(Policy):
    """Generalized selfish mining: withhold to build a private lead, match
    the first defender catch-up, override once defenders reach lead - 1,
    abandon when behind. Exclusive vote stance throughout."""

    name = "sm1"

    def __init__(self) -> None:
        self._racing = False

    def reset(self, rng: Optional[Random] = None) -> None:
        self._racing = False

    def act(self, obs: Observation) -> Action:
        a, d = obs.attacker_blocks, obs.defender_blocks
        if obs.mined_locally:
            if self._racing and a == d + 1:
                self._racing = False
                return Action(OVERRIDE, EXCL)
            return Action(WAIT, EXCL)
        if a == 0:
            self._racing = False
            return Action(ADOPT, EXCL)
        if d > a:
            self._racing = False
            return Action(ADOPT, EXCL)
        if d == a:
            if not self._racing:
                self._racing = True
                return Action(MATCH, EXCL)
            return Action(WAIT, EXCL)
        if d == a - 1 and d >= 1:
            self._racing = False
            return Action(OVERRIDE, EXCL)
        return Action(WAIT, EXCL)


class QTablePolicy(Policy):
    """Greedy policy over a tabular action-value function of capped
    observations. Ties break toward the lowest action index."""

    name = "qtable"

    def __init__(self, cap: int) -> None:
        self.cap = cap
        self.table: dict[tuple, list[float]] = {}

    def values(self, obs: Observation) -> list[float]:
        key = obs.key(self.cap)
        vals = self.table.get(key)
        if vals is None:
            vals = [0.0] * len(ACTIONS)
            self.table[key] = vals
        return vals

    def act(self, obs: Observation) -> Action:
        vals = self.values(obs)
        best = max(range(len(ACTIONS)), key=lambda i: (vals[i], -i))
        return ACTIONS[best]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# powvote-qtable v1 cap={self.cap} actions={len(ACTIONS)}\n")
            for key in sorted(self.table):
                vals = self.table[key]
                fields = [str(int(x)) for x in key[:5]] + [str(int(key[5]))]
                fields += [repr(v) for v in vals]
                f.write("\t".join(fields) + "\n")

    @classmethod
    def load(cls, path: str) -> "QTablePolicy":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if not header.startswith("# powvote-qtable"):
                raise ValueError(f"not a qtable file: {header!r}")
            cap = int(header.split("cap=")[1].split()[0])
            policy = cls(cap)
            for line in f:
                parts = line.rstrip("\n").split("\t")
                key = tuple(int(x) for x in parts[:5]) + (bool(int(parts[5])),)
                policy.table[key] = [float(v) for v in parts[6:]]
        return policy


# -- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class RevenueReport:
    policy: str
    mean: float
    std: float
    ci95: float
    samples: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.samples)


def rollout_seed(base: int, i: int) -> int:
    return (base ^ (i * 0x9E3779B97F4A7C15)) % (1 << 63)


def rollout(policy: Policy, scenario: Scenario, rules: Rules, scheme: Scheme,
            seed: int, stop: StopRule, rho: float = 0.0) -> float:
    env, obs = env_reset(scenario, rules, scheme, seed, stop=stop, rho=rho)
    policy.reset(Random(seed))
    done = False
    while not done:
        step = env.step(policy.act(obs))
        obs, done = step.observation, step.done
    return env.result()


def evaluate(policy: Policy, scenario: Scenario, rules: Rules, scheme: Scheme,
             n_rollouts: int = 100, horizon_puzzles: int = 2048,
             seed: int = 0, workers: int = 1) -> RevenueReport:
    """Mean normalized revenue over independent rollouts of fixed puzzle count."""
    stop = StopRule(puzzles=horizon_puzzles)
    args = [(policy, scenario, rules, scheme, rollout_seed(seed, i), stop)
            for i in range(n_rollouts)]
    if workers > 1:
        import multiprocessing
        with multiprocessing.Pool(workers) as pool:
            samples = pool.starmap(rollout, args)
    else:
        samples = [rollout(*a) for a in args]
    mean = sum(samples) / len(samples)
    var = (sum((s - mean) ** 2 for s in samples) / (len(samples) - 1)
           if len(samples) > 1 else 0.0)
    std = math.sqrt(var)
    ci = 1.96 * std / math.sqrt(len(samples))
    return RevenueReport(policy.name, mean, std, ci, tuple(samples))


# -- tabular training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 40_000
    learning_rate: float = 0.1
    epsilon_start: float = 0.4
    epsilon_end: float = 0.02
    episode_progress: int = 128
    outer_iterations: int = 10
    rho_tolerance: float = 1e-3
    rho_damping: float = 0.5
    measure_rollouts: int = 24
    cap: Optional[int] = None  # observation cap; default 2k


@dataclass
class TrainStats:
    rho_path: list[float] = field(default_factory=list)
    episodes_run: int = 0


def train_q(scenario: Scenario, rules: Rules, scheme: Scheme,
            episodes: int = 40_000, config: Optional[TrainConfig] = None,
            seed: int = 0) -> tuple[QTablePolicy, TrainStats]:
    """Epsilon-greedy tabular Q-learning with average-ratio reward shaping.

    The outer loop re-estimates rho (the revenue ratio to beat) from greedy
    rollouts and retrains against it until the estimate is stable.
    """
    cfg = config if config is not None else TrainConfig(episodes=episodes)
    policy = QTablePolicy(cap=cfg.cap if cfg.cap is not None else 2 * rules.k)
    rng = Random(seed)
    stats = TrainStats()
    rho = scenario.alpha
    stop = StopRule(progress=cfg.episode_progress)
    chunk = max(1, cfg.episodes // cfg.outer_iterations)
    lr = cfg.learning_rate
    n_actions = len(ACTIONS)
    action_range = range(n_actions)

    for outer in range(cfg.outer_iterations):
        # fresh exploration for every rho: each outer iteration reshapes
        # the reward, so the value estimates must be re-explored
        for ep in range(chunk):
            eps = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) \
                * (ep / max(1, chunk - 1))
            env, obs = env_reset(scenario, rules, scheme,
                                 rollout_seed(seed + 1, stats.episodes_run),
                                 stop=stop, rho=rho)
            done = False
            while not done:
                vals = policy.values(obs)
                if rng.random() < eps:
                    idx = rng.randrange(n_actions)
                else:
                    idx = max(action_range, key=lambda i: (vals[i], -i))
                step = env.step(ACTIONS[idx])
                nxt, r, done = step
                target = r if done else r + max(policy.values(nxt))
                vals[idx] += lr * (target - vals[idx])
                obs = nxt
            stats.episodes_run += 1
        # measure the greedy policy's revenue ratio, move rho toward it
        total_r = total_p = 0.0
        for i in range(cfg.measure_rollouts):
            env, obs = env_reset(scenario, rules, scheme,
                                 rollout_seed(seed + 2, outer * cfg.measure_rollouts + i),
                                 stop=stop, rho=0.0)
            done = False
            while not done:
                step = env.step(policy.act(obs))
                obs, done = step.observation, step.done
            r, p = env.committed()
            total_r += r
            total_p += p
        measured = total_r / total_p if total_p else 0.0
        stats.rho_path.append(measured)
        if abs(measured - rho) < cfg.rho_tolerance:
            rho = measured
            break
        rho += cfg.rho_damping * (measured - rho)
    return policy, stats
