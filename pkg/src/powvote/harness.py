"""Experiment configuration, sweeps, fairness runs, and log replay.

Sweeps evaluate attacker policies over the cross product of protocols,
attacker hashrates, and race advantages, and write one CSV row per (task,
policy). Output is byte-deterministic given the configuration: per-task
seeds derive from a stable hash, so adding tasks never perturbs existing
rows.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .blockdag import GENESIS, Dag, Kind
from .netsim import Scenario
from .policy import (
    HonestPolicy,
    Policy,
    QTablePolicy,
    RevenueReport,
    Sm1Policy,
    StopRule,
    TrainConfig,
    env_reset,
    evaluate,
    train_q,
)
from .protocol import ProtocolKind, Rules, ValidationError, validate
from .rewards import Scheme, chain_rewards, epoch_rewards, scheme_for

PROTOCOL_ORDER = ("sequential", "parallel", "tree", "dag")


class ConfigError(Exception):
    pass


class CorruptLog(Exception):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


@dataclass(frozen=True)
class ExperimentConfig:
    protocols: tuple[str, ...] = PROTOCOL_ORDER
    k: int = 8
    alphas: tuple[float, ...] = (0.25, 0.3, 0.35, 0.4, 0.45)
    gammas: tuple[float, ...] = (0.05, 0.5, 0.95)
    policies: tuple[str, ...] = ("honest", "sm1")
    n_rollouts: int = 100
    horizon_puzzles: int = 2048
    n_defenders: int = 20
    mining_rate: float = 1.0
    base_delay: float = 0.0
    seed: int = 0
    train: dict = field(default_factory=dict)
    fairness_weights: Optional[tuple[float, ...]] = None
    fairness_delay: float = 0.5
    fairness_puzzles: int = 16384

    def __post_init__(self) -> None:
        if not self.alphas:
            raise ConfigError("empty alpha list")
        if not self.gammas:
            raise ConfigError("empty gamma list")
        if not self.protocols:
            raise ConfigError("no protocols selected")
        for p in self.protocols:
            if p not in PROTOCOL_ORDER:
                raise ConfigError(f"unknown protocol {p!r}")
        for spec in self.policies:
            if spec not in ("honest", "sm1", "train") and not spec.startswith("qtable:"):
                raise ConfigError(f"unknown policy spec {spec!r}")
        if self.k < 1 or self.n_rollouts < 1 or self.horizon_puzzles < 1:
            raise ConfigError("k, n_rollouts, horizon_puzzles must be positive")

    @staticmethod
    def from_json(path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return ExperimentConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("protocols", "alphas", "gammas", "policies", "fairness_weights"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        try:
            return ExperimentConfig(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def preset(name: str) -> ExperimentConfig:
    if name == "paper-eval":
        return ExperimentConfig()
    if name == "deployment":
        # 600 s expected block interval at 51 proofs-of-work per block:
        # one proof-of-work roughly every 11.8 s
        return ExperimentConfig(k=51, mining_rate=51 / 600)
    raise ConfigError(f"unknown preset {name!r}")


def rules_for(protocol: str, k: int) -> Rules:
    if protocol == "sequential":
        return Rules.sequential()
    return Rules(ProtocolKind(protocol), k)


def task_seed(base: int, protocol: str, alpha: float, gamma: float,
              policy: str) -> int:
    tag = f"{protocol}|{alpha!r}|{gamma!r}|{policy}"
    return (base + zlib.crc32(tag.encode())) % (1 << 62)


@dataclass(frozen=True)
class RevenueRow:
    protocol: str
    scheme: str
    k: int
    alpha: float
    gamma: float
    policy: str
    mean: float
    std: float
    ci95: float
    n_rollouts: int
    seed: int


CSV_HEADER = ("protocol,scheme,k,alpha,gamma,policy,"
              "mean_revenue,std,ci95,n_rollouts,seed")


def format_row(r: RevenueRow) -> str:
    return (f"{r.protocol},{r.scheme},{r.k},{r.alpha:g},{r.gamma:g},{r.policy},"
            f"{r.mean:.6f},{r.std:.6f},{r.ci95:.6f},{r.n_rollouts},{r.seed}")


def _resolve_policy(spec: str, scenario: Scenario, rules: Rules, scheme: Scheme,
                    seed: int, train_cfg: dict) -> Policy:
    if spec == "honest":
        return HonestPolicy()
    if spec == "sm1":
        return Sm1Policy()
    if spec.startswith("qtable:"):
        return QTablePolicy.load(spec.split(":", 1)[1])
    cfg = TrainConfig(**train_cfg) if train_cfg else TrainConfig()
    policy, _ = train_q(scenario, rules, scheme, config=cfg, seed=seed + 1)
    policy.name = "learned"
    return policy


def cmd_sweep(config: ExperimentConfig, out_path: str, workers: int = 1,
              figures: bool = True,
              event_log_dir: Optional[str] = None) -> list[RevenueRow]:
    rows: list[RevenueRow] = []
    for protocol in config.protocols:
        rules = rules_for(protocol, config.k)
        scheme = scheme_for(rules.kind)
        for gamma in config.gammas:
            for alpha in config.alphas:
                for spec in config.policies:
                    seed = task_seed(config.seed, protocol, alpha, gamma, spec)
                    scenario = Scenario(alpha=alpha, gamma=gamma,
                                        n_defenders=config.n_defenders,
                                        mining_rate=config.mining_rate,
                                        base_delay=config.base_delay,
                                        seed=seed)
                    policy = _resolve_policy(spec, scenario, rules, scheme,
                                             seed, config.train)
                    rep = evaluate(policy, scenario, rules, scheme,
                                   n_rollouts=config.n_rollouts,
                                   horizon_puzzles=config.horizon_puzzles,
                                   seed=seed, workers=workers)
                    rows.append(RevenueRow(protocol, scheme.value, rules.k,
                                           alpha, gamma, policy.name,
                                           rep.mean, rep.std, rep.ci95,
                                           rep.n, seed))
                    if event_log_dir is not None:
                        _write_task_log(event_log_dir, scenario, rules, scheme,
                                        policy, config, rows[-1])
    _write_csv(out_path, CSV_HEADER, [format_row(r) for r in rows])
    if figures:
        from .report import sweep_figure
        sweep_figure(rows, _figure_path(out_path))
    return rows


def _write_task_log(log_dir: str, scenario: Scenario, rules: Rules,
                    scheme: Scheme, policy: Policy, config: ExperimentConfig,
                    row: RevenueRow) -> None:
    """One replayable event log per task: the first evaluation rollout."""
    import os
    from .policy import rollout_seed
    os.makedirs(log_dir, exist_ok=True)
    env, obs = env_reset(scenario, rules, scheme, rollout_seed(row.seed, 0),
                         stop=StopRule(puzzles=config.horizon_puzzles),
                         emit_log=True)
    policy.reset()
    done = False
    while not done:
        step = env.step(policy.act(obs))
        obs, done = step.observation, step.done
    name = f"{row.protocol}_a{row.alpha:g}_g{row.gamma:g}_{row.policy}.log"
    _write_csv(os.path.join(log_dir, name), None, env.sim.log)


def cmd_fairness(config: ExperimentConfig, out_path: str,
                 figures: bool = True) -> list[tuple]:
    """All-honest runs with uneven hashrates: who earns their fair share?"""
    from .netsim import new_sim, puzzles_at_least
    n = config.n_defenders
    if config.fairness_weights is not None:
        weights = config.fairness_weights
        if len(weights) != n:
            raise ConfigError("fairness weights must cover every defender")
    else:
        rest = (1.0 - 0.02 - 0.20) / (n - 2)
        weights = (0.02, 0.20) + (rest,) * (n - 2)
    rows = []
    for protocol in config.protocols:
        rules = rules_for(protocol, config.k)
        scheme = scheme_for(rules.kind)
        seed = task_seed(config.seed, protocol, 0.0, 0.0, "fairness")
        sim = new_sim(Scenario(alpha=0.0, n_defenders=n,
                               mining_rate=config.mining_rate,
                               base_delay=config.fairness_delay,
                               seed=seed, defender_weights=weights),
                      rules, scheme)
        sim.run_until(puzzles_at_least(config.fairness_puzzles),
                      cap=100 * config.fairness_puzzles)
        totals = chain_rewards(scheme, rules, sim.dag, sim.public.tip)
        minted = sum(totals.values())
        for node in range(n):
            share = totals.get(node, 0.0) / minted if minted else 0.0
            rows.append((protocol, scheme.value, rules.k, node, weights[node],
                         share, config.fairness_puzzles, seed))
    header = "protocol,scheme,k,node,hashrate,reward_share,puzzles,seed"
    lines = [f"{p},{s},{k},{node},{w:.6f},{share:.6f},{puz},{seed}"
             for (p, s, k, node, w, share, puz, seed) in rows]
    _write_csv(out_path, header, lines)
    if figures:
        from .report import fairness_figure
        fairness_figure(rows, _figure_path(out_path))
    return rows


# -- replay -----------------------------------------------------------------------

@dataclass
class ReplayDiagnostics:
    rules: Rules
    scheme: Scheme
    dag: Dag
    attacker: int
    final_tip: int
    totals: dict[int, float]
    epoch_tables: list[tuple[int, dict[int, float]]]
    validation_errors: list[str]

    def dot(self) -> str:
        labels = {}
        for _, table in self.epoch_tables:
            for unit, reward in table.items():
                labels[unit] = f"{unit}: {reward:g}"
        return self.dag.to_dot(labels)


def _parse_header(lines: list[str]) -> tuple[Rules, Scheme, int, int]:
    if not lines or not lines[0].startswith("# powvote-log"):
        raise CorruptLog(1, "missing log header")
    if len(lines) < 2 or not lines[1].startswith("# protocol="):
        raise CorruptLog(2, "missing parameter header")
    fields = dict(part.split("=", 1) for part in lines[1][2:].split() if "=" in part)
    try:
        rules = rules_for(fields["protocol"], int(fields["k"]))
        scheme = Scheme(fields["scheme"])
        defenders = int(fields["defenders"])
    except (KeyError, ValueError) as e:
        raise CorruptLog(2, f"bad parameter header: {e}") from e
    return rules, scheme, defenders, defenders


def replay(lines: list[str]) -> ReplayDiagnostics:
    """Rebuild the dag from an event log, revalidate, recompute rewards."""
    rules, scheme, defenders, attacker = _parse_header(lines)
    dag = Dag()
    public: list[int] = [GENESIS]
    errors: list[str] = []
    for no, line in enumerate(lines, start=1):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise CorruptLog(no, f"expected 6 columns, got {len(cols)}")
        _, kind, node, unit, parents, extra = cols
        if kind == "deliver":
            continue
        try:
            unit_id = int(unit)
            node_id = int(node)
        except ValueError as e:
            raise CorruptLog(no, f"bad ids: {e}") from e
        if kind == "mine":
            if extra not in ("block", "vote"):
                raise CorruptLog(no, f"bad unit kind {extra!r}")
            try:
                plist = [int(p) for p in parents.split(",")] if parents else []
                got = dag.append(plist, node_id,
                                 Kind.BLOCK if extra == "block" else Kind.VOTE)
            except Exception as e:
                raise CorruptLog(no, str(e)) from e
            if got != unit_id:
                raise CorruptLog(no, f"unit ids out of order: {got} != {unit_id}")
            try:
                validate(rules, dag, got)
            except ValidationError as e:
                errors.append(f"unit {got}: {e}")
            if node_id != attacker:
                public.append(got)
        elif kind == "release":
            if unit_id not in dag:
                raise CorruptLog(no, f"release of unknown unit {unit_id}")
            public.append(unit_id)
        else:
            raise CorruptLog(no, f"unknown event kind {kind!r}")

    arrival = {u: i for i, u in enumerate(public)}
    votes_on: dict[int, int] = {}
    for u in public:
        if dag.kind(u) is Kind.VOTE:
            root = dag.confirms(u)
            votes_on[root] = votes_on.get(root, 0) + 1
    blocks = [u for u in public if dag.kind(u) is Kind.BLOCK]
    tip = max(blocks,
              key=lambda b: (dag.height(b), votes_on.get(b, 0), -arrival[b]))
    totals = chain_rewards(scheme, rules, dag, tip)
    tables = []
    b = tip
    while b != GENESIS:
        tables.append((b, epoch_rewards(scheme, rules, dag, b)))
        b = dag.confirms(b)
    tables.reverse()
    return ReplayDiagnostics(rules, scheme, dag, attacker, tip, totals,
                             tables, errors)


def cmd_replay(log_path: str, dot_path: Optional[str] = None) -> ReplayDiagnostics:
    with open(log_path, "r", encoding="utf-8") as f:
        text = f.read()
    if text and not text.endswith("\n"):
        raise CorruptLog(text.count("\n") + 1, "truncated final line")
    diags = replay(text.splitlines())
    print(f"replay: {len(diags.dag)} units, final tip {diags.final_tip}, "
          f"{len(diags.validation_errors)} validation errors")
    for err in diags.validation_errors:
        print(f"  invalid: {err}")
    for block, table in diags.epoch_tables:
        cells = " ".join(f"{u}:{r:g}" for u, r in sorted(table.items()))
        print(f"epoch closed by {block}: {cells}")
    print("totals per miner: "
          + " ".join(f"{m}:{t:g}" for m, t in sorted(diags.totals.items())))
    if dot_path:
        _write_csv(dot_path, None, [diags.dot()])
    return diags


def _figure_path(out_path: str) -> str:
    stem = out_path[:-4] if out_path.endswith(".csv") else out_path
    return stem + ".png"


def _write_csv(path: str, header: Optional[str], lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if header is not None:
            f.write(header + "\n")
        for line in lines:
            f.write(line + "\n")
