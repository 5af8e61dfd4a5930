"""Command line interface: sweep, fairness, train, evaluate, replay."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .harness import (
    ConfigError,
    CorruptLog,
    CSV_HEADER,
    ExperimentConfig,
    RevenueRow,
    cmd_fairness,
    cmd_replay,
    cmd_sweep,
    format_row,
    preset,
    rules_for,
    task_seed,
    _write_csv,
)
from .netsim import InvalidScenario, Scenario
from .policy import HonestPolicy, QTablePolicy, Sm1Policy, TrainConfig, evaluate, train_q
from .rewards import scheme_for


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    else:
        config = preset(args.preset or "paper-eval")
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--preset", choices=["paper-eval", "deployment"],
                   help="built-in configuration")
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel rollout workers")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering next to the CSV")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="powvote",
        description="Proof-of-work voting protocols: simulation, attacks, sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="revenue over the full task grid")
    _add_common(p)
    p.add_argument("--event-logs", help="directory for per-task event logs")

    p = sub.add_parser("fairness", help="honest reward shares under delay")
    _add_common(p)

    p = sub.add_parser("train", help="train one tabular attack policy")
    _add_common(p)

    p = sub.add_parser("evaluate", help="evaluate policies on one scenario")
    _add_common(p)
    p.add_argument("--qtable", help="stored policy to evaluate")

    p = sub.add_parser("replay", help="rebuild and check an event log")
    p.add_argument("log", help="event log file")
    p.add_argument("--out", help="DOT export path")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, InvalidScenario, CorruptLog, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _first_task(config: ExperimentConfig):
    protocol = config.protocols[0]
    alpha, gamma = config.alphas[0], config.gammas[0]
    rules = rules_for(protocol, config.k)
    scheme = scheme_for(rules.kind)
    seed = task_seed(config.seed, protocol, alpha, gamma, "train")
    scenario = Scenario(alpha=alpha, gamma=gamma, n_defenders=config.n_defenders,
                        mining_rate=config.mining_rate,
                        base_delay=config.base_delay, seed=seed)
    return protocol, scenario, rules, scheme, seed


def _dispatch(args) -> int:
    if args.command == "replay":
        cmd_replay(args.log, dot_path=args.out)
        return 0

    config = _load_config(args)
    if args.command == "sweep":
        rows = cmd_sweep(config, args.out, workers=args.workers,
                         figures=not args.no_figures,
                         event_log_dir=args.event_logs)
        print(f"wrote {len(rows)} rows to {args.out}")
        return 0

    if args.command == "fairness":
        rows = cmd_fairness(config, args.out, figures=not args.no_figures)
        print(f"wrote {len(rows)} rows to {args.out}")
        return 0

    if args.command == "train":
        protocol, scenario, rules, scheme, seed = _first_task(config)
        cfg = TrainConfig(**config.train) if config.train else TrainConfig()
        policy, stats = train_q(scenario, rules, scheme, config=cfg, seed=seed)
        policy.save(args.out)
        path = ", ".join(f"{r:.4f}" for r in stats.rho_path)
        print(f"trained {protocol} alpha={scenario.alpha:g} "
              f"gamma={scenario.gamma:g}: {stats.episodes_run} episodes, "
              f"revenue ratio path [{path}]; saved to {args.out}")
        return 0

    if args.command == "evaluate":
        protocol, scenario, rules, scheme, seed = _first_task(config)
        policies = [HonestPolicy(), Sm1Policy()]
        if args.qtable:
            policies.append(QTablePolicy.load(args.qtable))
        rows = []
        for policy in policies:
            rep = evaluate(policy, scenario, rules, scheme,
                           n_rollouts=config.n_rollouts,
                           horizon_puzzles=config.horizon_puzzles,
                           seed=seed, workers=args.workers)
            rows.append(RevenueRow(protocol, scheme.value, rules.k,
                                   scenario.alpha, scenario.gamma, policy.name,
                                   rep.mean, rep.std, rep.ci95, rep.n, seed))
            print(f"{policy.name}: mean={rep.mean:.4f} ci95={rep.ci95:.4f}")
        _write_csv(args.out, CSV_HEADER, [format_row(r) for r in rows])
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
