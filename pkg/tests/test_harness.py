import json
import os

import pytest

from powvote.harness import (
    ConfigError,
    CorruptLog,
    ExperimentConfig,
    cmd_fairness,
    cmd_replay,
    cmd_sweep,
    preset,
    replay,
    rules_for,
    task_seed,
)
from powvote.cli import main as cli_main
from powvote.netsim import Scenario
from powvote.policy import HonestPolicy, Sm1Policy, StopRule, env_reset
from powvote.protocol import Rules
from powvote.rewards import Scheme, chain_rewards

SMALL = dict(protocols=("sequential", "dag"), k=3, alphas=(0.3,), gammas=(0.5,),
             policies=("honest",), n_rollouts=4, horizon_puzzles=128,
             n_defenders=5, seed=9)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(alphas=())
    with pytest.raises(ConfigError):
        ExperimentConfig(protocols=("bitcoin",))
    with pytest.raises(ConfigError):
        ExperimentConfig(policies=("ppo",))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"alphas": [0.2], "bogus": 1})


def test_config_json_roundtrip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"alphas": [0.1, 0.2], "policies": ["sm1"]}))
    cfg = ExperimentConfig.from_json(str(path))
    assert cfg.alphas == (0.1, 0.2)
    assert cfg.policies == ("sm1",)
    assert cfg.k == 8


def test_presets():
    pe = preset("paper-eval")
    assert pe.k == 8
    assert pe.alphas == (0.25, 0.3, 0.35, 0.4, 0.45)
    assert pe.gammas == (0.05, 0.5, 0.95)
    assert len(pe.protocols) == 4

    dep = preset("deployment")
    assert dep.k == 51
    assert abs(1 / dep.mining_rate - 11.76) < 0.02  # proof-of-work interval
    assert abs(dep.k / dep.mining_rate - 600) < 1e-9  # block interval

    with pytest.raises(ConfigError):
        preset("unknown")


def test_task_seed_stability():
    s1 = task_seed(5, "dag", 0.45, 0.05, "sm1")
    s2 = task_seed(5, "dag", 0.45, 0.05, "sm1")
    assert s1 == s2
    assert s1 != task_seed(5, "dag", 0.45, 0.05, "honest")
    assert s1 != task_seed(6, "dag", 0.45, 0.05, "sm1")


def test_sweep_rows_and_determinism(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    out1, out2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    rows1 = cmd_sweep(cfg, out1, figures=False,
                      event_log_dir=str(tmp_path / "logs1"))
    rows2 = cmd_sweep(cfg, out2, figures=False,
                      event_log_dir=str(tmp_path / "logs2"))
    assert rows1 == rows2
    b1, b2 = open(out1, "rb").read(), open(out2, "rb").read()
    assert b1 == b2
    logs1 = sorted(os.listdir(tmp_path / "logs1"))
    assert logs1 == sorted(os.listdir(tmp_path / "logs2"))
    for name in logs1:
        a = open(tmp_path / "logs1" / name, "rb").read()
        b = open(tmp_path / "logs2" / name, "rb").read()
        assert a == b
    # schema check
    lines = open(out1).read().splitlines()
    assert lines[0] == ("protocol,scheme,k,alpha,gamma,policy,"
                        "mean_revenue,std,ci95,n_rollouts,seed")
    assert len(lines) == 1 + len(cfg.protocols)
    first = lines[1].split(",")
    assert first[0] == "sequential" and first[1] == "constant" and first[2] == "1"
    assert 0.0 <= float(first[6]) <= 1.0


def test_sweep_honest_rows_track_alpha(tmp_path):
    cfg = ExperimentConfig(protocols=("parallel",), k=4, alphas=(0.25, 0.4),
                           gammas=(0.5,), policies=("honest",), n_rollouts=12,
                           horizon_puzzles=512, n_defenders=10, seed=4)
    rows = cmd_sweep(cfg, str(tmp_path / "o.csv"), figures=False)
    for row in rows:
        assert abs(row.mean - row.alpha) < max(0.03, 3 * row.ci95)


def test_sweep_figures(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    out = str(tmp_path / "fig.csv")
    cmd_sweep(cfg, out, figures=True)
    assert os.path.exists(tmp_path / "fig.png")


def test_fairness_rows(tmp_path):
    cfg = ExperimentConfig(protocols=("sequential", "dag"), k=4,
                           alphas=(0.3,), gammas=(0.5,), n_defenders=10,
                           fairness_delay=0.5, fairness_puzzles=8192, seed=3)
    rows = cmd_fairness(cfg, str(tmp_path / "fair.csv"), figures=False)
    assert len(rows) == 2 * 10
    by_proto = {}
    for (proto, scheme, k, node, hashrate, share, puzzles, seed) in rows:
        by_proto.setdefault(proto, {})[node] = (hashrate, share)
        assert puzzles >= 2 ** 13
    # the weak miner earns proportionally less than the strong one under
    # sequential rules with delay, but not under dag voting
    seq = by_proto["sequential"]
    weak_ratio = seq[0][1] / seq[0][0]
    strong_ratio = seq[1][1] / seq[1][0]
    assert weak_ratio < strong_ratio
    dagr = by_proto["dag"]
    assert abs(dagr[0][1] / dagr[0][0] - dagr[1][1] / dagr[1][0]) < 0.25


def test_fairness_zero_delay_is_proportional(tmp_path):
    cfg = ExperimentConfig(protocols=("sequential",), k=1, alphas=(0.3,),
                           gammas=(0.5,), n_defenders=10, fairness_delay=0.0,
                           fairness_puzzles=8192, seed=5)
    rows = cmd_fairness(cfg, str(tmp_path / "f0.csv"), figures=False)
    for (_, _, _, node, hashrate, share, _, _) in rows:
        assert abs(share - hashrate) < 0.05


def test_replay_roundtrip(tmp_path):
    env, obs = env_reset(Scenario(alpha=0.4, gamma=0.95, n_defenders=5),
                         Rules.dag(4), Scheme.DAG_DISCOUNT, seed=77,
                         stop=StopRule(puzzles=256), emit_log=True)
    policy = Sm1Policy()
    policy.reset()
    done = False
    while not done:
        step = env.step(policy.act(obs))
        obs, done = step.observation, step.done
    log_path = tmp_path / "run.log"
    log_path.write_text("\n".join(env.sim.log) + "\n")
    diags = cmd_replay(str(log_path), dot_path=str(tmp_path / "run.dot"))
    assert not diags.validation_errors
    assert diags.final_tip == env.sim.public.tip
    live = chain_rewards(Scheme.DAG_DISCOUNT, Rules.dag(4), env.sim.dag,
                         env.sim.public.tip)
    assert diags.totals == live
    assert (tmp_path / "run.dot").read_text().startswith("digraph")


def test_replay_corrupt_log(tmp_path):
    env, _ = env_reset(Scenario(alpha=0.0, n_defenders=3), Rules.sequential(),
                       Scheme.CONSTANT, seed=3, stop=StopRule(puzzles=64),
                       emit_log=True)
    env.sim.run_until(lambda s: s.puzzles >= 64, cap=100_000)
    lines = env.sim.log
    good = "\n".join(lines) + "\n"
    bad_path = tmp_path / "bad.log"
    # truncate mid-line
    bad_path.write_text(good[:-10])
    with pytest.raises(CorruptLog):
        cmd_replay(str(bad_path))
    # garbage column count
    bad2 = lines[:5] + ["1.0\tmine\tnot\tenough"]
    with pytest.raises(CorruptLog) as err:
        replay(bad2)
    assert err.value.line_no == 6


def test_cli_sweep_and_replay(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "protocols": ["sequential"], "k": 1, "alphas": [0.3], "gammas": [0.5],
        "policies": ["honest"], "n_rollouts": 2, "horizon_puzzles": 64,
        "n_defenders": 4, "seed": 1}))
    out = tmp_path / "cli.csv"
    rc = cli_main(["sweep", "--config", str(cfg_path), "--out", str(out),
                   "--no-figures", "--event-logs", str(tmp_path / "logs")])
    assert rc == 0
    assert out.exists()
    logs = os.listdir(tmp_path / "logs")
    assert len(logs) == 1
    rc = cli_main(["replay", str(tmp_path / "logs" / logs[0]),
                   "--out", str(tmp_path / "replay.dot")])
    assert rc == 0


def test_cli_rejects_bad_config(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"alphas": []}))
    out = tmp_path / "never.csv"
    rc = cli_main(["sweep", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 1
    assert not out.exists()


def test_cli_train_and_evaluate(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "protocols": ["sequential"], "k": 1, "alphas": [0.45], "gammas": [0.95],
        "policies": ["honest"], "n_rollouts": 4, "horizon_puzzles": 256,
        "n_defenders": 5, "seed": 2,
        "train": {"episodes": 60, "outer_iterations": 2, "measure_rollouts": 2,
                  "episode_progress": 32}}))
    table = tmp_path / "table.tsv"
    rc = cli_main(["train", "--config", str(cfg_path), "--out", str(table)])
    assert rc == 0
    assert table.exists()
    rc = cli_main(["evaluate", "--config", str(cfg_path), "--qtable", str(table),
                   "--out", str(tmp_path / "eval.csv")])
    assert rc == 0
    lines = (tmp_path / "eval.csv").read_text().splitlines()
    assert len(lines) == 4  # header + honest + sm1 + qtable
