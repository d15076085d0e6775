import json

import pytest

from gamenest import compose as C
from gamenest.harness import logs
from gamenest.harness.config import RunConfig
from gamenest.harness.evaluate import run_eval, summarize

PD_ONLY = {"Matrix": {"games": ["Prisoner's Dilemma"]}}


def cfg(tmp_path, **kw):
    base = {"mode": "eval", "tasks": ["TicTacToe"], "output_dir": str(tmp_path)}
    base.update(kw)
    return RunConfig.model_validate(base)


def row(report, task):
    return next(r for r in report["tasks"] if r["task"] == task)


def test_minimax_against_random_never_loses(tmp_path):
    c = cfg(tmp_path, policy={"kind": "minimax"}, opponents={"TicTacToe": {"kind": "random"}})
    r = row(run_eval(c, write=False), "TicTacToe")
    assert r["completed"] == 100
    assert r["strict_win"] >= 0.80  # 0.92 on the shipped seed
    assert r["loss"] == 0.0
    assert r["strict_win"] + r["draw"] + r["loss"] == pytest.approx(1.0)
    assert r["mean_reward"] == pytest.approx(r["strict_win"] + 0.5 * r["draw"])


def test_random_policy_on_prisoners_dilemma(tmp_path):
    c = cfg(tmp_path, tasks=["Matrix"], policy={"kind": "random"}, env=PD_ONLY)
    r = row(run_eval(c, write=False), "Matrix")
    assert abs(r["success_rate"] - 0.5) <= 0.15


def test_eval_is_reproducible_and_worker_independent(tmp_path):
    kw = dict(tasks=list(C.TASK_IDS), eval_rounds=30, policy={"kind": "uniform"})
    a = run_eval(cfg(tmp_path / "a", **kw))
    b = run_eval(cfg(tmp_path / "b", **kw))
    c = run_eval(cfg(tmp_path / "c", workers=4, **kw))
    assert a == b == c
    for name in ("report.json", "report.csv", "trajectories.jsonl"):
        data = (tmp_path / "a" / name).read_bytes()
        assert data == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
    assert (tmp_path / "a" / "success_rates.png").stat().st_size > 0


def test_rates_recomputed_from_log(tmp_path):
    run_eval(cfg(tmp_path, tasks=list(C.TASK_IDS), eval_rounds=40, policy={"kind": "random"}))
    report = json.loads((tmp_path / "report.json").read_text())
    records = logs.read_trajectory_log(tmp_path / "trajectories.jsonl")
    assert len(records) == 4 * 40
    assert [r["episode"] for r in records[:40]] == list(range(40))
    for task_row in report["tasks"]:
        mine = [r for r in records if r["task"] == task_row["task"] and r["error"] is None]
        if task_row["task"] == "TicTacToe":
            wins = sum(r["details"]["TicTacToe"].get("outcome") == "win_" + r["details"]["TicTacToe"].get("mark", "")
                       for r in mine)
        else:
            wins = sum(r["sub_rewards"][task_row["task"]] == 1.0 for r in mine)
        assert task_row["success_rate"] == wins / len(mine)


def test_unreachable_opponent_gives_error_records(tmp_path):
    remote = {"endpoint": "http://127.0.0.1:9/v1/chat/completions", "model": "m", "timeout": 0.5, "retries": 0}
    c = cfg(tmp_path, eval_rounds=5, opponents={"TicTacToe": {"kind": "remote", "remote": remote}},
            policy={"kind": "minimax"})
    r = row(run_eval(c), "TicTacToe")
    # O moves first; rounds where the trained side is O still reach the opponent on move 2
    assert r["errors"] == 5 and r["completed"] == 0 and r["success_rate"] is None
    recs = logs.read_trajectory_log(tmp_path / "trajectories.jsonl")
    assert len(recs) == 5 and all(x["error"] for x in recs)


def test_summarize_counts_format_violations():
    class Junk:
        def act(self, request, rng):
            return C.PolicyAction("pass")

    comp = C.TaskComposition.of(C.MIXED, "Arith")
    trajs = [C.run_episode(comp, Junk(), rng_seed=s) for s in range(6)]
    s = summarize("Arith", trajs)
    assert s["format_violations"] == 6 and s["success_rate"] == 0.0
    assert s["mean_reward"] == 0.0  # the sub-task reward excludes the penalty
