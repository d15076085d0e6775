"""Evaluation protocol: ``eval_rounds`` independent seeded episodes per task."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from gamenest import compose
from gamenest import tictactoe as ttt
from gamenest.grpo import PolicyParams, TabularSoftmaxPolicy, derive_seed
from gamenest.harness import logs, plotting, remote
from gamenest.harness.config import RunConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("task", "rounds", "completed", "errors", "successes", "success_rate",
                  "format_violations", "mean_reward", "strict_win", "draw", "loss")

_EVAL_TAG = 31


def build_policy(cfg: RunConfig):
    spec = cfg.policy
    if spec.kind == "uniform":
        return TabularSoftmaxPolicy(PolicyParams(), greedy=spec.greedy)
    if spec.kind == "snapshot":
        return TabularSoftmaxPolicy(PolicyParams.load(spec.path), greedy=spec.greedy)
    if spec.kind in ("oracle", "minimax"):
        return compose.OraclePolicy()
    if spec.kind == "random":
        return compose.UniformRandomPolicy()
    return remote.RemotePolicy(remote.client_from_spec(spec.remote))


def build_opponents(cfg: RunConfig) -> compose.OpponentSuite:
    t = cfg.opponents.TicTacToe
    if t.kind == "minimax":
        ttt_opp = ttt.MinimaxOpponent(epsilon=t.epsilon)
    elif t.kind == "random":
        ttt_opp = ttt.RandomOpponent()
    else:
        if t.remote is None:
            raise ValueError("remote TicTacToe opponent needs a remote block")
        ttt_opp = remote.RemoteTicTacToeOpponent(remote.client_from_spec(t.remote))
    s = cfg.opponents.Spy
    factory = None
    if s.kind == "remote":
        if s.remote is None:
            raise ValueError("remote Spy opponents need a remote block")
        client = remote.client_from_spec(s.remote)
        factory = lambda seed: [remote.RemoteSpyAgent(client) for _ in range(3)]  # noqa: E731
    return compose.OpponentSuite(ttt=ttt_opp, spy_kinds=tuple(s.agents), spy_factory=factory)


def round_seed(base_seed: int, task: str, round_index: int) -> int:
    # keyed by task name, not position, so a task's rounds do not depend on the task list
    return derive_seed(base_seed, _EVAL_TAG, compose.TASK_IDS.index(task), round_index)


def summarize(task: str, trajectories) -> dict:
    """Per-task statistics; rates are over completed (non-aborted) rounds."""
    done = [t for t in trajectories if t.error is None]
    row = {"task": task, "rounds": len(trajectories), "completed": len(done),
           "errors": len(trajectories) - len(done),
           "format_violations": sum(t.format_penalty for t in done)}
    rewards = [t.sub_rewards[task] for t in done]
    if task == compose.TICTACTOE:
        wins = sum(_ttt_result(t) == "win" for t in done)
        draws = sum(_ttt_result(t) == "draw" for t in done)
        losses = len(done) - wins - draws
        row.update(successes=wins, strict_win=_rate(wins, len(done)), draw=_rate(draws, len(done)),
                   loss=_rate(losses, len(done)))
    else:
        row.update(successes=sum(r == 1.0 for r in rewards), strict_win=None, draw=None, loss=None)
    row["success_rate"] = _rate(row["successes"], len(done))
    row["mean_reward"] = float(sum(rewards) / len(rewards)) if rewards else None
    return row


def _rate(k: int, n: int) -> float | None:
    return k / n if n else None


def _ttt_result(t) -> str:
    d = t.details.get(compose.TICTACTOE, {})
    outcome = d.get("outcome")
    if outcome is None:  # illegal move: counted as a loss
        return "loss"
    if outcome == ttt.Outcome.DRAW.value:
        return "draw"
    return "win" if outcome == f"win_{d['mark']}" else "loss"


def run_eval(cfg: RunConfig, write: bool = True) -> dict:
    """Evaluate each configured task on its own; returns the report dict.

    With ``write`` the report (JSON and CSV), a success-rate figure and the
    trajectory log go to ``output_dir``.
    """
    policy = build_policy(cfg)
    opponents = build_opponents(cfg)
    run_id = cfg.effective_run_id
    rows, records = [], []
    for task in cfg.tasks:
        comp = compose.TaskComposition(compose.MIXED, (compose.SubTaskSpec(task, env_config=cfg.env_config(task)),))
        seeds = [round_seed(cfg.seed, task, i) for i in range(cfg.eval_rounds)]

        def one(seed, comp=comp):
            return compose.run_episode(comp, policy, opponents, seed,
                                       format_penalty=cfg.rewards.format_penalty, draw_reward=cfg.rewards.draw)

        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                trajs = list(pool.map(one, seeds))  # results come back in submission order
        else:
            trajs = [one(s) for s in seeds]
        for i, t in enumerate(trajs):
            if t.error:
                log.warning("%s round %d aborted: %s", task, i, t.error)
            records.append(logs.trajectory_log_record(t, run_id, 0, i, task))
        rows.append(summarize(task, trajs))
    report = {"run_id": run_id, "seed": cfg.seed, "eval_rounds": cfg.eval_rounds,
              "policy": cfg.policy.kind, "tasks": rows}
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logs.write_csv(rows, out / "report.csv", REPORT_COLUMNS)
        plotting.plot_success_rates(report, out / "success_rates.png")
        if cfg.log_trajectories:
            logs.write_trajectory_log(records, out / "trajectories.jsonl")
    return report
