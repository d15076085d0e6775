"""``gamenest`` command line.

Config file values override defaults and flags override the config file.
Tabular outputs go to stdout as TSV unless ``--out`` names a file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from gamenest import compose, matrix as mx, spy
from gamenest import tictactoe as ttt
from gamenest.harness import logs, plotting
from gamenest.harness.config import ConfigError, config_from_text, parse_config

log = logging.getLogger("gamenest")

# flag dest -> dotted config key
_OVERRIDES = {
    "tasks": "tasks", "composition": "composition", "strict_and": "strict_and", "seed": "seed",
    "eval_rounds": "eval_rounds", "output_dir": "output_dir", "run_id": "run_id", "workers": "workers",
    "log_trajectories": "log_trajectories",
    "policy": "policy.kind", "policy_path": "policy.path", "greedy": "policy.greedy",
    "iterations": "trainer.iterations", "group_size": "trainer.group_size",
    "groups_per_iteration": "trainer.groups_per_iteration", "learning_rate": "trainer.learning_rate",
    "entropy_coef": "trainer.entropy_coef", "warmup_iterations": "trainer.warmup_iterations",
    "snapshot_every": "trainer.snapshot_every",
    "ttt_opponent": "opponents.TicTacToe.kind", "ttt_epsilon": "opponents.TicTacToe.epsilon",
    "spy_agents": "opponents.Spy.agents",
    "draw_reward": "rewards.draw", "format_penalty": "rewards.format_penalty",
}


def _run_flags(p: argparse.ArgumentParser, train: bool) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--tasks", nargs="+", choices=compose.TASK_IDS)
    p.add_argument("--composition", choices=(compose.MIXED, compose.NESTED))
    p.add_argument("--strict-and", dest="strict_and", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--policy", choices=("uniform", "snapshot", "oracle", "minimax", "random", "remote"))
    p.add_argument("--policy-path", dest="policy_path")
    p.add_argument("--greedy", action="store_true", default=None)
    p.add_argument("--ttt-opponent", dest="ttt_opponent", choices=("minimax", "random", "remote"))
    p.add_argument("--ttt-epsilon", dest="ttt_epsilon", type=float)
    p.add_argument("--spy-agents", dest="spy_agents", nargs=3, choices=spy.SPY_AGENT_KINDS)
    p.add_argument("--draw-reward", dest="draw_reward", type=float)
    p.add_argument("--format-penalty", dest="format_penalty", type=float)
    p.add_argument("--no-trajectories", dest="log_trajectories", action="store_false", default=None)
    if train:
        p.add_argument("--iterations", type=int)
        p.add_argument("--group-size", dest="group_size", type=int)
        p.add_argument("--groups-per-iteration", dest="groups_per_iteration", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--entropy-coef", dest="entropy_coef", type=float)
        p.add_argument("--warmup-iterations", dest="warmup_iterations", type=int)
        p.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    else:
        p.add_argument("--eval-rounds", dest="eval_rounds", type=int)
        p.add_argument("--workers", type=int)


def load_run_config(args: argparse.Namespace, mode: str):
    overrides = {"mode": mode}
    for dest, key in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            overrides[key] = list(v) if isinstance(v, (list, tuple)) else v
    if args.config:
        return parse_config(args.config, overrides)
    return config_from_text("{}", "<flags>", overrides)


def _open_out(path: str | None):
    if path in (None, "-"):
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def _tsv(rows, columns, out) -> None:
    fh = _open_out(out)
    try:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    finally:
        if fh is not sys.stdout:
            fh.close()


# -- commands ------------------------------------------------------------------------------

def cmd_train(args) -> int:
    from gamenest.harness.train import run_train

    cfg = load_run_config(args, "train")
    res = run_train(cfg)
    last = res["metrics"][-1] if res["metrics"] else {}
    print(f"run {res['run_id']}: {res['iterations']} iterations, final mean reward "
          f"{last.get('scalar_mean', float('nan')):.3f}; outputs in {res['output_dir']}")
    return 0


def cmd_eval(args) -> int:
    from gamenest.harness.evaluate import REPORT_COLUMNS, run_eval

    cfg = load_run_config(args, "eval")
    report = run_eval(cfg)
    _tsv(report["tasks"], REPORT_COLUMNS, None)
    print(f"# report written to {cfg.output_dir}", file=sys.stderr)
    return 0


def _profiles(m: mx.PayoffMatrix, profiles) -> str:
    return ";".join(f"({m.row_actions[p.row_action]},{m.col_actions[p.col_action]})" for p in profiles) or "-"


def cmd_nash(args) -> int:
    games = mx.load_matrices(args.matrix_file)
    t = mx.TransformSpec(args.sign, args.offset)
    rows = []
    for g in games:
        shown = mx.transform_payoffs(g, t)
        reduced = mx.iesds_reduce(shown)
        rows.append({"game": g.game_name, "shape": "x".join(map(str, g.shape)),
                     "pure_nash": _profiles(shown, mx.enumerate_pure_nash(shown)),
                     "iesds_rows": ",".join(reduced.row_actions), "iesds_cols": ",".join(reduced.col_actions)})
    _tsv(rows, ("game", "shape", "pure_nash", "iesds_rows", "iesds_cols"), args.out)
    return 0


def cmd_selfplay_ttt(args) -> int:
    if args.opponent == "minimax":
        opp = ttt.MinimaxOpponent(args.epsilon)
    else:
        opp = ttt.RandomOpponent()
    rows = []
    for i in range(args.games):
        rng = np.random.default_rng([args.seed, i])
        mark = ttt.MARKS[int(rng.integers(2))]
        b = ttt.Board.empty(ttt.O)
        while not ttt.check_winner(b).terminal:
            cell = ttt.minimax_move(b, mark)[0] if b.to_move == mark else opp.move(b, rng)
            b = ttt.apply_move(b, cell)
        outcome = ttt.check_winner(b)
        result = "draw" if outcome is ttt.Outcome.DRAW else ("win" if outcome.winner == mark else "loss")
        rows.append({"game": i, "minimax_mark": mark, "result": result, "board": b.key})
    _tsv(rows, ("game", "minimax_mark", "result", "board"), args.out)
    counts = {k: sum(r["result"] == k for r in rows) for k in ("win", "draw", "loss")}
    print(f"# minimax vs {opp.name}: " + " ".join(f"{k}={v}" for k, v in counts.items()), file=sys.stderr)
    return 0


def cmd_spy_sim(args) -> int:
    pairs = spy.load_word_pairs(args.word_pairs)
    rows = []
    for i in range(args.matches):
        seed = args.seed * 1_000_003 + i
        pair = pairs[int(np.random.default_rng([seed, 3]).integers(len(pairs)))]
        agents = [spy.scripted_spy_agent(k, seed * 4 + j, pairs=pairs) for j, k in enumerate(args.agents)]
        m = spy.play_scripted_match(spy.new_match(pair, None, agents, seed))
        rows.append({"match": i, "civilian_word": pair.civilian_word, "undercover_word": pair.undercover_word,
                     "undercover": spy.player_label(m.undercover), "eliminated": spy.player_label(m.eliminated),
                     "winner": m.winner,
                     "votes": ";".join(f"{p + 1}>{t + 1}" for p, t in m.votes)})
    _tsv(rows, ("match", "civilian_word", "undercover_word", "undercover", "eliminated", "winner", "votes"), args.out)
    wins = sum(r["winner"] == spy.CIVILIANS_WIN for r in rows)
    print(f"# civilians won {wins}/{len(rows)}", file=sys.stderr)
    return 0


def window_mean(rows, key: str, lo: int, hi: int) -> float | None:
    vals = [float(r[key]) for r in rows if lo <= int(r["iteration"]) <= hi and r.get(key) not in (None, "")]
    return float(np.mean(vals)) if vals else None


def cmd_export_metrics(args) -> int:
    runs = {}
    for d in args.run_dirs:
        path = Path(d) / "metrics.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no metrics.csv in {d}")
        runs[Path(d).name] = logs.read_csv(path)
    lo, hi = args.window
    rows = [{"run": name, "iterations": len(rs),
             "mean_entropy": window_mean(rs, "entropy", lo, hi),
             "mean_gradient_norm": window_mean(rs, "gradient_norm", lo, hi),
             "mean_reward": window_mean(rs, "scalar_mean", lo, hi)} for name, rs in runs.items()]
    _tsv(rows, ("run", "iterations", "mean_entropy", "mean_gradient_norm", "mean_reward"), args.out)
    if args.figure:
        plotting.plot_training_curves(runs, args.figure)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gamenest", description="Multi-task game RL environments, trainer and evaluator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tabular policy with GRPO")
    _run_flags(p, train=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="seeded success-rate evaluation per task")
    _run_flags(p, train=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nash", help="pure Nash equilibria and IESDS survivors of a JSONL matrix file")
    p.add_argument("matrix_file")
    p.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_nash)

    p = sub.add_parser("selfplay-ttt", help="minimax against a random or minimax opponent")
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--opponent", choices=("random", "minimax"), default="random")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_selfplay_ttt)

    p = sub.add_parser("spy-sim", help="all-scripted Who's-the-Spy matches")
    p.add_argument("--matches", type=int, default=100)
    p.add_argument("--agents", nargs=4, choices=spy.SPY_AGENT_KINDS, default=["keyword-civilian"] * 4)
    p.add_argument("--word-pairs", dest="word_pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spy_sim)

    p = sub.add_parser("export-metrics", help="window means of metrics.csv across runs, plus a comparison figure")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--window", nargs=2, type=int, default=(50, 250), metavar=("FIRST", "LAST"))
    p.add_argument("--figure", help="write a comparison figure here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, mx.MatrixError, spy.SpyError, logs.LogError, FileNotFoundError, ValueError) as exc:
        print(f"gamenest: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
