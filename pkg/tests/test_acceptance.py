"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary. Wall-clock budgets are part of each criterion.
"""

from __future__ import annotations

import itertools
import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from gamenest import compose as C
from gamenest import grpo as G
from gamenest import matrix as mx
from gamenest import spy
from gamenest import tictactoe as ttt
from gamenest.harness import cli, logs
from gamenest.harness import remote as R
from gamenest.harness.config import RunConfig, config_from_text, dump_config, parse_config
from gamenest.harness.train import run_train
from _oracles import brute_force_nash, population_stats, random_grpo_instance, spy_adjudicate, ttt_count
from _stub_server import StubServer, chat_body

FIXTURES = Path(__file__).parent / "fixtures"
RESULTS: list[str] = []


class Check:
    def __init__(self):
        self.failures: list[str] = []
        self.notes: list[str] = []

    def __call__(self, ok: bool, what: str) -> None:
        if not ok:
            self.failures.append(what)

    def note(self, text: str) -> None:
        self.notes.append(text)


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    check = Check()
    t0 = time.perf_counter()
    try:
        yield check
    except Exception as exc:  # an unexpected error is a failed criterion, reported like the others
        check.failures.append(f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - t0
    check(elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s:.0f}s")
    status = "FAIL" if check.failures else "PASS"
    detail = "; ".join(check.failures or check.notes)
    line = f"{status} criterion {number} ({title}) [{elapsed:.2f}s / {budget_s:.0f}s] {detail}"
    RESULTS.append(line)
    print(line)
    assert not check.failures, line


def _profile_set(profiles):
    return {(p.row_action, p.col_action) for p in profiles}


def test_criterion_1_nash_oracle():
    with criterion(1, "pure Nash oracle", 1.0) as check:
        games = mx.build_canonical_games()
        check(len(games) == 9, f"{len(games)} canonical games")
        for g in games:
            check(_profile_set(mx.enumerate_pure_nash(g)) == brute_force_nash(g.payoff_p1, g.payoff_p2),
                  f"{g.game_name} disagrees with brute force")
        pd = mx.game_by_name("Prisoner's Dilemma")
        pd_ne = {(pd.row_actions[p.row_action], pd.col_actions[p.col_action]) for p in mx.enumerate_pure_nash(pd)}
        check(pd_ne == {("Defect", "Defect")}, f"PD equilibria {pd_ne}")
        bos = mx.enumerate_pure_nash(mx.game_by_name("Battle of the Sexes"))
        check(len(bos) == 2, f"Battle of the Sexes has {len(bos)} equilibria")
        check.note("9/9 games agree; PD={(D,D)}; BoS has 2")


def test_criterion_2_offset_invariance():
    with criterion(2, "offset invariance", 10.0) as check:
        rng = np.random.default_rng(20240)
        changed_by_sign = 0
        for k in range(1000):
            n, m = (int(x) for x in rng.integers(2, 5, size=2))
            p1 = rng.integers(-50, 51, size=(n, m)).tolist()
            p2 = rng.integers(-50, 51, size=(n, m)).tolist()
            g = mx.PayoffMatrix(f"rand{k}", [f"r{i}" for i in range(n)], [f"c{j}" for j in range(m)], p1, p2)
            base = _profile_set(mx.enumerate_pure_nash(g))
            for offset in (-100, 100):
                shifted = _profile_set(mx.enumerate_pure_nash(mx.transform_payoffs(g, mx.TransformSpec(1, offset))))
                check(shifted == base, f"matrix {k} offset {offset} changed the Nash set")
            flipped = _profile_set(mx.enumerate_pure_nash(mx.transform_payoffs(g, mx.TransformSpec(-1, 100))))
            changed_by_sign += flipped != base
        check(changed_by_sign >= 1, "sign -1 never changed a Nash set")
        fx = json.loads((FIXTURES / "pd_sign_flip.json").read_text())
        pd = mx.game_by_name(fx["game"])
        flipped = mx.transform_payoffs(pd, mx.TransformSpec(**fx["transform"]))
        got = [[flipped.row_actions[p.row_action], flipped.col_actions[p.col_action]]
               for p in mx.enumerate_pure_nash(flipped)]
        check(got == fx["nash_after"], f"PD counterexample fixture: got {got}")
        check.note(f"offsets preserved all 1000 Nash sets; sign -1 changed {changed_by_sign}; PD fixture holds")


def test_criterion_3_tictactoe():
    with criterion(3, "TicTacToe engine", 30.0) as check:
        counts = ttt.enumerate_game_tree()
        check(counts == (5478, 255168), f"enumeration gave {counts}")
        check(counts == ttt_count(), "engine count differs from reference recursion")
        for first in ttt.MARKS:
            b = ttt.Board.empty(first)
            while not ttt.check_winner(b).terminal:
                b = ttt.apply_move(b, ttt.minimax_move(b, b.to_move)[0])
            check(ttt.check_winner(b) is ttt.Outcome.DRAW, f"self-play with {first} first ended {ttt.check_winner(b)}")
        opp = ttt.RandomOpponent()
        tally = {"win": 0, "draw": 0, "loss": 0}
        for seed in range(1000):
            rng = np.random.default_rng([7, seed])
            mark = ttt.MARKS[seed % 2]
            b = ttt.Board.empty(ttt.O)
            while not ttt.check_winner(b).terminal:
                cell = ttt.minimax_move(b, mark)[0] if b.to_move == mark else opp.move(b, rng)
                b = ttt.apply_move(b, cell)
            w = ttt.check_winner(b).winner
            tally["draw" if w is None else ("win" if w == mark else "loss")] += 1
        check(tally["loss"] == 0, f"minimax lost {tally['loss']} games")
        check.note(f"5478 positions, 255168 games, self-play draws, vs random {tally}")


def test_criterion_4_spy():
    with criterion(4, "Who's-the-Spy adjudication and roles", 10.0) as check:
        choices = [[t for t in range(4) if t != v] for v in range(4)]
        assignments = [dict(enumerate(c)) for c in itertools.product(*choices)]
        check(len(assignments) == 81, f"{len(assignments)} self-vote-free assignments")
        pair = spy.WordPair("apple", "pear")
        checked = 0
        for undercover in range(4):
            m = spy.new_match(pair, None, [None] * 4, 5, undercover=undercover)
            while m.phase == spy.DESCRIBE:
                m = spy.submit_description(m, m.speaker, "a vague hint")
            for votes in assignments:
                out = spy.tally_votes(m, votes)
                tied, forced = spy_adjudicate(votes, undercover)
                expected = spy.CIVILIANS_WIN if out.eliminated == undercover else spy.UNDERCOVER_WINS
                check(out.eliminated in tied and out.winner == expected and forced in (None, out.winner),
                      f"votes {votes} with undercover {undercover} adjudicated {out.eliminated}/{out.winner}")
                checked += 1
        hits = 0
        for seed in range(10_000):
            m = spy.new_match(pair, "trained", [None] * 3, seed)
            hits += m.role_of(m.trained_player) == spy.UNDERCOVER
        rate = hits / 10_000
        check(abs(rate - 0.25) <= 0.015, f"trained seat undercover rate {rate:.4f}")
        check.note(f"{checked} adjudications consistent; undercover rate {rate:.4f}")


def test_criterion_5_grpo_gradient():
    with criterion(5, "GRPO gradient, advantages, surrogate", 10.0) as check:
        rng = np.random.default_rng(55)
        cfg = G.TrainerConfig(entropy_coef=0.01)
        worst = 0.0
        for _ in range(50):
            p, groups = random_grpo_instance(rng)
            worst = max(worst, G.finite_difference_check(p, groups, cfg, rng=rng))
        check(worst < 1e-5, f"max finite-difference relative error {worst:.2e}")
        adv_worst = 0.0
        for _ in range(1000):
            r = rng.normal(size=int(rng.integers(2, 65))) * rng.uniform(0.01, 10)
            mu, sd = population_stats(list(G.normalize_advantages(r)))
            adv_worst = max(adv_worst, abs(mu), abs(sd - 1))
        check(adv_worst < 1e-10, f"advantage moments off by {adv_worst:.1e}")
        table = [((1.5, 1.0), 1.28), ((0.5, -1.0), -0.8)] + [((1.0, a), a) for a in (-2.0, -0.3, 0.0, 0.7, 3.0)]
        for (ratio, adv), want in table:
            got = G.clipped_surrogate(ratio, adv)
            check(abs(got - want) < 1e-12, f"surrogate({ratio}, {adv}) = {got}, want {want}")
        check.note(f"FD error {worst:.1e}; advantage moments within {adv_worst:.1e}; surrogate table exact")


def _success(params, comp, rounds=400):
    pol = G.TabularSoftmaxPolicy(params)
    subs: dict[str, list[float]] = {t: [] for t in comp.task_ids}
    for s in range(rounds):
        t = C.run_episode(comp, pol, rng_seed=10**6 + s)
        for k, v in t.sub_rewards.items():
            subs[k].append(v)
    return {k: float(np.mean(v)) for k, v in subs.items()}


def test_criterion_6_learning_sanity(tmp_path):
    fx = json.loads((FIXTURES / "entropy_regression.json").read_text())
    pd_env = C.MatrixEnv(games=tuple(fx["matrix_games"]))
    with criterion(6, "learning sanity, nested vs mixed", 300.0) as check:
        # PD alone: held-out Nash success checked every 50 iterations
        comp = C.TaskComposition(C.MIXED, (C.SubTaskSpec("Matrix", env_config=pd_env),))
        trainer = G.GRPOTrainer(comp, G.TrainerConfig(), seed=0)
        reached, pd_rate = None, 0.0
        for block in range(10):
            trainer.run(50)
            pd_rate = _success(trainer.params, comp)["Matrix"]
            if pd_rate >= 0.95:
                reached = trainer.iteration
                break
        check(reached is not None, f"PD Nash success {pd_rate:.3f} after 500 iterations")

        lo, hi = fx["window"]
        entropy = {"nested": {}, "mixed": {}}
        nested_success = {}
        for mode in ("nested", "mixed"):
            for seed in fx["seeds"]:
                out = tmp_path / f"{mode}{seed}"
                cfg = RunConfig.model_validate({
                    "mode": "train", "composition": mode, "tasks": fx["tasks"], "seed": seed,
                    "env": {"Matrix": {"games": fx["matrix_games"]}}, "output_dir": str(out),
                    "log_trajectories": False, "trainer": {"iterations": fx["iterations"]}})
                res = run_train(cfg)
                rows = logs.read_csv(out / "metrics.csv")
                check(len(rows) == fx["iterations"] and {"entropy", "gradient_norm"} <= set(rows[0]),
                      f"{mode} seed {seed}: metrics CSV incomplete")
                check(all(r["entropy"] and r["gradient_norm"] for r in rows), f"{mode} seed {seed}: empty cells")
                entropy[mode][seed] = cli.window_mean(rows, "entropy", lo, hi)
                if mode == "nested":
                    nested_success[seed] = _success(res["params"], cfg.build_composition())
        for seed, rates in nested_success.items():
            check(all(v > 0.9 for v in rates.values()), f"nested seed {seed} sub-task success {rates}")
        for seed in fx["seeds"]:
            n, m = entropy["nested"][seed], entropy["mixed"][seed]
            check(n > m, f"seed {seed}: nested entropy {n:.4f} not above mixed {m:.4f}")
            for mode, val in (("nested", n), ("mixed", m)):
                want = fx["mean_entropy"][mode][str(seed)]
                check(abs(val - want) <= 1e-6 * abs(want), f"{mode} seed {seed} entropy {val} != fixture {want}")
        worst_nested = {k: min(r[k] for r in nested_success.values()) for k in fx["tasks"]}
        check.note(
            f"PD >= 0.95 at iteration {reached} ({pd_rate:.3f}); nested min success {worst_nested}; "
            "mean entropy it.50-250 nested/mixed "
            + ", ".join(f"s{s}={entropy['nested'][s]:.3f}/{entropy['mixed'][s]:.3f}" for s in fx["seeds"]))


def test_criterion_7_order_invariance():
    with criterion(7, "nested order invariance", 60.0) as check:
        for vec in itertools.product([0.0, 0.5, 1.0], repeat=2):
            check(C.nested_reward(vec) == C.nested_reward(vec[::-1]), f"nested_reward{vec}")
            check(C.strict_and_reward(vec) == C.strict_and_reward(vec[::-1]), f"strict_and_reward{vec}")
        ab = C.TaskComposition.of(C.NESTED, "Arith", "Matrix")
        ba = C.TaskComposition.of(C.NESTED, "Matrix", "Arith")
        matched = 0
        for policy in (C.UniformRandomPolicy(), G.TabularSoftmaxPolicy(G.PolicyParams()), C.OraclePolicy()):
            for seed in range(500):
                x = C.run_episode(ab, policy, rng_seed=seed)
                y = C.run_episode(ba, policy, rng_seed=seed)
                check(x.sub_rewards == y.sub_rewards, f"seed {seed}: sub-rewards differ")
                check(x.scalar_reward == y.scalar_reward, f"seed {seed}: nested reward differs")
                matched += 1
        check.note(f"{matched} seeded episode pairs give identical nested_reward")


def test_criterion_8_budget_law():
    with criterion(8, "turn budget law", 1.0) as check:
        n = 0
        for k in range(1, 5):
            for ids in itertools.permutations(C.TASK_IDS, k):
                budgets = [C.MAX_TURNS[t] for t in ids]
                check(C.TaskComposition.of(C.MIXED, *ids).total_max_turns == max(budgets), f"mixed {ids}")
                check(C.TaskComposition.of(C.NESTED, *ids).total_max_turns == sum(budgets), f"nested {ids}")
                n += 1
        four = C.TaskComposition.of(C.NESTED, *C.TASK_IDS).total_max_turns
        check(four == 10, f"4-task nest budget {four}")
        check.note(f"{n} ordered compositions; 4-task nest = {four}")


def test_criterion_9_harness(tmp_path, capsys):
    with criterion(9, "harness round-trips, remote stub, eval determinism", 60.0) as check:
        for name in ("minimal_eval.yaml", "nested_train.yaml"):
            cfg = parse_config(FIXTURES / name)
            check(config_from_text(dump_config(cfg)) == cfg, f"config round-trip {name}")

        comp = C.TaskComposition.of(C.NESTED, *C.TASK_IDS)
        recs = [logs.trajectory_log_record(C.run_episode(comp, C.UniformRandomPolicy(), rng_seed=s), "acc", 0, s)
                for s in range(20)]
        logs.write_trajectory_log(recs, tmp_path / "log.jsonl")
        check(logs.read_trajectory_log(tmp_path / "log.jsonl") == recs, "trajectory log round-trip")

        request = (FIXTURES / "chat_request.json").read_bytes()
        messages = json.loads(request)["messages"]
        with StubServer([(200, (FIXTURES / "chat_response.json").read_bytes(), 0)]) as s:
            text = R.remote_agent_act(s.url, "stub-model", messages, timeout=5, retries=0)
        check(text == "MOVE 4" and s.requests == [request], "echo stub")
        with StubServer([(500, b"err", 0), (500, b"err", 0), (200, chat_body("MOVE 4"), 0)]) as s:
            log: list = []
            text = R.remote_agent_act(s.url, "m", messages, timeout=5, retries=3, backoff=0.01, exchanges=log)
        check(text == "MOVE 4" and len(s.requests) == 3 and len(log) == 3, "retry stub")
        with StubServer([(200, chat_body("late"), 1.0)]) as s:
            try:
                R.remote_agent_act(s.url, "m", messages, timeout=0.2, retries=1, backoff=0.01)
                check(False, "timeout stub returned")
            except R.RemoteTimeout:
                check(len(s.requests) == 2, f"timeout stub saw {len(s.requests)} attempts")

        reports = []
        for name in ("a", "b"):
            out = tmp_path / f"eval_{name}"
            code = cli.main(["eval", "--tasks", *C.TASK_IDS, "--eval-rounds", "25", "--seed", "4",
                             "--policy", "uniform", "--output-dir", str(out), "--run-id", "acc"])
            check(code == 0, f"eval exit code {code}")
            reports.append([(out / f).read_bytes() for f in ("report.json", "report.csv", "trajectories.jsonl")])
        capsys.readouterr()
        check(reports[0] == reports[1], "eval outputs differ between identical runs")
        check.note("config and log round-trips, echo/retry/timeout stubs, byte-identical eval reruns")
