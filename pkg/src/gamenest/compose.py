"""Episode construction for mixed and nested task compositions.

Mixed episodes sample one sub-task per trajectory and score it alone. Nested
episodes run every sub-task in order inside one conversation and score the
mean of the sub-task rewards (or their product with ``strict_and``).

Every sub-task draws its environment randomness from ``(seed, task)`` and its
policy sampling randomness from ``(sample_seed, task)``, so reordering a nested
composition replays exactly the same sub-episodes.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from gamenest import matrix as mx
from gamenest import spy
from gamenest import tictactoe as ttt

ARITH, MATRIX, TICTACTOE, SPY = "Arith", "Matrix", "TicTacToe", "Spy"
TASK_IDS = (ARITH, MATRIX, TICTACTOE, SPY)
MAX_TURNS = {ARITH: 1, MATRIX: 1, TICTACTOE: 5, SPY: 3}
MIXED, NESTED = "mixed", "nested"

FORMAT_PENALTY = -0.1
DRAW_REWARD = 0.5


class CompositionError(ValueError):
    pass


class OpponentFailure(RuntimeError):
    """An agent outside the trained policy could not produce a move."""


# -- per-task environment options ----------------------------------------------

@dataclass(frozen=True)
class ArithEnv:
    max_operand: int = 99
    ops: tuple[str, ...] = ("+", "-", "*")


@dataclass(frozen=True)
class MatrixEnv:
    games: tuple[str, ...] = ()          # empty = all canonical games
    templates: tuple[int, ...] = (0, 1, 2)
    transform: bool = True
    roles: tuple[str, ...] = ("P1", "P2")


@dataclass(frozen=True)
class TicTacToeEnv:
    templates: tuple[int, ...] = (0, 1, 2, 3)
    win_conditions_prob: float = 0.5


@dataclass(frozen=True)
class SpyEnv:
    templates: tuple[int, ...] = (0, 1, 2, 3)
    diversity_hint: bool = True
    word_pairs: str | None = None


DEFAULT_ENVS = {ARITH: ArithEnv, MATRIX: MatrixEnv, TICTACTOE: TicTacToeEnv, SPY: SpyEnv}


@dataclass(frozen=True)
class SubTaskSpec:
    task_id: str
    max_turns: int = 0
    env_config: Any = None

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise CompositionError(f"unknown task {self.task_id!r}; expected one of {TASK_IDS}")
        fixed = MAX_TURNS[self.task_id]
        if self.max_turns == 0:
            object.__setattr__(self, "max_turns", fixed)
        elif self.max_turns != fixed:
            raise CompositionError(f"{self.task_id} max_turns is fixed at {fixed}")
        if self.env_config is None:
            object.__setattr__(self, "env_config", DEFAULT_ENVS[self.task_id]())


@dataclass(frozen=True)
class TaskComposition:
    mode: str
    tasks: tuple[SubTaskSpec, ...]
    strict_and: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(
            t if isinstance(t, SubTaskSpec) else SubTaskSpec(t) for t in self.tasks))
        if self.mode not in (MIXED, NESTED):
            raise CompositionError(f"mode must be {MIXED!r} or {NESTED!r}")
        if not self.tasks:
            raise CompositionError("composition needs at least one task")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise CompositionError(f"duplicate task in composition: {ids}")

    @classmethod
    def of(cls, mode: str, *task_ids: str, strict_and: bool = False) -> "TaskComposition":
        return cls(mode, tuple(SubTaskSpec(t) for t in task_ids), strict_and)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(t.task_id for t in self.tasks)

    @property
    def total_max_turns(self) -> int:
        budgets = [t.max_turns for t in self.tasks]
        return sum(budgets) if self.mode == NESTED else max(budgets)

    def spec(self, task_id: str) -> SubTaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise CompositionError(f"{task_id} not in composition")

    def describe(self) -> str:
        return f"{self.mode}[{','.join(self.task_ids)}]"


def sample_mixed_task(composition: TaskComposition, rng: np.random.Generator) -> SubTaskSpec:
    if composition.mode != MIXED:
        raise CompositionError("sample_mixed_task needs a mixed composition")
    if not composition.tasks:
        raise CompositionError("empty task list")
    return composition.tasks[int(rng.integers(len(composition.tasks)))]


def nested_reward(sub_rewards: Sequence[float]) -> float:
    if len(sub_rewards) == 0:
        raise CompositionError("nested_reward of an empty list")
    return float(sum(sub_rewards) / len(sub_rewards))


def strict_and_reward(sub_rewards: Sequence[float]) -> float:
    if len(sub_rewards) == 0:
        raise CompositionError("strict_and_reward of an empty list")
    return float(np.prod(sub_rewards))


# -- synthetic formal task ---------------------------------------------------------

_OP_FUNCS: dict[str, Callable[[int, int], int]] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
}
_OP_WORDS = {"+": "plus", "-": "minus", "*": "times"}
ARITH_METHODS = ("+", "-", "*")


def extract_last_integer(text: str) -> int | None:
    hits = re.findall(r"-?\d+", text.replace(",", ""))
    return int(hits[-1]) if hits else None


@dataclass(frozen=True)
class ArithProblem:
    a: int
    b: int
    op: str

    @property
    def answer(self) -> int:
        return _OP_FUNCS[self.op](self.a, self.b)

    @property
    def prompt(self) -> str:
        return (f"Compute {self.a} {self.op} {self.b} ({self.a} {_OP_WORDS[self.op]} {self.b}). "
                "Give the final answer as a single integer.")

    def verify(self, text: str) -> int:
        return int(extract_last_integer(text) == self.answer)

    def candidates(self) -> tuple[str, ...]:
        # one candidate per operator applied to the operands; toy policies pick among these
        return tuple(f"The answer is {_OP_FUNCS[m](self.a, self.b)}" for m in ARITH_METHODS)


def make_arith_problem(rng: np.random.Generator, env: ArithEnv = ArithEnv()) -> ArithProblem:
    a = int(rng.integers(env.max_operand + 1))
    b = int(rng.integers(env.max_operand + 1))
    op = env.ops[int(rng.integers(len(env.ops)))]
    return ArithProblem(a, b, op)


def arith_task(rng: np.random.Generator) -> tuple[str, Callable[[str], int]]:
    problem = make_arith_problem(rng)
    return problem.prompt, problem.verify


# -- policy contract -----------------------------------------------------------------

@dataclass(frozen=True)
class TurnRequest:
    """One query to the trained policy.

    ``prompt`` is the full text for this turn and ``messages`` the conversation so
    far (ending with ``prompt``). ``state`` is a compact canonical rendering of the
    game content that tabular policies key on; ``actions`` are candidate
    responses. ``info`` carries ground truth for oracle policies only.
    """

    task_id: str
    prompt: str
    messages: tuple[dict, ...]
    state: str
    actions: tuple[str, ...]
    info: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class PolicyAction:
    text: str
    index: int | None = None
    logprob: float | None = None
    key: str | None = None


class Policy(Protocol):
    def act(self, request: TurnRequest, rng: np.random.Generator) -> PolicyAction: ...


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# -- trajectories --------------------------------------------------------------------

@dataclass
class TurnRecord:
    task_id: str
    turn_index: int
    observation: str
    state_key: str | None
    action_text: str
    action_index: int | None
    n_actions: int
    logprob: float | None

    def to_record(self) -> dict:
        return {
            "task": self.task_id,
            "turn": self.turn_index,
            "observation_digest": digest(self.observation),
            "state_key": self.state_key,
            "action": self.action_text,
            "action_index": self.action_index,
            "n_actions": self.n_actions,
            "logprob": self.logprob,
        }


@dataclass
class Trajectory:
    composition: TaskComposition
    seed: int
    sample_seed: int
    turns: list[TurnRecord] = field(default_factory=list)
    sub_rewards: dict[str, float] = field(default_factory=dict)
    scalar_reward: float = 0.0
    format_penalty: bool = False
    error: str | None = None
    details: dict[str, dict] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "composition": self.composition.describe(),
            "seed": self.seed,
            "sample_seed": self.sample_seed,
            "turns": [t.to_record() for t in self.turns],
            "sub_rewards": dict(self.sub_rewards),
            "scalar_reward": self.scalar_reward,
            "format_penalty": self.format_penalty,
            "error": self.error,
            "details": self.details,
        }


# -- opponents -----------------------------------------------------------------------

@dataclass
class OpponentSuite:
    """Opponents for the multi-agent tasks.

    ``ttt`` needs ``move(board, rng) -> cell``. Spy opponents come from
    ``spy_factory(seed) -> list of 3 agents`` when given, otherwise from the
    scripted kinds in ``spy_kinds``.
    """

    ttt: Any = field(default_factory=lambda: ttt.MinimaxOpponent(epsilon=0.2))
    spy_kinds: tuple[str, ...] = ("keyword-civilian", "keyword-civilian", "keyword-civilian")
    spy_factory: Callable[[int], list] | None = None

    def spy_agents(self, seed: int) -> list:
        if self.spy_factory is not None:
            return list(self.spy_factory(seed))
        return [spy.scripted_spy_agent(kind, seed * 4 + i + 1) for i, kind in enumerate(self.spy_kinds)]


# -- episode runner ------------------------------------------------------------------

class _Violation(Exception):
    """Unparseable or rule-breaking action from the trained policy."""


_TASK_TAG = {ARITH: 11, MATRIX: 12, TICTACTOE: 13, SPY: 14}
_MIX_TAG = 99


def _seed_int(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31 - 1))


class _Episode:
    def __init__(self, traj: Trajectory, policy: Policy, opponents: OpponentSuite,
                 nested: bool, n_tasks: int, draw_reward: float):
        self.traj = traj
        self.policy = policy
        self.opponents = opponents
        self.nested = nested
        self.n_tasks = n_tasks
        self.draw_reward = draw_reward
        self.messages: list[dict] = []
        self.task_position = 0
        # (state, action) of finished sub-tasks; part of what later sub-tasks observe
        self.carried: list[str] = []
        self._current: list[str] = []

    def finish_subtask(self) -> None:
        self.carried.extend(self._current)
        self._current = []

    def ask(self, task_id: str, prompt: str, state: str, actions: Sequence[str],
            info: dict, sample_rng: np.random.Generator) -> PolicyAction:
        if self.nested and not any(t.task_id == task_id for t in self.traj.turns):
            prompt = f"=== Sub-task {self.task_position + 1}/{self.n_tasks}: {task_id} ===\n{prompt}"
        self.messages.append({"role": "user", "content": prompt})
        if self.carried:
            state = " || ".join(self.carried) + " || " + state
        request = TurnRequest(task_id, prompt, tuple(dict(m) for m in self.messages), state, tuple(actions), info)
        action = self.policy.act(request, sample_rng)
        choice = f"#{action.index}" if action.index is not None else action.text
        self._current.append(f"{state.rsplit(' || ', 1)[-1]} -> {choice}")
        self.messages.append({"role": "assistant", "content": action.text})
        self.traj.turns.append(TurnRecord(
            task_id=task_id,
            turn_index=len(self.traj.turns),
            observation=prompt,
            state_key=action.key,
            action_text=action.text,
            action_index=action.index,
            n_actions=len(actions),
            logprob=action.logprob,
        ))
        return action

    # each runner returns (reward, details) and raises _Violation / OpponentFailure

    def run_arith(self, spec: SubTaskSpec, env_rng, sample_rng):
        problem = make_arith_problem(env_rng, spec.env_config)
        info = {"answer": problem.answer, "op": problem.op}
        act = self.ask(ARITH, problem.prompt, f"{ARITH}|{problem.op}", problem.candidates(), info, sample_rng)
        if extract_last_integer(act.text) is None:
            raise _Violation("no integer in arithmetic answer")
        return float(problem.verify(act.text)), {"question": f"{problem.a} {problem.op} {problem.b}",
                                                 "answer": problem.answer}

    def run_matrix(self, spec: SubTaskSpec, env_rng, sample_rng):
        env: MatrixEnv = spec.env_config
        games = mx.build_canonical_games()
        if env.games:
            games = [mx.game_by_name(n, games) for n in env.games]
        game = games[int(env_rng.integers(len(games)))]
        t = mx.sample_transform(env_rng) if env.transform else mx.IDENTITY
        role = env.roles[int(env_rng.integers(len(env.roles)))]
        template = env.templates[int(env_rng.integers(len(env.templates)))]
        shown = mx.transform_payoffs(game, t)
        prompt = mx.render_matrix_prompt(shown, template, role, _seed_int(env_rng))
        labels = shown.actions(role)
        state = f"{MATRIX}|{role}|{list(shown.row_actions)}|{list(shown.col_actions)}|{shown.payoff_p1}|{shown.payoff_p2}"
        nash = sorted(mx.nash_actions(shown, role))
        info = {"matrix": shown, "role": role, "nash_actions": nash}
        act = self.ask(MATRIX, prompt, state, labels, info, sample_rng)
        choice = mx.parse_matrix_action(act.text, labels)
        if choice is None:
            raise _Violation("no action label in matrix answer")
        details = {"game": game.game_name, "sign": t.sign, "offset": t.offset, "role": role,
                   "template": template, "action": labels[choice]}
        return float(mx.score_matrix_action(shown, role, choice)), details

    def run_tictactoe(self, spec: SubTaskSpec, env_rng, sample_rng):
        env: TicTacToeEnv = spec.env_config
        template = env.templates[int(env_rng.integers(len(env.templates)))]
        win_cond = bool(env_rng.random() < env.win_conditions_prob)
        mark = ttt.MARKS[int(env_rng.integers(2))]
        board = ttt.Board.empty(ttt.O)
        details = {"mark": mark, "template": template, "win_conditions": win_cond}
        trained_turns = 0
        while not ttt.check_winner(board).terminal:
            if board.to_move == mark:
                trained_turns += 1
                moves = ttt.legal_moves(board)
                prompt = ttt.render_board_prompt(board, template, win_cond, mark)
                info = {"board": board, "mark": mark}
                act = self.ask(TICTACTOE, prompt, f"{TICTACTOE}|{mark}|{board.key}",
                               [str(m) for m in moves], info, sample_rng)
                cell = ttt.parse_cell(act.text)
                if cell is None or cell not in moves:
                    details["illegal"] = act.text
                    raise _Violation(f"illegal tictactoe move {act.text!r}")
                board = ttt.apply_move(board, cell)
            else:
                try:
                    cell = self.opponents.ttt.move(board, env_rng)
                    board = ttt.apply_move(board, cell)
                except (ttt.IllegalMove, ttt.GameOver, ValueError) as exc:
                    raise OpponentFailure(f"tictactoe opponent: {exc}") from exc
        outcome = ttt.check_winner(board)
        details.update(outcome=outcome.value, board=board.key, trained_turns=trained_turns)
        return ttt.score_tictactoe(outcome, mark, self.draw_reward), details

    def run_spy(self, spec: SubTaskSpec, env_rng, sample_rng):
        env: SpyEnv = spec.env_config
        pairs = spy.load_word_pairs(env.word_pairs)
        pair = pairs[int(env_rng.integers(len(pairs)))]
        template = env.templates[int(env_rng.integers(len(env.templates)))]
        match_seed = _seed_int(env_rng)
        opponents = self.opponents.spy_agents(match_seed)
        m = spy.new_match(pair, "trained", opponents, match_seed)
        me = m.trained_player
        attrs = spy.load_attributes().get(m.word_of(me), ())
        details = {"role": m.role_of(me), "player": me, "template": template}

        def opponent(call, p):
            try:
                return call(spy.view_for(m, p))
            except (spy.SpyError, OpponentFailure) as exc:
                raise OpponentFailure(f"spy opponent {spy.player_label(p)}: {exc}") from exc

        while m.phase == spy.DESCRIBE:
            p = m.speaker
            if p == me:
                word = m.word_of(me)
                prompt = spy.render_spy_prompt(m, me, template, env.diversity_hint)
                actions = _spy_description_candidates(word, attrs)
                act = self.ask(SPY, prompt, f"{SPY}|describe|r{m.round}|{word}", actions,
                               {"word": word, "role": m.role_of(me)}, sample_rng)
                try:
                    m = spy.submit_description(m, me, act.text)
                except spy.SpyError as exc:
                    raise _Violation(str(exc)) from exc
            else:
                text = opponent(m.players[p].describe, p)
                try:
                    m = spy.submit_description(m, p, text)
                except spy.SpyError as exc:
                    raise OpponentFailure(f"spy opponent {spy.player_label(p)}: {exc}") from exc
        votes = {}
        for p in range(spy.N_PLAYERS):
            if p == me:
                continue
            votes[p] = opponent(m.players[p].vote, p)
        scores = spy.overlap_scores(spy.view_for(m, me), attrs)
        ranked = sorted(m.others(me), key=lambda q: (scores[q], q))
        prompt = spy.render_spy_prompt(m, me, template, env.diversity_hint)
        act = self.ask(SPY, prompt, f"{SPY}|vote|{m.word_of(me)}",
                       [f"I vote for {spy.player_label(q)}" for q in ranked],
                       {"ranked": ranked, "role": m.role_of(me)}, sample_rng)
        target = spy.parse_vote(act.text, me)
        if target is None:
            raise _Violation(f"no valid vote in {act.text!r}")
        votes[me] = target
        m = spy.tally_votes(m, votes)
        details.update(eliminated=m.eliminated, winner=m.winner,
                       transcript=[[d.player, d.round, d.text] for d in m.transcript],
                       votes={str(k): v for k, v in m.votes})
        return float(spy.score_spy(m, me)), details


def _spy_description_candidates(word: str, attrs: Sequence[str]) -> list[str]:
    if attrs:
        out = [f"It is {a}." for a in attrs[:4]]
    else:
        out = ["It is something familiar.", "You see it often.", "Most people know it.", "It has a clear use."]
    # saying the word is a candidate too; choosing it is a rule violation
    return out + [f"It is basically {word}."]


_RUNNERS = {ARITH: _Episode.run_arith, MATRIX: _Episode.run_matrix,
            TICTACTOE: _Episode.run_tictactoe, SPY: _Episode.run_spy}


def run_episode(composition: TaskComposition, policy: Policy, opponents: OpponentSuite | None = None,
                rng_seed: int = 0, *, sample_seed: int | None = None,
                format_penalty: float = FORMAT_PENALTY, draw_reward: float = DRAW_REWARD) -> Trajectory:
    """Roll out one trajectory; deterministic given the policy state and both seeds.

    ``sample_seed`` drives the policy's action sampling (defaults to ``rng_seed``);
    members of a GRPO group share ``rng_seed`` and differ in ``sample_seed``.
    The format penalty is applied at most once; the violating sub-task scores 0
    and later sub-tasks of a nested episode still run. An opponent failure
    aborts the episode with reward 0 and an error record.
    """
    opponents = opponents if opponents is not None else OpponentSuite()
    sample_seed = rng_seed if sample_seed is None else sample_seed
    traj = Trajectory(composition, rng_seed, sample_seed)
    nested = composition.mode == NESTED
    if nested:
        specs = list(composition.tasks)
    else:
        specs = [sample_mixed_task(composition, np.random.default_rng([rng_seed, _MIX_TAG]))]
    ep = _Episode(traj, policy, opponents, nested, len(specs), draw_reward)
    for position, spec_ in enumerate(specs):
        ep.task_position = position
        tag = _TASK_TAG[spec_.task_id]
        env_rng = np.random.default_rng([rng_seed, tag])
        sample_rng = np.random.default_rng([sample_seed, tag, 1])
        try:
            reward, details = _RUNNERS[spec_.task_id](ep, spec_, env_rng, sample_rng)
        except _Violation as exc:
            reward, details = 0.0, {"violation": str(exc)}
            traj.format_penalty = True
        except OpponentFailure as exc:
            traj.error = f"{type(exc).__name__}: {exc}"
            traj.sub_rewards[spec_.task_id] = 0.0
            traj.scalar_reward = 0.0
            return traj
        traj.sub_rewards[spec_.task_id] = reward
        traj.details[spec_.task_id] = details
        ep.finish_subtask()
    rewards = [traj.sub_rewards[s.task_id] for s in specs]
    if nested:
        base = strict_and_reward(rewards) if composition.strict_and else nested_reward(rewards)
    else:
        base = rewards[0]
    traj.scalar_reward = base + (format_penalty if traj.format_penalty else 0.0)
    return traj


# -- reference policies ----------------------------------------------------------------

class OraclePolicy:
    """Ground-truth play: correct arithmetic, a Nash action, minimax TicTacToe,
    attribute descriptions and a least-overlap vote in Spy."""

    def act(self, request: TurnRequest, rng: np.random.Generator) -> PolicyAction:
        info = request.info
        if request.task_id == ARITH:
            want = f"The answer is {info['answer']}"
            idx = request.actions.index(want)
        elif request.task_id == MATRIX:
            # no pure equilibrium (possible after sign -1): every action scores 0
            idx = info["nash_actions"][0] if info["nash_actions"] else 0
        elif request.task_id == TICTACTOE:
            cell, _ = ttt.minimax_move(info["board"], info["mark"])
            idx = request.actions.index(str(cell))
        elif request.task_id == SPY:
            idx = 0
        else:
            raise CompositionError(f"oracle has no rule for {request.task_id}")
        return PolicyAction(request.actions[idx], idx)


class UniformRandomPolicy:
    """Uniform over the offered candidates."""

    def act(self, request: TurnRequest, rng: np.random.Generator) -> PolicyAction:
        n = len(request.actions)
        idx = int(rng.integers(n))
        return PolicyAction(request.actions[idx], idx, float(-np.log(n)))
