"""Two-player normal-form games.

Holds the canonical game library, sign/offset payoff transformations, the
exhaustive pure-Nash enumerator, IESDS reduction, prompt rendering and the
Nash-based action scorer used as the matrix-game reward.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

Role = Literal["P1", "P2"]
ROLES: tuple[Role, Role] = ("P1", "P2")


class MatrixError(ValueError):
    """Invalid matrix, transform, template or action."""


def _grid(rows) -> tuple[tuple[int, ...], ...]:
    out = []
    for row in rows:
        cells = []
        for e in row:
            if isinstance(e, bool) or int(e) != e:
                raise MatrixError(f"payoff entries must be integers, got {e!r}")
            cells.append(int(e))
        out.append(tuple(cells))
    return tuple(out)


@dataclass(frozen=True)
class PayoffMatrix:
    game_name: str
    row_actions: tuple[str, ...]
    col_actions: tuple[str, ...]
    payoff_p1: tuple[tuple[int, ...], ...]
    payoff_p2: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "row_actions", tuple(self.row_actions))
        object.__setattr__(self, "col_actions", tuple(self.col_actions))
        object.__setattr__(self, "payoff_p1", _grid(self.payoff_p1))
        object.__setattr__(self, "payoff_p2", _grid(self.payoff_p2))
        n_rows, n_cols = len(self.row_actions), len(self.col_actions)
        if n_rows < 2 or n_cols < 2:
            raise MatrixError(f"{self.game_name}: need at least 2 actions per player")
        for name, table in (("payoff_p1", self.payoff_p1), ("payoff_p2", self.payoff_p2)):
            if len(table) != n_rows or any(len(r) != n_cols for r in table):
                raise MatrixError(f"{self.game_name}: {name} must be {n_rows}x{n_cols}")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_actions), len(self.col_actions)

    def actions(self, role: Role) -> tuple[str, ...]:
        if role == "P1":
            return self.row_actions
        if role == "P2":
            return self.col_actions
        raise MatrixError(f"unknown role {role!r}")

    def to_record(self) -> dict:
        return {
            "name": self.game_name,
            "row_actions": list(self.row_actions),
            "col_actions": list(self.col_actions),
            "payoff_p1": [list(r) for r in self.payoff_p1],
            "payoff_p2": [list(r) for r in self.payoff_p2],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PayoffMatrix":
        expected = {"name", "row_actions", "col_actions", "payoff_p1", "payoff_p2"}
        if set(rec) != expected:
            raise MatrixError(f"matrix record keys {sorted(rec)} != {sorted(expected)}")
        return cls(rec["name"], rec["row_actions"], rec["col_actions"], rec["payoff_p1"], rec["payoff_p2"])


@dataclass(frozen=True, order=True)
class ActionProfile:
    row_action: int
    col_action: int


@dataclass(frozen=True)
class TransformSpec:
    sign: int = 1
    offset: int = 0

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise MatrixError(f"sign must be +1 or -1, got {self.sign}")
        if self.offset not in (-100, 0, 100):
            raise MatrixError(f"offset must be one of -100, 0, +100, got {self.offset}")


IDENTITY = TransformSpec(1, 0)


def sample_transform(rng: np.random.Generator) -> TransformSpec:
    """Uniform independent draw of sign in {+1, -1} and offset in {+100, -100}."""
    sign = int(rng.choice([1, -1]))
    offset = int(rng.choice([100, -100]))
    return TransformSpec(sign, offset)


# -- game library and file format -------------------------------------------

def dumps_matrices(games: Iterable[PayoffMatrix]) -> str:
    return "".join(json.dumps(g.to_record()) + "\n" for g in games)


def loads_matrices(text: str) -> list[PayoffMatrix]:
    games = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MatrixError(f"line {lineno}: {exc.msg}") from exc
        try:
            games.append(PayoffMatrix.from_record(rec))
        except (MatrixError, TypeError) as exc:
            raise MatrixError(f"line {lineno}: {exc}") from exc
    return games


def load_matrices(path: str | Path) -> list[PayoffMatrix]:
    return loads_matrices(Path(path).read_text(encoding="utf-8"))


def save_matrices(games: Iterable[PayoffMatrix], path: str | Path) -> None:
    Path(path).write_text(dumps_matrices(games), encoding="utf-8")


def canonical_games_text() -> str:
    return resources.files("gamenest.data").joinpath("canonical_games.jsonl").read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def _canonical() -> tuple[PayoffMatrix, ...]:
    return tuple(loads_matrices(canonical_games_text()))


def build_canonical_games() -> list[PayoffMatrix]:
    """The nine named games with fixed canonical payoffs."""
    return list(_canonical())


def game_by_name(name: str, games: Iterable[PayoffMatrix] | None = None) -> PayoffMatrix:
    for g in games if games is not None else build_canonical_games():
        if g.game_name == name:
            return g
    raise MatrixError(f"unknown game {name!r}")


# -- transformations and equilibria -----------------------------------------

def transform_payoffs(m: PayoffMatrix, t: TransformSpec) -> PayoffMatrix:
    def f(table):
        return tuple(tuple(t.sign * e + t.offset for e in row) for row in table)

    return PayoffMatrix(m.game_name, m.row_actions, m.col_actions, f(m.payoff_p1), f(m.payoff_p2))


def enumerate_pure_nash(m: PayoffMatrix) -> list[ActionProfile]:
    """All weak pure-strategy Nash equilibria, ordered by (row, col)."""
    a = np.asarray(m.payoff_p1)
    b = np.asarray(m.payoff_p2)
    row_best = a >= a.max(axis=0, keepdims=True)
    col_best = b >= b.max(axis=1, keepdims=True)
    return [ActionProfile(int(i), int(j)) for i, j in np.argwhere(row_best & col_best)]


def _strictly_dominated(table, own: list[int], other: list[int], by_row: bool) -> int | None:
    # lowest-index own strategy strictly dominated by some other surviving strategy
    def pay(s, o):
        return table[s][o] if by_row else table[o][s]

    for s in own:
        for d in own:
            if d != s and all(pay(d, o) > pay(s, o) for o in other):
                return s
    return None


def iesds_reduce(m: PayoffMatrix) -> PayoffMatrix:
    """Iterated elimination of strictly dominated pure strategies.

    Players alternate (P1 first); each pass removes the lowest-index strictly
    dominated strategy of the player to act. Stops when neither player has one.
    """
    rows = list(range(len(m.row_actions)))
    cols = list(range(len(m.col_actions)))
    idle = 0
    player = 0
    while idle < 2:
        if player == 0:
            s = _strictly_dominated(m.payoff_p1, rows, cols, by_row=True)
            if s is not None:
                rows.remove(s)
        else:
            s = _strictly_dominated(m.payoff_p2, cols, rows, by_row=False)
            if s is not None:
                cols.remove(s)
        idle = 0 if s is not None else idle + 1
        player = 1 - player
    return _submatrix(m, rows, cols)


def _submatrix(m: PayoffMatrix, rows: list[int], cols: list[int]) -> PayoffMatrix:
    # bypasses the >=2 actions check: a fully solved game reduces to 1x1
    sub = object.__new__(PayoffMatrix)
    object.__setattr__(sub, "game_name", m.game_name)
    object.__setattr__(sub, "row_actions", tuple(m.row_actions[i] for i in rows))
    object.__setattr__(sub, "col_actions", tuple(m.col_actions[j] for j in cols))
    object.__setattr__(sub, "payoff_p1", tuple(tuple(m.payoff_p1[i][j] for j in cols) for i in rows))
    object.__setattr__(sub, "payoff_p2", tuple(tuple(m.payoff_p2[i][j] for j in cols) for i in rows))
    return sub


def nash_actions(m: PayoffMatrix, role: Role) -> set[int]:
    """Projection of the pure-Nash set onto one player's axis."""
    profiles = enumerate_pure_nash(m)
    if role == "P1":
        return {p.row_action for p in profiles}
    if role == "P2":
        return {p.col_action for p in profiles}
    raise MatrixError(f"unknown role {role!r}")


def score_matrix_action(m: PayoffMatrix, player_role: Role, action: int) -> int:
    n = len(m.actions(player_role))
    if not 0 <= action < n:
        raise MatrixError(f"action {action} out of range for {player_role} ({n} actions)")
    return int(action in nash_actions(m, player_role))


# -- prompts ------------------------------------------------------------------

_ROLE_LINES = {
    "P1": "You are Player 1 (the row player)",
    "P2": "You are Player 2 (the column player)",
}

_INSTRUCTIONS = (
    "Choose exactly one of your actions. Reply with the action name only.",
    "Think about what the other player will do, then answer with one of your action names.",
    "Select the action you will play. Your reply must contain exactly one action name from your list.",
)


def _grid_table(m: PayoffMatrix, table) -> str:
    width = max(len(a) for a in (*m.row_actions, *m.col_actions, *(str(e) for r in table for e in r)))
    head = " " * width + " | " + " | ".join(c.rjust(width) for c in m.col_actions)
    lines = [head]
    for label, row in zip(m.row_actions, table):
        lines.append(label.rjust(width) + " | " + " | ".join(str(e).rjust(width) for e in row))
    return "\n".join(lines)


def _pair_lines(m: PayoffMatrix) -> str:
    lines = []
    for i, r in enumerate(m.row_actions):
        for j, c in enumerate(m.col_actions):
            lines.append(f"- P1 plays {r}, P2 plays {c}: P1 gets {m.payoff_p1[i][j]}, P2 gets {m.payoff_p2[i][j]}")
    return "\n".join(lines)


def _template_0(m, role, instr):
    return (
        f"{_ROLE_LINES[role]}.\n\n"
        f"Rows = Player 1's actions [{', '.join(m.row_actions)}]; "
        f"Columns = Player 2's actions [{', '.join(m.col_actions)}].\n\n"
        f"### P1's payoff\n{_grid_table(m, m.payoff_p1)}\n\n"
        f"### P2's payoff\n{_grid_table(m, m.payoff_p2)}\n\n"
        f"{instr}"
    )


def _template_1(m, role, instr):
    mine = m.actions(role)
    return (
        f"Two players move simultaneously. {_ROLE_LINES[role]}.\n"
        f"Player 1 may play: {', '.join(m.row_actions)}.\n"
        f"Player 2 may play: {', '.join(m.col_actions)}.\n\n"
        f"Payoff table for Player 1:\n{_grid_table(m, m.payoff_p1)}\n\n"
        f"Payoff table for Player 2:\n{_grid_table(m, m.payoff_p2)}\n\n"
        f"Your actions: {', '.join(mine)}.\n{instr}"
    )


def _template_2(m, role, instr):
    return (
        f"{_ROLE_LINES[role]} in a one-shot game.\n"
        f"Player 1 actions: [{', '.join(m.row_actions)}]. Player 2 actions: [{', '.join(m.col_actions)}].\n"
        f"Outcomes:\n{_pair_lines(m)}\n\n"
        f"### P1's payoff\n{_grid_table(m, m.payoff_p1)}\n\n"
        f"### P2's payoff\n{_grid_table(m, m.payoff_p2)}\n\n"
        f"{instr}"
    )


MATRIX_TEMPLATES = (_template_0, _template_1, _template_2)


def render_matrix_prompt(m: PayoffMatrix, template_id: int, player_role: Role, rng_seed: int) -> str:
    if not 0 <= template_id < len(MATRIX_TEMPLATES):
        raise MatrixError(f"unknown matrix template {template_id}")
    if player_role not in ROLES:
        raise MatrixError(f"unknown role {player_role!r}")
    instr = _INSTRUCTIONS[int(np.random.default_rng(rng_seed).integers(len(_INSTRUCTIONS)))]
    return MATRIX_TEMPLATES[template_id](m, player_role, instr)


def parse_matrix_action(text: str, labels: Iterable[str]) -> int | None:
    """Index of the earliest action label appearing in ``text`` as a whole word.

    Matching is case-insensitive; at the same position the longer label wins.
    """
    best = None
    for idx, label in enumerate(labels):
        hit = re.search(rf"(?<!\w){re.escape(label)}(?!\w)", text, flags=re.IGNORECASE)
        if hit is None:
            continue
        key = (hit.start(), -len(label))
        if best is None or key < best[0]:
            best = (key, idx)
    return None if best is None else best[1]
