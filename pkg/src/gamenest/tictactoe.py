"""3x3 TicTacToe engine, text format, prompts and scripted opponents."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

EMPTY, O, X = ".", "O", "X"
MARKS = (O, X)
LINES = (
    (0, 1, 2), (3, 4, 5), (6, 7, 8),
    (0, 3, 6), (1, 4, 7), (2, 5, 8),
    (0, 4, 8), (2, 4, 6),
)


class IllegalMove(ValueError):
    pass


class GameOver(ValueError):
    pass


class Outcome(enum.Enum):
    ONGOING = "ongoing"
    WIN_O = "win_O"
    WIN_X = "win_X"
    DRAW = "draw"

    @property
    def terminal(self) -> bool:
        return self is not Outcome.ONGOING

    @property
    def winner(self) -> str | None:
        return {Outcome.WIN_O: O, Outcome.WIN_X: X}.get(self)

    @classmethod
    def win(cls, mark: str) -> "Outcome":
        return cls.WIN_O if mark == O else cls.WIN_X


def other(mark: str) -> str:
    return X if mark == O else O


@dataclass(frozen=True)
class Board:
    cells: tuple[str, ...] = (EMPTY,) * 9
    to_move: str = O
    first: str = field(default=O, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if len(self.cells) != 9 or any(c not in (EMPTY, O, X) for c in self.cells):
            raise ValueError(f"bad cells {self.cells!r}")
        if self.to_move not in MARKS or self.first not in MARKS:
            raise ValueError("marks must be 'O' or 'X'")
        lead = self.cells.count(self.first) - self.cells.count(other(self.first))
        if lead not in (0, 1):
            raise ValueError(f"mark counts inconsistent with first mover {self.first}")
        expected = self.first if lead == 0 else other(self.first)
        if self.to_move != expected:
            raise ValueError(f"{expected} should be to move")
        if _has_line(self.cells, O) and _has_line(self.cells, X):
            raise ValueError("both players have a completed line")

    @classmethod
    def empty(cls, first: str = O) -> "Board":
        return cls((EMPTY,) * 9, first, first)

    @property
    def key(self) -> str:
        return "".join(self.cells)

    def __str__(self) -> str:
        return format_board(self)


def _has_line(cells, mark) -> bool:
    return any(cells[a] == cells[b] == cells[c] == mark for a, b, c in LINES)


def legal_moves(b: Board) -> list[int]:
    """Indices of empty cells. A won board may still have some; apply_move rejects them."""
    return [i for i, c in enumerate(b.cells) if c == EMPTY]


def apply_move(b: Board, cell: int) -> Board:
    if check_winner(b).terminal:
        raise GameOver("game is already over")
    if not 0 <= cell < 9:
        raise IllegalMove(f"cell {cell} out of range")
    if b.cells[cell] != EMPTY:
        raise IllegalMove(f"cell {cell} is occupied")
    cells = list(b.cells)
    cells[cell] = b.to_move
    return Board(tuple(cells), other(b.to_move), b.first)


def check_winner(b: Board) -> Outcome:
    for mark in MARKS:
        if _has_line(b.cells, mark):
            return Outcome.win(mark)
    if EMPTY not in b.cells:
        return Outcome.DRAW
    return Outcome.ONGOING


# -- text format ---------------------------------------------------------------

def format_board(b: Board) -> str:
    c = b.cells
    return "\n".join(" ".join(c[r * 3:r * 3 + 3]) for r in range(3))


_ROW = re.compile(r"^([.OX]) ([.OX]) ([.OX])$")


def parse_board(text: str, first: str = O) -> Board:
    rows = text.strip("\n").split("\n")
    if len(rows) != 3:
        raise ValueError("board text must have 3 rows")
    cells = []
    for row in rows:
        m = _ROW.match(row)
        if m is None:
            raise ValueError(f"bad board row {row!r}")
        cells.extend(m.groups())
    lead = cells.count(first) - cells.count(other(first))
    return Board(tuple(cells), first if lead == 0 else other(first), first)


# -- perfect play ----------------------------------------------------------------

@lru_cache(maxsize=None)
def _solve(cells: str, to_move: str) -> tuple[int, int]:
    # (value for to_move in {-1, 0, 1}, best cell); lowest index wins ties
    best_val, best_cell = -2, -1
    for i, c in enumerate(cells):
        if c != EMPTY:
            continue
        nxt = cells[:i] + to_move + cells[i + 1:]
        if _has_line(nxt, to_move):
            val = 1
        elif EMPTY not in nxt:
            val = 0
        else:
            val = -_solve(nxt, other(to_move))[0]
        if val > best_val:
            best_val, best_cell = val, i
            if val == 1:
                break
    return best_val, best_cell


VALUE_NAMES = {-1: "loss", 0: "draw", 1: "win"}


def minimax_move(b: Board, mark: str) -> tuple[int, int]:
    """Value-optimal cell for ``mark`` and its exact game value (-1, 0, 1)."""
    if check_winner(b).terminal:
        raise GameOver("no move on a terminal board")
    if mark != b.to_move:
        raise ValueError(f"{mark} is not to move")
    val, cell = _solve(b.key, mark)
    return cell, val


def enumerate_game_tree(first: str = O) -> tuple[int, int]:
    """(distinct reachable positions incl. the empty board, completed move sequences)."""
    seen: set[str] = set()

    @lru_cache(maxsize=None)
    def games_from(cells: str, to_move: str) -> int:
        seen.add(cells)
        if _has_line(cells, other(to_move)) or EMPTY not in cells:
            return 1
        total = 0
        for i, c in enumerate(cells):
            if c == EMPTY:
                total += games_from(cells[:i] + to_move + cells[i + 1:], other(to_move))
        return total

    n_games = games_from(EMPTY * 9, first)
    return len(seen), n_games


# -- opponents -------------------------------------------------------------------

class RandomOpponent:
    name = "random"

    def move(self, b: Board, rng: np.random.Generator) -> int:
        moves = legal_moves(b)
        return int(moves[rng.integers(len(moves))])


class MinimaxOpponent:
    """Perfect play, except a uniformly random legal move with probability ``epsilon``."""

    def __init__(self, epsilon: float = 0.0):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self.epsilon = epsilon
        self.name = "minimax" if epsilon == 0 else f"minimax(eps={epsilon})"

    def move(self, b: Board, rng: np.random.Generator) -> int:
        if self.epsilon > 0 and rng.random() < self.epsilon:
            moves = legal_moves(b)
            return int(moves[rng.integers(len(moves))])
        return minimax_move(b, b.to_move)[0]


# -- scoring -----------------------------------------------------------------------

def score_tictactoe(final: Outcome, trained_mark: str, draw_reward: float = 0.5) -> float:
    if not final.terminal:
        raise ValueError("cannot score an ongoing game")
    if final is Outcome.DRAW:
        return draw_reward
    return 1.0 if final.winner == trained_mark else 0.0


# -- prompts -----------------------------------------------------------------------

_PIECES = (
    "**Player Pieces**:\n"
    "- Player 1: 'O'\n"
    "- Player 2: 'X'\n"
    "- Empty Slot: '.'\n"
)

WIN_CONDITIONS = """**Winning Conditions**:
The game ends when a player forms a line of 3 of their own pieces. The line can be:

1. **Horizontal** (side-by-side in a row)
*Example of a horizontal win for Player 1 ('O'):*
```
X . .
O O O <-- 3 'O's in row 2
. X .
```
2. **Vertical** (stacked on top of each other in a column)
*Example of a vertical win for Player 2 ('X'):*
```
. X O
O X O <-- 3 'X's in column 2
. X .
```
3. **Diagonal** (connected at an angle)
*Example of a diagonal win (bottom-left to top-right) for Player 1:*
```
. . O
. O X <-- 3 'O's in a diagonal line
O X .
```
*Example of another diagonal win (top-left to bottom-right) for Player 2:*
```
X . O
. X O <-- 3 'X's in a diagonal line
. O X
```
**Draw Condition**:
If the entire grid is filled with pieces and no player has won, the game is a draw.
"""

_INTROS = (
    "##Game Rules: TicTacToe\n"
    "**Objective**: Be the first player to connect 3 of your pieces in a continuous line.\n"
    + _PIECES
    + "**How to Play**:\n"
    "1. The game is played on a 3x3 grid.\n"
    "2. Players take turns setting one of their pieces into any available slot.\n",

    "##Game Rules: TicTacToe\n"
    "Two players alternate placing pieces on a 3x3 board. Only empty cells may be chosen.\n"
    + _PIECES
    + "Three of your pieces in a row, column or diagonal wins the game.\n",

    "##Game Rules: TicTacToe\n"
    "You are playing a turn-based board game against an opponent on a 3x3 grid.\n"
    + _PIECES
    + "On each turn you claim one unoccupied cell. Plan ahead and block your opponent's lines.\n",

    "##Game Rules: TicTacToe\n"
    "**Setup**: a 3x3 grid, initially empty.\n"
    + _PIECES
    + "**Turns**: players alternate; a move places your piece in one empty cell.\n"
    "**Goal**: complete a line of three before your opponent does.\n",
)

N_TTT_TEMPLATES = len(_INTROS)


def player_name(mark: str) -> str:
    return "Player 1 ('O')" if mark == O else "Player 2 ('X')"


def render_board_prompt(b: Board, template_id: int, include_win_conditions: bool, mark: str) -> str:
    if not 0 <= template_id < len(_INTROS):
        raise ValueError(f"unknown tictactoe template {template_id}")
    parts = [_INTROS[template_id]]
    if include_win_conditions:
        parts.append(WIN_CONDITIONS)
    actions = ", ".join(str(i) for i in legal_moves(b))
    parts.append(
        "\n## Current Game State\n"
        f"{format_board(b)}\n"
        "Cells are numbered 0-8 left to right, top to bottom.\n"
        "\n## Your Turn\n"
        f"You are {player_name(mark)}.\n"
        f"The available actions are: {actions}."
    )
    return "\n".join(parts)


def parse_cell(text: str) -> int | None:
    """Last standalone integer in the response, or None."""
    hits = re.findall(r"(?<![\w.-])(-?\d+)(?![\w.])", text)
    return int(hits[-1]) if hits else None
