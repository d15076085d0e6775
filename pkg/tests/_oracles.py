"""Independent reference implementations used only by the tests.

Written without numpy and without reading the package internals, so that an
agreement between these and the package is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math


def brute_force_nash(p1, p2) -> set[tuple[int, int]]:
    """Pure profiles where no player gains by a unilateral switch (weak best response)."""
    n, m = len(p1), len(p1[0])
    out = set()
    for i, j in itertools.product(range(n), range(m)):
        if any(p1[k][j] > p1[i][j] for k in range(n)):
            continue
        if any(p2[i][k] > p2[i][j] for k in range(m)):
            continue
        out.add((i, j))
    return out


def ttt_winner(cells: str) -> str | None:
    lines = [(0, 1, 2), (3, 4, 5), (6, 7, 8), (0, 3, 6), (1, 4, 7), (2, 5, 8), (0, 4, 8), (2, 4, 6)]
    for a, b, c in lines:
        if cells[a] != "." and cells[a] == cells[b] == cells[c]:
            return cells[a]
    return None


def ttt_count(first: str = "O") -> tuple[int, int]:
    """(distinct reachable positions, complete games) by plain recursion over strings."""
    second = "X" if first == "O" else "O"
    seen = set()

    def walk(cells: str, mover: str) -> int:
        seen.add(cells)
        if ttt_winner(cells) or "." not in cells:
            return 1
        nxt = second if mover == first else first
        return sum(walk(cells[:i] + mover + cells[i + 1:], nxt) for i, c in enumerate(cells) if c == ".")

    games = walk("." * 9, first)
    return len(seen), games


def spy_adjudicate(votes: dict[int, int], undercover: int) -> tuple[set[int], str | None]:
    """Players that could be eliminated and the winner when that is forced.

    Returns the tied top set; the winner is only determined when all tied
    players share a role.
    """
    counts = {p: 0 for p in range(4)}
    for target in votes.values():
        counts[target] += 1
    top = max(counts.values())
    tied = {p for p, c in counts.items() if c == top}
    if tied == {undercover}:
        return tied, "civilians"
    if undercover not in tied:
        return tied, "undercover"
    return tied, None


def population_stats(xs) -> tuple[float, float]:
    mu = math.fsum(xs) / len(xs)
    var = math.fsum((x - mu) ** 2 for x in xs) / len(xs)
    return mu, math.sqrt(var)


def random_grpo_instance(rng, n_keys=None, n_groups=None, group_size=None):
    """Random tabular policy plus synthetic groups for gradient checks.

    Old log-probs are the current ones perturbed, so ratios spread across the
    clip region on both sides.
    """
    import numpy as np

    from gamenest.grpo import GroupBatch, PolicyParams, TurnSample, log_softmax

    n_keys = n_keys or int(rng.integers(1, 6))
    table = {f"k{i}": rng.normal(size=int(rng.integers(2, 5))) for i in range(n_keys)}
    p = PolicyParams(table)
    groups = []
    for _ in range(n_groups or int(rng.integers(1, 4))):
        size = group_size or int(rng.integers(2, 6))
        rewards = rng.choice([-0.1, 0.0, 0.5, 1.0], size=size)
        turns = []
        for _ in range(size):
            ts = []
            for _ in range(int(rng.integers(1, 5))):
                k = f"k{int(rng.integers(n_keys))}"
                a = int(rng.integers(len(table[k])))
                lp = float(log_softmax(table[k])[a])
                ts.append(TurnSample(k, a, lp + float(rng.normal(scale=0.3))))
            turns.append(ts)
        groups.append(GroupBatch.synthetic(rewards, turns))
    return p, groups
