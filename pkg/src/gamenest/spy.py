"""Four-player Who's-the-Spy: roles, two description rounds, one vote.

A match is an immutable value; every transition returns a new ``SpyMatch``.
Agents are plain objects with ``describe(view)`` and ``vote(view)``; scripted
agents carry their own seeded RNG.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

N_PLAYERS = 4
N_ROUNDS = 2
CIVILIAN, UNDERCOVER = "civilian", "undercover"
CIVILIANS_WIN, UNDERCOVER_WINS = "civilians", "undercover"
DESCRIBE, VOTE, FINISHED = "describe", "vote", "finished"


class SpyError(ValueError):
    pass


class RuleViolation(SpyError):
    """A description that contains the speaker's own word."""


class PhaseError(SpyError):
    pass


@dataclass(frozen=True)
class WordPair:
    civilian_word: str
    undercover_word: str

    def __post_init__(self):
        a, b = self.civilian_word.strip(), self.undercover_word.strip()
        if not a or not b:
            raise SpyError("words must be non-empty")
        if a.lower() == b.lower():
            raise SpyError(f"word pair must be distinct, got {a!r} twice")


def parse_word_pairs(text: str) -> list[WordPair]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise SpyError(f"line {lineno}: expected two tab-separated words")
        pairs.append(WordPair(parts[0].strip(), parts[1].strip()))
    return pairs


def load_word_pairs(path: str | Path | None = None) -> list[WordPair]:
    if path is None:
        text = resources.files("gamenest.data").joinpath("word_pairs.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_word_pairs(text)


@lru_cache(maxsize=1)
def _bundled_attributes() -> dict[str, tuple[str, ...]]:
    raw = json.loads(resources.files("gamenest.data").joinpath("word_attributes.json").read_text(encoding="utf-8"))
    return {w: tuple(a) for w, a in raw.items()}


def load_attributes(path: str | Path | None = None) -> dict[str, tuple[str, ...]]:
    if path is None:
        return dict(_bundled_attributes())
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {w: tuple(a) for w, a in raw.items()}


@dataclass(frozen=True)
class Description:
    player: int
    round: int
    text: str


@dataclass(frozen=True)
class SpyMatch:
    words: WordPair
    roles: tuple[str, ...]
    order: tuple[int, ...]
    seed: int
    trained_player: int | None = None
    phase: str = DESCRIBE
    round: int = 1
    turn: int = 0
    transcript: tuple[Description, ...] = ()
    votes: tuple[tuple[int, int], ...] = ()
    eliminated: int | None = None
    winner: str | None = None
    players: tuple = field(default=(), compare=False, repr=False)

    @property
    def speaker(self) -> int | None:
        return self.order[self.turn] if self.phase == DESCRIBE else None

    @property
    def undercover(self) -> int:
        return self.roles.index(UNDERCOVER)

    def role_of(self, player: int) -> str:
        return self.roles[player]

    def word_of(self, player: int) -> str:
        if self.roles[player] == UNDERCOVER:
            return self.words.undercover_word
        return self.words.civilian_word

    def others(self, player: int) -> list[int]:
        return [p for p in range(N_PLAYERS) if p != player]


def player_label(p: int) -> str:
    return f"Player {p + 1}"


def new_match(words: WordPair, trained_agent, opponents: Sequence, seed: int,
              undercover: int | None = None) -> SpyMatch:
    """Seat the trained agent and three opponents with seeded roles and speaking order.

    ``trained_agent`` may be None for all-scripted simulations; ``undercover``
    pins the undercover seat instead of drawing it.
    """
    opponents = list(opponents)
    if len(opponents) < N_PLAYERS - 1:
        raise SpyError(f"need {N_PLAYERS - 1} opponents, got {len(opponents)}")
    rng = np.random.default_rng([seed, 0x5B1])
    seats = [int(s) for s in rng.permutation(N_PLAYERS)]
    players: list = [None] * N_PLAYERS
    trained_player = seats[0] if trained_agent is not None else None
    if trained_agent is not None:
        players[seats[0]] = trained_agent
        for s, agent in zip(seats[1:], opponents):
            players[s] = agent
    else:
        players = list(opponents[:N_PLAYERS])
        if len(players) < N_PLAYERS:
            raise SpyError("all-scripted match needs 4 agents")
    uc = int(rng.integers(N_PLAYERS)) if undercover is None else undercover
    roles = tuple(UNDERCOVER if p == uc else CIVILIAN for p in range(N_PLAYERS))
    order = tuple(int(p) for p in rng.permutation(N_PLAYERS))
    return SpyMatch(words=words, roles=roles, order=order, seed=seed,
                    trained_player=trained_player, players=tuple(players))


def contains_word(text: str, word: str) -> bool:
    return word.lower() in text.lower()


def submit_description(m: SpyMatch, player: int, text: str) -> SpyMatch:
    if m.phase != DESCRIBE:
        raise PhaseError(f"cannot describe during {m.phase}")
    if player != m.speaker:
        raise PhaseError(f"{player_label(player)} spoke out of turn; {player_label(m.speaker)} is speaking")
    if not text.strip():
        raise SpyError("empty description")
    if contains_word(text, m.word_of(player)):
        raise RuleViolation(f"{player_label(player)} said their own word")
    transcript = m.transcript + (Description(player, m.round, text.strip()),)
    turn, rnd, phase = m.turn + 1, m.round, DESCRIBE
    if turn == N_PLAYERS:
        turn = 0
        rnd += 1
        if rnd > N_ROUNDS:
            phase, rnd = VOTE, N_ROUNDS
    return replace(m, transcript=transcript, turn=turn, round=rnd, phase=phase)


def tally_votes(m: SpyMatch, votes: dict[int, int]) -> SpyMatch:
    """Eliminate the most-voted player and adjudicate the winner.

    Ties are broken uniformly at random with an RNG derived from the match seed.
    """
    if m.phase != VOTE:
        raise PhaseError(f"cannot vote during {m.phase}")
    missing = [p for p in range(N_PLAYERS) if p not in votes]
    if missing:
        raise SpyError(f"missing votes from {', '.join(player_label(p) for p in missing)}")
    counts = [0] * N_PLAYERS
    for voter, target in votes.items():
        if voter == target:
            raise SpyError(f"{player_label(voter)} voted for themselves")
        if not 0 <= target < N_PLAYERS:
            raise SpyError(f"vote for unknown player {target}")
        counts[target] += 1
    top = max(counts)
    tied = [p for p in range(N_PLAYERS) if counts[p] == top]
    if len(tied) == 1:
        out = tied[0]
    else:
        out = tied[int(np.random.default_rng([m.seed, 0x707E]).integers(len(tied)))]
    winner = CIVILIANS_WIN if m.roles[out] == UNDERCOVER else UNDERCOVER_WINS
    return replace(m, votes=tuple(sorted(votes.items())), eliminated=out, winner=winner, phase=FINISHED)


def score_spy(m: SpyMatch, trained_player: int) -> int:
    if m.phase != FINISHED:
        raise PhaseError("match is not finished")
    side = CIVILIANS_WIN if m.roles[trained_player] == CIVILIAN else UNDERCOVER_WINS
    return int(m.winner == side)


# -- prompts -------------------------------------------------------------------------

RULE_PROMPTS = (
    "Game: Who's the Undercover Agent\n"
    "Roles:\n- 3 Civilians share one word.\n- 1 Undercover has a related but different word.\n\n"
    "Goal:\n- Civilians: Find the undercover.\n- Undercover: Avoid being voted out.\n\n"
    "How to Play:\nEach player describes their word in one sentence (without saying the word itself).\n"
    "Be subtle yet clear. After two rounds of descriptions, everyone votes out one player. "
    "The one with most votes is eliminated.\n\n"
    "Win:\n- Civilians win if the undercover is voted out.\n- Undercover wins if one civilian is voted out.",

    "Game: Find the Spy\n"
    "Four players each receive a secret word. Three of them got the same word; one got a similar word.\n"
    "Nobody knows who holds the odd word, not even its holder.\n"
    "Each player gives a one-sentence hint about their word in each of two rounds, never saying the word.\n"
    "Then all players vote at the same time. The player with the most votes is out.\n"
    "If that player held the odd word, the majority wins; otherwise the odd-word holder wins.",

    "Game: Who's the Spy (4 players)\n"
    "Setup: a word pair is chosen. The majority word goes to three players, the related word to one.\n"
    "Rounds: two speaking rounds in a fixed order, one short description per player per round.\n"
    "Rule: you may not say your own word.\n"
    "Vote: after round two every player names one other player. Most votes is eliminated.\n"
    "Result: eliminating the odd-word player is a win for the majority; eliminating anyone else is a win for the odd-word player.",

    "Social deduction game, 4 players.\n"
    "Your secret word may or may not match the others'. Exactly one player has a different but related word.\n"
    "Speak twice (one sentence per round) to show you belong with the majority without giving the word away.\n"
    "Listen carefully: a description that fits a neighbouring concept may reveal the odd one out.\n"
    "After the second round everyone votes once; the top vote-getter leaves and the game ends.",
)

DIVERSITY_HINT = (
    "### Additional Rules for Description (Very Important)\n"
    "- Your description MUST be clearly different from any descriptions you have given in earlier rounds.\n"
    "- Do NOT reuse similar words, sentence structures, or ideas.\n"
    "- Each round, pick a NEW angle (e.g., its effect, its form, its symbolism, its usage).\n"
    "- The new description should have LOW semantic similarity with your previous descriptions.\n"
    "- Always produce a new, creative, and distinct sentence.\n"
    "- If the word has multiple meanings, assume the basic meaning is intended."
)

N_SPY_TEMPLATES = len(RULE_PROMPTS)


def format_transcript(transcript: Sequence[Description]) -> str:
    if not transcript:
        return "(no descriptions yet)"
    return "\n".join(f"{player_label(d.player)} (round {d.round}): {d.text}" for d in transcript)


def render_spy_prompt(m: SpyMatch, player: int, rule_template_id: int, include_diversity_hint: bool) -> str:
    return render_view_prompt(view_for(m, player), rule_template_id, include_diversity_hint)


def render_view_prompt(view: "SpyView", rule_template_id: int, include_diversity_hint: bool) -> str:
    if not 0 <= rule_template_id < len(RULE_PROMPTS):
        raise SpyError(f"unknown spy rule template {rule_template_id}")
    parts = [
        RULE_PROMPTS[rule_template_id],
        f"\nYou are {player_label(view.player)}. Your word is: {view.word}",
        "\n## Descriptions so far\n" + format_transcript(view.transcript),
    ]
    if view.phase == DESCRIBE:
        if include_diversity_hint and view.round == 2:
            parts.append("\n" + DIVERSITY_HINT)
        parts.append(f"\n## Your Turn\nRound {view.round}: describe your word in one sentence.")
    elif view.phase == VOTE:
        names = ", ".join(player_label(p) for p in view.others)
        parts.append(f"\n## Vote\nVote out one player. Choose one of: {names}.")
    else:
        parts.append("\n## Result\nThe game is over.")
    return "\n".join(parts)


def parse_vote(text: str, voter: int) -> int | None:
    """Player id named in the response (last mention), excluding the voter."""
    hits = [int(n) - 1 for n in re.findall(r"[Pp]layer\s*([1-4])\b", text)]
    hits = [h for h in hits if h != voter]
    return hits[-1] if hits else None


# -- agents --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpyView:
    """What one player may see: own word, public transcript, candidates."""

    player: int
    word: str
    round: int
    phase: str
    transcript: tuple[Description, ...]
    others: tuple[int, ...]


def view_for(m: SpyMatch, player: int) -> SpyView:
    return SpyView(player, m.word_of(player), m.round, m.phase, m.transcript, tuple(m.others(player)))


class SpyAgent(Protocol):
    def describe(self, view: SpyView) -> str: ...

    def vote(self, view: SpyView) -> int: ...


_TOKEN = re.compile(r"[a-z]+")


def tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def overlap_scores(view: SpyView, attrs: Sequence[str]) -> dict[int, int]:
    """Per other player: attribute tokens of ``attrs`` found in their descriptions."""
    own = set(attrs)
    scores = {p: 0 for p in view.others}
    for d in view.transcript:
        if d.player in scores:
            scores[d.player] += len(tokens(d.text) & own)
    return scores


_DESCRIBE_TEMPLATES = ("It is {a} and {b}.", "Think of something {a}, also {b}.", "You could say {a}, maybe {b}.")


class ScriptedSpyAgent:
    """Deterministic stand-in opponent; see ``scripted_spy_agent``."""

    def __init__(self, kind: str, seed: int, attributes: dict[str, tuple[str, ...]],
                 pairs: Sequence[WordPair]):
        self.kind = kind
        self.seed = seed
        self.rng = np.random.default_rng([seed, 0xA6E])
        self.attributes = attributes
        self.partners: dict[str, set[str]] = {}
        for p in pairs:
            self.partners.setdefault(p.civilian_word, set()).add(p.undercover_word)
            self.partners.setdefault(p.undercover_word, set()).add(p.civilian_word)
        self.used: list[str] = []

    def _attrs(self, word: str) -> tuple[str, ...]:
        try:
            return self.attributes[word]
        except KeyError:
            raise SpyError(f"word {word!r} missing from attribute table") from None

    def _pool(self, word: str) -> list[str]:
        attrs = self._attrs(word)
        if self.kind != "evasive-undercover":
            return list(attrs)
        shared = set()
        for partner in sorted(self.partners.get(word, ())):
            shared |= set(attrs) & set(self.attributes.get(partner, ()))
        pool = [a for a in attrs if a in shared]
        return pool if len(pool) >= 2 else list(attrs)

    def describe(self, view: SpyView) -> str:
        pool = self._pool(view.word)
        fresh = [a for a in pool if a not in self.used]
        if len(fresh) < 2:
            fresh = pool
        a, b = (fresh[int(i)] for i in self.rng.choice(len(fresh), size=2, replace=False))
        self.used += [a, b]
        template = _DESCRIBE_TEMPLATES[int(self.rng.integers(len(_DESCRIBE_TEMPLATES)))]
        return template.format(a=a, b=b)

    def vote(self, view: SpyView) -> int:
        if self.kind == "random-voter":
            return int(view.others[int(self.rng.integers(len(view.others)))])
        scores = overlap_scores(view, self._pool(view.word))
        low = min(scores.values())
        tied = [p for p in view.others if scores[p] == low]
        return int(tied[int(self.rng.integers(len(tied)))])


SPY_AGENT_KINDS = ("keyword-civilian", "evasive-undercover", "random-voter")


def scripted_spy_agent(kind: str, seed: int, attributes: dict[str, tuple[str, ...]] | None = None,
                       pairs: Sequence[WordPair] | None = None) -> ScriptedSpyAgent:
    """Build a seeded scripted opponent.

    keyword-civilian
        describes its word with two attributes from the table and votes for the
        player whose descriptions share fewest attribute tokens with its word.
    evasive-undercover
        same voting rule, but describes using only attributes its word shares
        with its paired word, so it blends in with the other side.
    random-voter
        describes with random attributes and votes uniformly among the others.
    """
    if kind not in SPY_AGENT_KINDS:
        raise SpyError(f"unknown scripted agent kind {kind!r}")
    attrs = attributes if attributes is not None else _bundled_attributes()
    if not attrs:
        raise SpyError("attribute table is empty")
    return ScriptedSpyAgent(kind, seed, attrs, pairs if pairs is not None else load_word_pairs())


def play_scripted_match(m: SpyMatch) -> SpyMatch:
    """Drive a match where every seat holds an agent."""
    while m.phase == DESCRIBE:
        p = m.speaker
        m = submit_description(m, p, m.players[p].describe(view_for(m, p)))
    votes = {p: m.players[p].vote(view_for(m, p)) for p in range(N_PLAYERS)}
    return tally_votes(m, votes)
