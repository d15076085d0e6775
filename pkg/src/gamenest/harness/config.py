"""Run configuration: YAML file -> validated ``RunConfig``.

Schema version 1. Unknown keys are rejected; validation errors carry the line
of the offending key in the source file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from gamenest import compose
from gamenest.grpo import TrainerConfig

TaskName = Literal["Arith", "Matrix", "TicTacToe", "Spy"]
SpyAgentKind = Literal["keyword-civilian", "evasive-undercover", "random-voter"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RemoteSpec(_Strict):
    endpoint: str
    model: str
    timeout: float = Field(30.0, gt=0)
    retries: int = Field(3, ge=0)
    backoff: float = Field(0.5, ge=0)


class TicTacToeOpponent(_Strict):
    kind: Literal["minimax", "random", "remote"] = "minimax"
    epsilon: float = Field(0.2, ge=0, le=1)
    remote: RemoteSpec | None = None


class SpyOpponents(_Strict):
    kind: Literal["scripted-spy", "remote"] = "scripted-spy"
    agents: tuple[SpyAgentKind, SpyAgentKind, SpyAgentKind] = ("keyword-civilian",) * 3
    remote: RemoteSpec | None = None


class OpponentsSpec(_Strict):
    TicTacToe: TicTacToeOpponent = TicTacToeOpponent()
    Spy: SpyOpponents = SpyOpponents()


class PolicySpec(_Strict):
    kind: Literal["uniform", "snapshot", "oracle", "minimax", "random", "remote"] = "uniform"
    path: str | None = None
    greedy: bool = False
    remote: RemoteSpec | None = None

    @model_validator(mode="after")
    def _needs(self):
        if self.kind == "snapshot" and not self.path:
            raise ValueError("policy kind 'snapshot' needs a path")
        if self.kind == "remote" and self.remote is None:
            raise ValueError("policy kind 'remote' needs a remote block")
        return self


class TrainerSpec(_Strict):
    group_size: int = Field(16, ge=2)
    clip_low: float = Field(0.2, gt=0, lt=1)
    clip_high: float = Field(0.28, gt=0, lt=1)
    entropy_coef: float = Field(0.001, ge=0)
    learning_rate: float = Field(0.05, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    gae_gamma: float = Field(1.0, ge=0, le=1)
    gae_lambda: float = Field(1.0, ge=0, le=1)
    filter_keep_fraction: float = Field(0.25, gt=0, le=1)
    iterations: int = Field(250, ge=1)
    groups_per_iteration: int = Field(8, ge=1)
    update_epochs: int = Field(1, ge=1)
    warmup_iterations: int = Field(0, ge=0)
    snapshot_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _clip_order(self):
        if self.clip_low > self.clip_high:
            raise ValueError("clip_low must not exceed clip_high")
        return self

    def to_trainer_config(self) -> TrainerConfig:
        fields = self.model_dump()
        fields.pop("snapshot_every")
        return TrainerConfig(**fields)


class RewardSpec(_Strict):
    draw: float = 0.5
    format_penalty: float = -0.1


class ArithEnvSpec(_Strict):
    max_operand: int = Field(99, ge=1)
    ops: tuple[Literal["+", "-", "*"], ...] = ("+", "-", "*")


class MatrixEnvSpec(_Strict):
    games: tuple[str, ...] = ()
    templates: tuple[int, ...] = (0, 1, 2)
    transform: bool = True
    roles: tuple[Literal["P1", "P2"], ...] = ("P1", "P2")

    @field_validator("games")
    @classmethod
    def _known_games(cls, v):
        from gamenest.matrix import build_canonical_games

        known = {g.game_name for g in build_canonical_games()}
        bad = [g for g in v if g not in known]
        if bad:
            raise ValueError(f"unknown games {bad}")
        return v

    @field_validator("templates")
    @classmethod
    def _templates(cls, v):
        from gamenest.matrix import MATRIX_TEMPLATES

        if not v or any(not 0 <= t < len(MATRIX_TEMPLATES) for t in v):
            raise ValueError(f"templates must be non-empty and within 0..{len(MATRIX_TEMPLATES) - 1}")
        return v


class TicTacToeEnvSpec(_Strict):
    templates: tuple[int, ...] = (0, 1, 2, 3)
    win_conditions_prob: float = Field(0.5, ge=0, le=1)


class SpyEnvSpec(_Strict):
    templates: tuple[int, ...] = (0, 1, 2, 3)
    diversity_hint: bool = True
    word_pairs: str | None = None


class EnvSpec(_Strict):
    Arith: ArithEnvSpec = ArithEnvSpec()
    Matrix: MatrixEnvSpec = MatrixEnvSpec()
    TicTacToe: TicTacToeEnvSpec = TicTacToeEnvSpec()
    Spy: SpyEnvSpec = SpyEnvSpec()


class RunConfig(_Strict):
    version: Literal[1] = 1
    mode: Literal["train", "eval"]
    composition: Literal["mixed", "nested"] = "nested"
    tasks: tuple[TaskName, ...] = Field(min_length=1)
    strict_and: bool = False
    env: EnvSpec = EnvSpec()
    opponents: OpponentsSpec = OpponentsSpec()
    policy: PolicySpec = PolicySpec()
    trainer: TrainerSpec = TrainerSpec()
    rewards: RewardSpec = RewardSpec()
    seed: int = 0
    eval_rounds: int = Field(100, ge=1)
    output_dir: str = "runs/default"
    run_id: str | None = None
    workers: int = Field(1, ge=1)
    log_trajectories: bool = True

    @model_validator(mode="before")
    @classmethod
    def _task_shorthand(cls, data: Any):
        if isinstance(data, dict) and "task" in data:
            data = dict(data)
            if "tasks" in data:
                raise ValueError("give either 'task' or 'tasks', not both")
            data["tasks"] = [data.pop("task")]
        return data

    @field_validator("tasks")
    @classmethod
    def _unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("tasks must be distinct")
        return v

    @property
    def effective_run_id(self) -> str:
        return self.run_id or f"{self.mode}-{self.composition}-{'-'.join(self.tasks)}-s{self.seed}"

    def env_config(self, task: str):
        spec = getattr(self.env, task).model_dump()
        for k, v in spec.items():
            if isinstance(v, list):
                spec[k] = tuple(v)
        return compose.DEFAULT_ENVS[task](**spec)

    def build_composition(self, mode: str | None = None) -> compose.TaskComposition:
        specs = tuple(compose.SubTaskSpec(t, env_config=self.env_config(t)) for t in self.tasks)
        return compose.TaskComposition(mode or self.composition, specs, self.strict_and)


# -- parsing -------------------------------------------------------------------------

def _line_of(node: yaml.Node | None, loc: tuple) -> int | None:
    line = node.start_mark.line + 1 if node is not None else None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(part):
                    line = k.start_mark.line + 1
                    nxt = v
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _format_errors(exc: ValidationError, node: yaml.Node | None, source: str) -> str:
    lines = []
    for err in exc.errors():
        loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
        where = _line_of(node, loc)
        dotted = ".".join(str(p) for p in loc) or "<root>"
        prefix = f"{source}:{where}" if where else source
        lines.append(f"{prefix}: {dotted}: {err['msg']}")
    return "\n".join(lines)


def set_dotted(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    cur = data
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value


def config_from_text(text: str, source: str = "<config>", overrides: dict[str, Any] | None = None) -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is not None:
            set_dotted(data, key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, node, source)) from exc


def parse_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_text(path.read_text(encoding="utf-8"), str(path), overrides)


def dump_config(cfg: RunConfig) -> str:
    """Effective configuration as YAML; ``config_from_text`` reads it back unchanged."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
