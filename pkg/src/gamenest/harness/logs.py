"""Newline-delimited JSON trajectory logs and the metrics CSV."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class LogError(ValueError):
    pass


def trajectory_log_record(traj, run_id: str, iteration: int, episode: int, task: str | None = None) -> dict:
    rec = {"run_id": run_id, "iteration": iteration, "episode": episode}
    if task is not None:
        rec["task"] = task
    rec.update(traj.to_record())
    return rec


def write_trajectory_log(records: Iterable[dict], path: str | Path, append: bool = False) -> int:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        n = 0
        with path.open("a" if append else "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
                n += 1
    except OSError as exc:
        raise LogError(f"cannot write {path}: {exc}") from exc
    return n


def read_trajectory_log(path: str | Path) -> list[dict]:
    """Inverse of ``write_trajectory_log``.

    An unparseable final line without a trailing newline (an interrupted write)
    is dropped with a warning; any other bad line is an error.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    trailing_partial = not text.endswith("\n") and text != ""
    if not trailing_partial:
        lines = lines[:-1]
    out = []
    for i, line in enumerate(lines, 1):
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if trailing_partial and i == len(lines):
                log.warning("%s: dropping partial trailing line %d", path, i)
                break
            raise LogError(f"{path}: corrupt record on line {i}: {exc.msg}") from exc
    return out


def write_csv(rows: Sequence[dict], path: str | Path, columns: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in columns})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
