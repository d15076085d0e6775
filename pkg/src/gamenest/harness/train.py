"""Training driver: GRPO on the configured composition, metrics CSV, snapshots, figures."""

from __future__ import annotations

import logging
from pathlib import Path

from gamenest import compose
from gamenest.grpo import GRPOTrainer, IterationResult, PolicyParams
from gamenest.harness import logs, plotting
from gamenest.harness.config import RunConfig, dump_config
from gamenest.harness.evaluate import build_opponents

log = logging.getLogger(__name__)

BASE_COLUMNS = ("iteration", "scalar_mean", "entropy", "gradient_norm", "clip_fraction", "kept_group_count")


def metrics_columns(tasks) -> list[str]:
    return ["iteration", *(f"reward_{t}" for t in tasks), *BASE_COLUMNS[1:]]


def metrics_row(res: IterationResult) -> dict:
    m = res.metrics
    row = {"iteration": res.iteration, "scalar_mean": m.mean_reward, "entropy": m.policy_entropy,
           "gradient_norm": m.gradient_norm, "clip_fraction": float(m.clip_fraction),
           "kept_group_count": m.kept_group_count}
    for task, r in res.task_rewards.items():
        row[f"reward_{task}"] = r
    return row


def build_trainer(cfg: RunConfig) -> GRPOTrainer:
    if cfg.policy.kind not in ("uniform", "snapshot"):
        raise ValueError(f"cannot train a {cfg.policy.kind!r} policy; use 'uniform' or 'snapshot'")
    params = PolicyParams.load(cfg.policy.path) if cfg.policy.kind == "snapshot" else PolicyParams()
    tcfg = cfg.trainer.to_trainer_config()
    warmup = cfg.build_composition(compose.MIXED) if tcfg.warmup_iterations and len(cfg.tasks) > 1 else None
    return GRPOTrainer(cfg.build_composition(), tcfg, params, build_opponents(cfg), cfg.seed,
                       warmup_composition=warmup, format_penalty=cfg.rewards.format_penalty,
                       draw_reward=cfg.rewards.draw)


def run_train(cfg: RunConfig, iterations: int | None = None) -> dict:
    """Train and write ``metrics.csv``, ``policy.json``, ``config.yaml``, the
    trajectory log (when enabled) and ``training.png`` under ``output_dir``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    trainer = build_trainer(cfg)
    run_id = cfg.effective_run_id
    traj_path = out / "trajectories.jsonl"
    if cfg.log_trajectories:
        traj_path.write_text("", encoding="utf-8")
    rows: list[dict] = []

    def on_iteration(res: IterationResult) -> None:
        rows.append(metrics_row(res))
        if cfg.log_trajectories:
            recs = (logs.trajectory_log_record(t, run_id, res.iteration, e)
                    for e, t in enumerate(t for g in res.groups for t in g.trajectories))
            logs.write_trajectory_log(recs, traj_path, append=True)
        every = cfg.trainer.snapshot_every
        if every and (res.iteration + 1) % every == 0:
            trainer.params.save(out / "snapshots" / f"policy_{res.iteration + 1:05d}.json")
        if res.iteration % 25 == 0:
            log.info("iter %d reward %.3f entropy %.3f", res.iteration, res.metrics.mean_reward,
                     res.metrics.policy_entropy)

    trainer.run(iterations if iterations is not None else cfg.trainer.iterations, on_iteration)
    columns = metrics_columns(cfg.tasks)
    logs.write_csv(rows, out / "metrics.csv", columns)
    trainer.params.save(out / "policy.json")
    plotting.plot_training_curves({run_id: rows}, out / "training.png")
    return {"run_id": run_id, "iterations": len(rows), "metrics": rows, "params": trainer.params,
            "output_dir": str(out)}
