"""Training runs, sweeps over config axes, and median/IQR aggregation."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ppoher import kernels
from ppoher.config import RunConfig, from_flat, to_flat
from ppoher.env import PredatorPreyEnv
from ppoher.her import augment_buffer
from ppoher.nn import GaussianPolicy, ValueNet, agent_arrays, save_checkpoint
from ppoher.ppo import (
    NonFiniteLossError,
    collect_rollout,
    compute_gae,
    evaluate,
    make_optimizer,
    ppo_update,
)

log = logging.getLogger(__name__)

METRICS_FIELDS = (
    "timestep",
    "wall_clock_seconds",
    "success_rate",
    "mean_episode_return",
    "policy_entropy",
    "approx_kl",
    "epochs_run",
    "policy_loss",
    "value_loss",
    "buffer_size_after_her",
)

# choices the reference defaults leave implicit; echoed into run metadata
IMPLEMENTATION_NOTES = {
    "advantage_normalization": "per update batch (whole augmented buffer)",
    "value_loss_clipping": False,
    "approx_kl_estimator": "mean(ratio - 1 - log(ratio)), checked after each epoch",
    "rollouts": "whole episodes until >= n_steps transitions",
    "her_data": "relabeled episodes added alongside originals",
    "evaluation": "deterministic mean action, fresh seeded env per evaluation point",
    "weight_init": "orthogonal, gain sqrt(2) hidden, 0.01 policy output, 1.0 value output",
    "log_std": "state-independent, init 0, clamped to [-5, 2]",
}


@dataclass
class MetricsRow:
    timestep: int
    wall_clock_seconds: float
    success_rate: float
    mean_episode_return: float
    policy_entropy: float
    approx_kl: float
    epochs_run: int
    policy_loss: float
    value_loss: float
    buffer_size_after_her: int

    def as_csv(self):
        return [
            str(self.timestep),
            f"{self.wall_clock_seconds:.6f}",
            repr(float(self.success_rate)),
            repr(float(self.mean_episode_return)),
            repr(float(self.policy_entropy)),
            repr(float(self.approx_kl)),
            str(self.epochs_run),
            repr(float(self.policy_loss)),
            repr(float(self.value_loss)),
            str(self.buffer_size_after_her),
        ]


@dataclass
class RunResult:
    run_dir: Path
    status: str
    rows: list = field(default_factory=list)
    error: str | None = None


def _streams(seed: int):
    names = ("init", "env", "sample", "her", "eval")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return dict(zip(names, children))


def _write_metadata(path: Path, meta: dict):
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def run_single(config: RunConfig, enable_her: bool = True, condition: dict | None = None) -> RunResult:
    """Train one agent, streaming metrics to ``<run_dir>/metrics.csv``.

    Also writes ``metadata.json`` (fully resolved config, status, timing) and
    ``checkpoint.bin`` with the final networks. ``enable_her=False`` skips the
    relabeling stage entirely, whatever ``config.her`` says.
    """
    run_dir = config.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    streams = _streams(config.seed)
    init_rng = np.random.default_rng(streams["init"])
    sample_rng = np.random.default_rng(streams["sample"])
    her_rng = np.random.default_rng(streams["her"])
    eval_seq = streams["eval"]

    env_cfg = config.env
    env = PredatorPreyEnv(env_cfg, np.random.default_rng(streams["env"]))
    policy = GaussianPolicy(env_cfg.obs_dim, env_cfg.dims, config.hidden_sizes, rng=init_rng)
    value_net = ValueNet(env_cfg.obs_dim, config.hidden_sizes, rng=init_rng)
    optimizer = make_optimizer(policy, value_net, config.ppo)

    meta = {
        "run_id": config.run_id,
        "algorithm": config.algorithm if enable_her else "ppo",
        "condition": condition or {},
        "condition_label": condition_label(condition or {}),
        "config": to_flat(config),
        "her_enabled": enable_her,
        "implementation": IMPLEMENTATION_NOTES,
        "backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "status": "running",
    }
    _write_metadata(run_dir / "metadata.json", meta)

    result = RunResult(run_dir, "running")
    timesteps = 0
    next_eval = config.eval_every
    n_evals = 0
    train_seconds = 0.0
    started = time.perf_counter()
    with open(run_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_FIELDS)
        fh.flush()
        try:
            while timesteps < config.total_timesteps:
                t0 = time.perf_counter()
                buf = collect_rollout(policy, value_net, env, config.ppo, sample_rng)
                timesteps += buf.n_env_steps
                if enable_her:
                    buf = augment_buffer(buf, config.her, policy, value_net, env_cfg, her_rng)
                compute_gae(buf, value_net, config.ppo.gamma, config.ppo.gae_lambda)
                stats = ppo_update(policy, value_net, buf, config.ppo, optimizer, sample_rng)
                train_seconds += time.perf_counter() - t0
                if timesteps >= next_eval or timesteps >= config.total_timesteps:
                    eval_env = PredatorPreyEnv(env_cfg, np.random.default_rng(eval_seq.spawn(1)[0]))
                    success, ret = evaluate(policy, eval_env, config.eval_episodes)
                    n_evals += 1
                    while next_eval <= timesteps:
                        next_eval += config.eval_every
                    row = MetricsRow(
                        timestep=timesteps,
                        wall_clock_seconds=train_seconds if config.record_wall_clock else 0.0,
                        success_rate=success,
                        mean_episode_return=ret,
                        policy_entropy=stats.entropy,
                        approx_kl=stats.approx_kl,
                        epochs_run=stats.epochs_run,
                        policy_loss=stats.policy_loss,
                        value_loss=stats.value_loss,
                        buffer_size_after_her=buf.n_transitions,
                    )
                    writer.writerow(row.as_csv())
                    fh.flush()
                    result.rows.append(row)
                    log.info("%s t=%d success=%.2f kl=%.4f epochs=%d", config.run_id, timesteps,
                             success, stats.approx_kl, stats.epochs_run)
        except NonFiniteLossError as exc:
            result.status = "failed"
            result.error = str(exc)
            log.error("%s failed: %s", config.run_id, exc)
        else:
            result.status = "completed"

    save_checkpoint(run_dir / "checkpoint.bin", agent_arrays(policy, value_net))
    meta.update(
        status=result.status,
        error=result.error,
        timesteps=timesteps,
        evaluations=n_evals,
        train_wall_clock_seconds=train_seconds,
        total_wall_clock_seconds=time.perf_counter() - started,
    )
    _write_metadata(run_dir / "metadata.json", meta)
    return result


@dataclass
class SweepSpec:
    base: RunConfig
    axes: list = field(default_factory=list)  # [(dotted path, [values...]), ...]
    seeds: list = field(default_factory=lambda: [0])

    def conditions(self):
        paths = [p for p, _ in self.axes]
        for combo in itertools.product(*[vals for _, vals in self.axes]):
            yield dict(zip(paths, combo))

    def runs(self):
        """(condition, seed, RunConfig) for the Cartesian product of axes and seeds."""
        for cond in self.conditions():
            label = condition_label(cond)
            for seed in self.seeds:
                flat = dict(cond)
                flat["seed"] = seed
                flat["run_id"] = f"{label}/seed_{seed}"
                yield cond, seed, from_flat(flat, self.base)


def condition_label(cond: dict) -> str:
    if not cond:
        return "base"
    return "__".join(f"{k}={_fmt_value(v)}" for k, v in cond.items())


def _fmt_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_sweep(path, overrides=None) -> SweepSpec:
    """Sweep file: ``base`` (dotted keys), ``axes`` (dotted key -> list), ``seeds`` (int or list)."""
    doc = yaml.safe_load(Path(path).read_text()) or {}
    base_flat = dict(doc.get("base") or {})
    base_flat.update(overrides or {})
    base = from_flat(base_flat)
    axes = [(k, list(v)) for k, v in (doc.get("axes") or {}).items()]
    seeds = doc.get("seeds", 1)
    seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    return SweepSpec(base, axes, seeds)


def _run_job(args):
    cfg, cond = args
    try:
        res = run_single(cfg, condition=cond)
    except Exception as exc:  # keep the sweep going
        log.exception("run %s crashed", cfg.run_id)
        return str(cfg.run_dir), f"failed: {exc}"
    return str(res.run_dir), res.status


def run_sweep(spec: SweepSpec, parallelism: int = 1):
    """Run every (condition, seed) pair, then aggregate the output directory.

    Returns ``(statuses, summary)`` where ``statuses`` maps run directories to
    ``completed``/``failed``.
    """
    jobs = [(cfg, cond) for cond, _, cfg in spec.runs()]
    statuses = {}
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for run_dir, status in pool.map(_run_job, jobs):
                statuses[run_dir] = status
    else:
        for job in jobs:
            run_dir, status = _run_job(job)
            statuses[run_dir] = status
    summary = aggregate(spec.base.output_dir) if any(s == "completed" for s in statuses.values()) else None
    return statuses, summary


_REQUIRED_FINITE = ("timestep", "wall_clock_seconds", "success_rate", "mean_episode_return")


def read_metrics(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_FIELDS:
            log.warning("%s: unexpected header, skipping file", path)
            return rows
        for lineno, rec in enumerate(reader, start=2):
            try:
                if len(rec) != len(METRICS_FIELDS):
                    raise ValueError("wrong field count")
                row = {k: float(v) for k, v in zip(METRICS_FIELDS, rec)}
                # diagnostics such as approx_kl may legitimately overflow; the
                # fields aggregation relies on may not
                if not all(math.isfinite(row[k]) for k in _REQUIRED_FINITE):
                    raise ValueError("non-finite value")
            except ValueError as exc:
                log.warning("%s:%d skipped (%s)", path, lineno, exc)
                continue
            rows.append(row)
    return rows


def _quartiles(values):
    q25, med, q75 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75])
    return float(med), float(q25), float(q75)


def summarize_condition(runs: list[list[dict]], final_fraction: float = 0.2) -> dict:
    """Median and IQR across seeds at aligned evaluation indices.

    Runs are aligned by evaluation index and truncated to the shortest run.
    The final window is the last ``final_fraction`` of evaluation points.
    """
    length = min(len(r) for r in runs)
    points = []
    for i in range(length):
        col = [r[i] for r in runs]
        med, q25, q75 = _quartiles([c["success_rate"] for c in col])
        points.append(
            {
                "timestep": float(np.median([c["timestep"] for c in col])),
                "wall_clock_seconds": float(np.median([c["wall_clock_seconds"] for c in col])),
                "success_median": med,
                "success_q25": q25,
                "success_q75": q75,
                "return_median": float(np.median([c["mean_episode_return"] for c in col])),
            }
        )
    window = max(1, int(math.ceil(final_fraction * length))) if length else 0
    per_seed_final = [float(np.mean([row["success_rate"] for row in r[length - window : length]])) for r in runs]
    final_med, final_q25, final_q75 = _quartiles(per_seed_final) if length else (math.nan,) * 3
    return {
        "n_runs": len(runs),
        "points": points,
        "final_window_points": window,
        "final_success_per_seed": per_seed_final,
        "final_median_success": final_med,
        "final_success_q25": final_q25,
        "final_success_q75": final_q75,
    }


def first_crossing(points, threshold, key="timestep"):
    """``key`` value of the first point whose median success reaches ``threshold`` (None if never)."""
    for p in points:
        if p["success_median"] >= threshold:
            return p[key]
    return None


def aggregate(run_dir, final_fraction: float = 0.2) -> dict:
    """Scan ``run_dir`` for completed runs, group them by condition and summarise.

    Writes ``summary.json`` and ``summary.csv`` into ``run_dir`` and returns
    the summary dictionary. Run order does not affect the result.
    """
    root = Path(run_dir)
    groups = {}
    for meta_path in sorted(root.rglob("metadata.json")):
        try:
            meta = json.loads(meta_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            log.warning("%s unreadable (%s), skipping", meta_path, exc)
            continue
        if meta.get("status") != "completed":
            log.warning("%s: run status %s, skipping", meta_path.parent, meta.get("status"))
            continue
        rows = read_metrics(meta_path.parent / "metrics.csv")
        if not rows:
            continue
        cond = meta.get("condition") or {}
        label = meta.get("condition_label") or condition_label(cond)
        g = groups.setdefault(label, {"condition": cond, "algorithm": meta.get("algorithm"), "runs": {}})
        g["runs"][meta["config"]["seed"]] = rows

    conditions = {}
    for label in sorted(groups):
        g = groups[label]
        runs = [g["runs"][s] for s in sorted(g["runs"])]
        entry = summarize_condition(runs, final_fraction)
        entry["condition"] = g["condition"]
        entry["algorithm"] = g["algorithm"]
        entry["seeds"] = sorted(g["runs"])
        conditions[label] = entry
    summary = {"final_fraction": final_fraction, "conditions": conditions}
    if root.exists():
        (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["condition", "timestep", "wall_clock_seconds", "success_median",
                        "success_q25", "success_q75", "return_median"])
            for label, entry in conditions.items():
                for p in entry["points"]:
                    w.writerow([label, p["timestep"], p["wall_clock_seconds"], p["success_median"],
                                p["success_q25"], p["success_q75"], p["return_median"]])
    return summary


def mean_median_success(summary: dict, axis: str, group: str = "her.strategy") -> dict:
    """Mean over conditions of the final median success, keyed by (group value, axis value)."""
    acc = {}
    for entry in summary["conditions"].values():
        cond = entry["condition"]
        if axis not in cond:
            continue
        key = (str(cond.get(group, entry.get("algorithm"))), cond[axis])
        acc.setdefault(key, []).append(entry["final_median_success"])
    return {k: float(np.mean(v)) for k, v in acc.items()}


def scaling_report(summary: dict, axis: str, low, high, group: str = "her.strategy") -> list[str]:
    """Performance drop between two axis values, one line per algorithm group."""
    table = mean_median_success(summary, axis, group)
    lines = []
    for name in sorted({k[0] for k in table}):
        if (name, low) not in table or (name, high) not in table:
            continue
        a, b = table[(name, low)], table[(name, high)]
        drop = 100.0 * (1.0 - b / a) if a > 0 else math.nan
        lines.append(
            f"{group}={name}: {axis} {low} -> {high}: mean median success {a:.2g} -> {b:.2g} "
            f"({drop:.1f}% decrease in performance)"
        )
    return lines

