"""Experiment orchestration: campaigns, metrics files, reports.

A campaign is a grid of (mask, seed) runs over one environment. Each run
writes its own directory (config snapshot, metrics CSV, checkpoint); the
manifest indexing all runs is written once at the end. Runs are
independent, so the campaign can fan out over worker processes, capped
by the MASKRL_THREADS environment variable; outputs are byte-identical
either way.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .configs import TrainConfig, default_config
from .environments import env_action_space, make_env
from .masking import MASK_KINDS, _batch_membership
from .relevant_sets import make_provider

__all__ = [
    "ExperimentSpec",
    "run_experiment",
    "bootstrap_ci",
    "volume_report",
    "parse_config_file",
    "write_metrics_csv",
    "read_metrics_csv",
    "METRICS_COLUMNS",
]

MANIFEST_VERSION = 1
METRICS_COLUMNS = [
    "step",
    "episode_return_mean",
    "episode_return_std",
    "episodes",
    "collisions",
    "clamp_rate",
    "fallback_rate",
    "underflow_rate",
    "policy_loss",
    "value_loss",
    "entropy",
]


@dataclass
class ExperimentSpec:
    env: str = "seeker"
    masks: list[str] = field(default_factory=lambda: ["none"])
    seeds: list[int] = field(default_factory=lambda: [0])
    total_steps: int = 20_000
    eval_episodes: int = 10
    output_dir: str = "runs"
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for mask in self.masks:
            if mask not in MASK_KINDS:
                raise ValueError(
                    f"unknown mask {mask!r}; expected one of {MASK_KINDS}"
                )

    def configs(self) -> list[TrainConfig]:
        out = []
        for mask in self.masks:
            for seed in self.seeds:
                out.append(
                    default_config(
                        self.env,
                        mask,
                        seed=seed,
                        total_steps=self.total_steps,
                        **self.overrides,
                    )
                )
        return out


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)  # shortest round-trip decimal, byte-stable
    return str(v)


def write_metrics_csv(path, rows: list[dict]):
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_value(row.get(c, "")) for c in METRICS_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for line in lines[1:]:
        for h, v in zip(header, line.split(",")):
            cols[h].append(float(v) if v not in ("", "nan") else np.nan)
    return {h: np.array(v) for h, v in cols.items()}


def write_config_snapshot(path, config: TrainConfig):
    lines = [f"{k} = {_format_value(v)}" for k, v in sorted(config.to_dict().items())]
    Path(path).write_text("\n".join(lines) + "\n")


_EXTRA_KEYS = {"masks", "seeds", "output_dir", "eval_episodes"}


def parse_config_file(path) -> dict:
    """Strict key=value config: unknown keys are rejected, not ignored."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known and key not in _EXTRA_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown configuration key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    if key == "masks":
        return [v.strip() for v in value.split(",") if v.strip()]
    if key == "seeds":
        return [int(v) for v in value.split(",") if v.strip()]
    if key in ("env", "mask", "activation", "output_dir"):
        return value
    if key == "force_full_set":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean {value!r}")
    if key in (
        "seed",
        "total_steps",
        "n_steps",
        "epochs",
        "minibatch_size",
        "hidden_layers",
        "hidden_size",
        "log_every",
        "eval_episodes",
    ):
        return int(value)
    return float(value)


def _run_single(args):
    config_dict, run_dir = args
    from .ppo import Trainer, save_checkpoint

    config = TrainConfig(**config_dict)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(run_dir / "config.txt", config)
    try:
        trainer = Trainer(config)
        trainer.train()
        write_metrics_csv(run_dir / "metrics.csv", trainer.metrics)
        save_checkpoint(run_dir / "checkpoint", trainer)
        return {"status": "ok", "error": None}
    except Exception as exc:  # recorded per run; campaign continues
        (run_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(spec: ExperimentSpec, n_workers: int | None = None) -> dict:
    """Run the campaign grid; returns the manifest (also written to disk)."""
    out_root = Path(spec.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    jobs = []
    entries = []
    for config in spec.configs():
        run_name = f"{config.mask}_seed{config.seed}"
        run_dir = out_root / run_name
        jobs.append((config.to_dict(), str(run_dir)))
        entries.append(
            {
                "name": run_name,
                "mask": config.mask,
                "seed": config.seed,
                "dir": run_name,
                "config_hash": config.config_hash(),
            }
        )

    if n_workers is None:
        n_workers = int(os.environ.get("MASKRL_THREADS", "1"))
    n_workers = max(1, min(n_workers, len(jobs)))
    if n_workers == 1:
        results = [_run_single(job) for job in jobs]
    else:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(n_workers) as pool:
            results = pool.map(_run_single, jobs)

    for entry, result in zip(entries, results):
        entry.update(result)
    manifest = {
        "version": MANIFEST_VERSION,
        "env": spec.env,
        "total_steps": spec.total_steps,
        "eval_episodes": spec.eval_episodes,
        "runs": entries,
    }
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def bootstrap_ci(
    series: np.ndarray,
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> dict:
    """Percentile bootstrap over seeds at each aligned step.

    ``series`` is (n_seeds, n_steps); at least two seeds are required for
    the interval to mean anything.
    """
    series = np.atleast_2d(np.asarray(series, dtype=float))
    n_seeds = series.shape[0]
    if n_seeds < 2:
        raise ValueError("bootstrap_ci needs at least two seeds")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_seeds, size=(resamples, n_seeds))
    boot_means = series[idx].mean(axis=1)  # (resamples, n_steps)
    alpha = (1.0 - level) / 2.0
    return {
        "mean": series.mean(axis=0),
        "lower": np.quantile(boot_means, alpha, axis=0),
        "upper": np.quantile(boot_means, 1.0 - alpha, axis=0),
    }


def volume_report(
    env_tag: str,
    n_states: int = 100,
    samples_per_state: int = 10_000,
    seed: int = 0,
    provider=None,
    force_full_set: bool = False,
    goal_bias: float = 0.3,
) -> dict:
    """Monte-Carlo relative volume vol(A^r)/vol(A) over visited states.

    Each visited state contributes the fraction of uniform action-box
    samples that land inside its relevant action set. Visited states come
    from a goal-biased random walk: with probability ``goal_bias`` the
    step is the ray-masked greedy move toward the task goal, otherwise a
    uniform draw from A^r. The bias makes trajectories pass the obstacle
    region the way task-driven rollouts do; a purely uniform walk loiters
    in free space and reports noticeably larger sets.
    """
    rng = np.random.default_rng(seed)
    env = make_env(env_tag, seed=seed + 1)
    if provider is None:
        provider = make_provider(env_tag, force_full_set=force_full_set)
    box = env_action_space(env_tag)
    volumes = []
    env.reset()
    provider.reset_episode()
    from .masking import UniformDensity, hit_and_run_sample, ray_map

    while len(volumes) < n_states:
        result = provider.compute(env)
        z = result.zonotope
        pts = box.sample(rng, samples_per_state)
        if z.num_generators == 0:
            frac = 0.0
        else:
            frac = float(np.mean(_batch_membership(z, pts, 1e-9)))
        volumes.append(frac)
        if z.num_generators == 0:
            a = z.center
        elif rng.random() < goal_bias and env_tag == "seeker":
            target = np.clip(env.state.goal - env.state.position,
                             box.lower, box.upper)
            if np.abs(target).max() < 1e-12:
                target = rng.uniform(box.lower, box.upper)
            a = ray_map(target, z, box)
        else:
            a = hit_and_run_sample(UniformDensity(z.dim), z, z.center, rng)
        _, _, done, _ = env.step(a)
        if done:
            env.reset()
            provider.reset_episode()
    volumes = np.array(volumes)
    return {
        "env": env_tag,
        "mean_relative_volume": float(volumes.mean()),
        "std_relative_volume": float(volumes.std()),
        "per_state": volumes.tolist(),
    }
