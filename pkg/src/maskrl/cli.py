"""Command-line interface.

Subcommands:
  train         one training run from a config file (plus overrides)
  eval          deployment evaluation of a checkpoint
  relevant-set  dump the relevant action set at a given state
  report        aggregate campaign outputs (volumes | curves)
  campaign      multi-seed, multi-mask training grid
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_train(args):
    from .configs import default_config
    from .harness import parse_config_file, write_config_snapshot, write_metrics_csv
    from .ppo import Trainer, save_checkpoint

    params = parse_config_file(args.config) if args.config else {}
    params.pop("masks", None)
    params.pop("seeds", None)
    out_dir = Path(params.pop("output_dir", "run"))
    params.pop("eval_episodes", None)
    if args.seed is not None:
        params["seed"] = args.seed
    if args.mask is not None:
        params["mask"] = args.mask
    env = params.pop("env", "seeker")
    mask = params.pop("mask", "none")
    config = default_config(env, mask, **params)

    trainer = Trainer(config)
    trainer.train()
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(out_dir / "config.txt", config)
    write_metrics_csv(out_dir / "metrics.csv", trainer.metrics)
    save_checkpoint(out_dir / "checkpoint", trainer)
    last = trainer.metrics[-1]
    print(
        f"trained {env}/{mask} seed={config.seed} steps={trainer.global_step} "
        f"return={last['episode_return_mean']:.2f} -> {out_dir}"
    )
    return 0


def _cmd_eval(args):
    from .environments import make_env
    from .ppo import evaluate_policy, load_checkpoint

    ck_dir = Path(args.checkpoint)
    if (ck_dir / "checkpoint").is_dir():
        ck_dir = ck_dir / "checkpoint"
    trainer = load_checkpoint(ck_dir)
    env = make_env(trainer.config.env, seed=args.env_seed)
    result = evaluate_policy(
        trainer.policy,
        trainer.mask,
        trainer.provider,
        env,
        args.episodes,
        deterministic=args.deterministic,
        rng=np.random.default_rng(args.env_seed),
        trajectory_path=args.dump_trajectories,
    )
    print(
        f"{trainer.config.env}/{trainer.config.mask}: "
        f"mean return {result['mean']:.3f} +- {result['std']:.3f} "
        f"over {args.episodes} episodes"
    )
    if args.dump_trajectories:
        print(f"trajectories written to {args.dump_trajectories}")
    return 0


def _cmd_relevant_set(args):
    from .environments import env_action_space, make_env
    from .masking import _batch_membership
    from .programs import zonotope_containment
    from .relevant_sets import make_provider

    state = np.array([float(v) for v in args.state.split(",")])
    provider = make_provider(args.env)
    if args.env == "seeker":
        env = make_env("seeker", seed=args.seed)
        env.reset()
        env.state.position = state[:2]
        if args.obstacle:
            vals = [float(v) for v in args.obstacle.split(",")]
            env.state.obstacle_center = np.array(vals[:2])
            env.state.obstacle_radius = vals[2]
        result = provider.compute(env)
    else:
        result = provider.compute_at(state)

    z = result.zonotope
    box = env_action_space(args.env)
    cert = zonotope_containment(z, box.as_zonotope())
    rng = np.random.default_rng(args.seed)
    pts = box.sample(rng, 10_000)
    rel_volume = (
        float(np.mean(_batch_membership(z, pts, 1e-9)))
        if z.num_generators
        else 0.0
    )
    payload = {
        "env": args.env,
        "state": state.tolist(),
        "relevant_action_set": z.to_json_dict(),
        "feasible": result.feasible,
        "fallback": result.fallback,
        "certificate": {
            "certified": cert.certified,
            "norm": cert.norm,
            "gamma": None if cert.gamma is None else cert.gamma.tolist(),
            "beta": None if cert.beta is None else cert.beta.tolist(),
        },
        "relative_volume": rel_volume,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_report(args):
    from .harness import bootstrap_ci, read_metrics_csv, volume_report

    if args.kind == "volumes":
        if args.runs:
            manifest = json.loads((Path(args.runs) / "manifest.json").read_text())
            env = manifest["env"]
        else:
            env = args.env or "seeker"
        report = volume_report(
            env, n_states=args.states, samples_per_state=args.samples, seed=args.seed
        )
        print(
            f"{env}: mean relative volume "
            f"{report['mean_relative_volume']:.3f} "
            f"+- {report['std_relative_volume']:.3f} over {args.states} states"
        )
        if args.out:
            Path(args.out).write_text(json.dumps(report, indent=2))
        return 0

    # curves: aggregate per-mask reward curves with bootstrap CIs.
    runs_dir = Path(args.runs)
    manifest = json.loads((runs_dir / "manifest.json").read_text())
    by_mask: dict[str, list] = {}
    for run in manifest["runs"]:
        if run["status"] != "ok":
            continue
        metrics = read_metrics_csv(runs_dir / run["dir"] / "metrics.csv")
        by_mask.setdefault(run["mask"], []).append(metrics)
    lines = ["mask,step,mean,lower,upper"]
    for mask, runs in sorted(by_mask.items()):
        steps = runs[0]["step"]
        n = min(len(r["episode_return_mean"]) for r in runs)
        series = np.stack([r["episode_return_mean"][:n] for r in runs])
        series = np.nan_to_num(series, nan=0.0)
        if series.shape[0] >= 2:
            ci = bootstrap_ci(series, resamples=args.resamples, seed=args.seed)
        else:
            ci = {"mean": series[0], "lower": series[0], "upper": series[0]}
        for k in range(n):
            lines.append(
                f"{mask},{int(steps[k])},{ci['mean'][k]!r},"
                f"{ci['lower'][k]!r},{ci['upper'][k]!r}"
            )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_campaign(args):
    from .harness import ExperimentSpec, parse_config_file, run_experiment

    params = parse_config_file(args.config)
    spec = ExperimentSpec(
        env=params.pop("env", "seeker"),
        masks=params.pop("masks", ["none"]),
        seeds=params.pop("seeds", [0]),
        total_steps=params.pop("total_steps", 20_000),
        eval_episodes=params.pop("eval_episodes", 10),
        output_dir=args.out or params.pop("output_dir", "runs"),
        overrides=params,
    )
    spec.overrides.pop("mask", None)
    spec.overrides.pop("seed", None)
    manifest = run_experiment(spec)
    failed = [r["name"] for r in manifest["runs"] if r["status"] != "ok"]
    for run in manifest["runs"]:
        print(f"{run['name']}: {run['status']}")
    if failed:
        print(f"{len(failed)} run(s) failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskrl",
        description="Continuous action masking for policy-gradient RL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="single training run")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--env-seed", type=int, default=0)
    p.add_argument(
        "--dump-trajectories",
        metavar="CSV",
        help="write per-step rows (episode, t, state..., action..., reward, done)",
    )
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("relevant-set", help="dump the relevant action set")
    p.add_argument("--env", required=True)
    p.add_argument("--state", required=True, help="comma-separated state vector")
    p.add_argument("--obstacle", help="cx,cy,radius (seeker only)")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_relevant_set)

    p = sub.add_parser("report", help="aggregate campaign outputs")
    p.add_argument("kind", choices=["volumes", "curves"])
    p.add_argument("--runs", help="campaign output directory")
    p.add_argument("--env", help="environment tag (volumes without --runs)")
    p.add_argument("--states", type=int, default=100)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("campaign", help="multi-seed multi-mask training grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(fn=_cmd_campaign)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
