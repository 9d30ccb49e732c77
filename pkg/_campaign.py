"""Dry run of the acceptance-10 campaign (same spec as the fixture)."""

import time

import numpy as np

from maskrl.harness import ExperimentSpec, read_metrics_csv, run_experiment

t0 = time.time()
spec = ExperimentSpec(
    env="seeker",
    masks=["none", "ray", "generator", "distributional"],
    seeds=[0, 1, 2, 3, 4],
    total_steps=100_000,
    output_dir="_campaign_runs",
)
manifest = run_experiment(spec)
print(f"campaign wall time: {(time.time()-t0)/60:.1f} min", flush=True)


def window_mean(m, lo, hi, total=100_000):
    sel = (m["step"] > lo * total) & (m["step"] <= hi * total)
    r = m["episode_return_mean"][sel]
    w = m["episodes"][sel]
    ok = np.isfinite(r) & (w > 0)
    return float(np.average(r[ok], weights=w[ok]))


data = {}
for run in manifest["runs"]:
    print(run["name"], run["status"], run.get("error"), flush=True)
    if run["status"] != "ok":
        continue
    m = read_metrics_csv(f"_campaign_runs/{run['dir']}/metrics.csv")
    data.setdefault(run["mask"], []).append(m)

for mask, runs in data.items():
    early = [window_mean(m, 0.0, 0.1) for m in runs]
    final = [window_mean(m, 0.9, 1.0) for m in runs]
    print(
        f"{mask:15s} early avg {np.mean(early):8.1f} {[f'{v:.0f}' for v in early]}  "
        f"final avg {np.mean(final):8.1f} {[f'{v:.0f}' for v in final]}",
        flush=True,
    )
