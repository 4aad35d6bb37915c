"""Compare the compiled and pure-Python unroll kernels.

Times guarded coupled unrolls of a trained network over the sphere training
settings with each available backend and checks that both give the same
trajectories.

Usage::

    python benchmarks/bench_rollout.py [--settings N] [--repeat R]
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from dmpcouple.coupling import assemble
from dmpcouple.guards import GuardConfig
from dmpcouple.network import TrainConfig, train_lm
from dmpcouple.oracle import Scene, demo_durations, gen_avoidance, gen_baseline, training_settings
from dmpcouple.rollout import available_backends, fit_baseline, rollout


def _setup(n_settings):
    scene = Scene()
    baseline = fit_baseline([gen_baseline(scene.start, scene.goal, scene.tau)])
    settings = training_settings("sphere", scene)[:n_settings]
    demos = [gen_avoidance(baseline, s, tau=t, demo_id=f"{s.setting_id}-{i}")
             for s in settings[:2] for i, t in enumerate(demo_durations(scene.tau, 3))]
    model = train_lm(assemble(demos, baseline), TrainConfig(max_iters=20))
    return baseline, settings, model


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--settings", type=int, default=20)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    logging.getLogger("dmpcouple").setLevel(logging.ERROR)  # the small training set warns
    baseline, settings, model = _setup(args.settings)
    guards = GuardConfig(width=400.0)
    timings, paths = {}, {}
    for backend in available_backends():
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            runs = [rollout(baseline, s, model, guards=guards, backend=backend) for s in settings]
            best = min(best, time.perf_counter() - t0)
        timings[backend] = best / len(settings)
        paths[backend] = np.stack([r.x for r in runs])
    for backend, t in timings.items():
        print(f"{backend:>9}: {1e3 * t:8.2f} ms per coupled unroll")
    if len(timings) == 2:
        gap = np.abs(paths["compiled"] - paths["python"]).max()
        print(f"  speedup: {timings['python'] / timings['compiled']:.1f}x, max position difference {gap:.2e} m")
    else:
        print("compiled kernel not built; only the Python backend was timed")


if __name__ == "__main__":
    main()
