#!/usr/bin/env python3
"""Benchmark the optimization loop against random search on the virtual press.

Runs BO (LCM surrogate, marginal EI, p=1) for a number of seeds on the
three-input press problem and prints the best scalarized objective after a
fixed evaluation budget, next to a uniform-random baseline with the same
budget, relative to the stored brute-force optimum.

Usage: python3 scripts/bo_benchmark.py [--seeds 10] [--budget 25]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from formopt.acquisition import TargetSpec
from formopt.candidates import ParameterSpec
from formopt.loop import (
    CandidateConfig,
    EndConditions,
    LoopConfig,
    OptimizationLoop,
    VirtualPressBackend,
)
from formopt.press import PressModel
from formopt.records import ResultStore
from formopt.surrogate import SurrogateConfig, TrainingSettings

SPECS = [
    ParameterSpec("p", "continuous", lower=50.0, upper=400.0),
    ParameterSpec("Fr", "continuous", lower=0.05, upper=0.2),
    ParameterSpec("D", "continuous", lower=0.5, upper=2.5),
]
FIXED = {"db": 30.0, "dbn": 50.0, "Rp": 340.0}


def bo_config(seed: int, budget: int) -> LoopConfig:
    return LoopConfig(
        part_id="bench",
        specs=SPECS,
        surrogate=SurrogateConfig(
            flavor="lcm",
            num_latent_gps=2,
            use_input_encoder=False,
            training=TrainingSettings(max_steps=150, seed=seed),
        ),
        candidates=CandidateConfig(n_star=300),
        p=1,
        max_iterations=budget,
        end=EndConditions(no_improvement_window=1000, constant_minimum_window=1000),
        seed=seed,
    )


def run_bo(tmpdir: Path, seed: int, budget: int) -> float:
    path = tmpdir / f"bo_{seed}.jsonl"
    path.unlink(missing_ok=True)  # each benchmark run starts from scratch
    store = ResultStore(path)
    model = PressModel(steps=5)
    loop = OptimizationLoop(
        bo_config(seed, budget), store, lambda: VirtualPressBackend(model, FIXED)
    )
    return loop.run().best_value


def run_random(seed: int, budget: int) -> float:
    rng = np.random.default_rng(seed)
    model = PressModel()
    target = TargetSpec()
    best = float("inf")
    for _ in range(budget):
        x = dict(FIXED)
        for spec in SPECS:
            x[spec.name] = float(rng.uniform(spec.lower, spec.upper))
        best = min(best, target.scalarize(model.evaluate_final(x)))
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--budget", type=int, default=25)
    parser.add_argument("--workdir", type=Path, default=Path("/tmp/formopt_bench"))
    args = parser.parse_args()
    args.workdir.mkdir(parents=True, exist_ok=True)

    fixture = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
    oracle = json.loads((fixture / "press_oracle_optimum.json").read_text())
    optimum = oracle["optimum_value"]
    threshold = optimum * 1.05

    bo, rnd = [], []
    t0 = time.monotonic()
    for seed in range(args.seeds):
        t = time.monotonic()
        bo_best = run_bo(args.workdir, seed, args.budget)
        rnd_best = run_random(seed, args.budget)
        bo.append(bo_best)
        rnd.append(rnd_best)
        hit = "hit " if bo_best <= threshold else "miss"
        print(
            f"seed {seed}: bo {bo_best:8.4f} ({hit}) random {rnd_best:8.4f} "
            f"[{time.monotonic() - t:.1f}s]"
        )
    hits = sum(1 for v in bo if v <= threshold)
    print(f"\noracle optimum {optimum:.6f}, 5% threshold {threshold:.6f}")
    print(f"hits: {hits}/{args.seeds}")
    print(f"median bo {np.median(bo):.4f} vs median random {np.median(rnd):.4f}")
    print(f"total {time.monotonic() - t0:.1f}s")


if __name__ == "__main__":
    main()
