#!/usr/bin/env python3
"""Gridworld experiment: baselines plus synthesized masks over a
(budget, sensor-noise) grid.

Reproduces the comparison table: no-masking and final-state-masking
baselines, then a synthesized policy per (beta, epsilon) setting.  Artifacts
land under results/gridworld/beta<b>_eps<e>/.

Usage: python scripts/run_gridworld.py [--iterations N] [--betas 0.85 0.75]
       [--epsilons 70 35] [--samples V] [--seed S]
"""

import argparse
from pathlib import Path

from masksynth.cli import main as cli_main
from masksynth.costs import exact_value, sample_trajectories
from masksynth.entropy import sampled_conditional_entropy
from masksynth.model import build_mask_mdp
from masksynth.scenario_io import load_policy, load_scenario
from masksynth.scenarios import final_state_masking_policy, no_masking_policy

ROOT = Path(__file__).resolve().parent.parent
SCENARIO = ROOT / "scenarios" / "gridworld.toml"


def entropy_of(mdp, policy, samples, seed):
    batch = sample_trajectories(mdp, policy, samples, seed=seed)
    est = sampled_conditional_entropy(mdp, policy, batch.observations)
    return est.value, est.std_error


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--betas", type=float, nargs="+", default=[0.85, 0.75])
    ap.add_argument("--epsilons", type=float, nargs="+", default=[70.0, 35.0])
    ap.add_argument("--samples", type=int, default=30000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=str(ROOT / "results" / "gridworld"))
    args = ap.parse_args()

    doc = load_scenario(SCENARIO)
    rows = []
    for beta in args.betas:
        mdp = build_mask_mdp(doc.build(beta=beta))
        for name, pol in (
            ("no-masking", no_masking_policy(mdp)),
            ("final-state-masking", final_state_masking_policy(mdp)),
        ):
            h, se = entropy_of(mdp, pol, args.samples, args.seed)
            rows.append((name, beta, "-", h, se, exact_value(mdp, pol)))

    for beta in args.betas:
        for eps in args.epsilons:
            out = Path(args.out) / f"beta{beta:g}_eps{eps:g}"
            code = cli_main([
                "synthesize", str(SCENARIO),
                "--beta", str(beta),
                "--epsilon", str(eps),
                "--iterations", str(args.iterations),
                "--seed", str(args.seed),
                "--output-dir", str(out),
            ])
            if code != 0:
                raise SystemExit(code)
            mdp = build_mask_mdp(doc.build(beta=beta, epsilon=eps))
            policy = load_policy(out / "policy.txt", mdp)
            h, se = entropy_of(mdp, policy, args.samples, args.seed + 1)
            rows.append(("synthesized", beta, f"{eps:g}", h, se, exact_value(mdp, policy)))

    print(f"\n{'policy':>20} {'beta':>5} {'budget':>7} {'H(W|Y)':>8} {'+-':>7} {'cost':>8}")
    for name, beta, eps, h, se, cost in rows:
        print(f"{name:>20} {beta:>5} {eps:>7} {h:8.4f} {se:7.4f} {cost:8.2f}")


if __name__ == "__main__":
    main()
