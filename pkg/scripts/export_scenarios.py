#!/usr/bin/env python3
"""Regenerate the shipped scenario files from the programmatic builders.

Run from the repository root:  python scripts/export_scenarios.py
"""

from pathlib import Path

from masksynth.scenario_io import ScenarioDoc, load_scenario, save_scenario
from masksynth.scenarios import default_gridworld_config, illustrative_scenario

OUT = Path(__file__).resolve().parent.parent / "scenarios"

ILLUSTRATIVE_SYNTHESIS = {
    "iterations": 1000,
    "batch_size": 1500,
    "batches_per_iter": 1,
    "eta": 1.0,
    "kappa": 0.05,
    "lambda0": 1.0,
    "conditioning": "state_only",
}

# The larger model wants gentler steps: costs are an order of magnitude
# bigger and the entropy signal per parameter is weaker, so the budget
# multiplier ramps slowly from zero and REINFORCE runs with the mean-cost
# baseline.
GRIDWORLD_SYNTHESIS = {
    "iterations": 2000,
    "batch_size": 1500,
    "batches_per_iter": 15,
    "eta": 1.0,
    "kappa": 0.0005,
    "lambda0": 0.0,
    "conditioning": "state_only",
    "value_baseline": True,
}


def main():
    OUT.mkdir(exist_ok=True)
    save_scenario(
        ScenarioDoc(
            name="illustrative",
            sensor_scenario=illustrative_scenario(),
            synthesis_defaults=ILLUSTRATIVE_SYNTHESIS,
        ),
        OUT / "illustrative.toml",
    )
    save_scenario(
        ScenarioDoc(
            name="gridworld",
            gridworld=default_gridworld_config(beta=0.85, epsilon=70.0),
            synthesis_defaults=GRIDWORLD_SYNTHESIS,
        ),
        OUT / "gridworld.toml",
    )
    for path in sorted(OUT.glob("*.toml")):
        load_scenario(path).build()  # round-trip sanity check
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
