#!/usr/bin/env python3
"""Run one experiment recipe and print its summary.

    python3 scripts/run_recipe.py sim-study --preset desk --seed 11 --out results/sim-study
"""
import argparse
import json

from larimove.experiments import RECIPES, preset_config, run_experiment
from larimove.io import to_jsonable


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("recipe", choices=RECIPES)
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    a = p.parse_args()
    extra = {"replicates": a.replicates} if a.replicates else {}
    cfg = preset_config(a.recipe, a.preset, a.seed, output_dir=a.out, workers=a.workers, **extra)
    print(json.dumps(to_jsonable(run_experiment(cfg)), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
