#!/usr/bin/env python3
"""One path, two designs: fit both by MCMC and print the credible intervals.

A short-chain illustration of the regular-versus-LARI comparison; the full
study is ``run_recipe.py sim-study``.
"""
import argparse

from larimove.diagnostics import summarize_fit
from larimove.mcmc import MCMCConfig, run_mwg
from larimove.rng import substream
from larimove.sampling import subsample_lari, subsample_regular
from larimove.sim import QuadraticSimParams, simulate_quadratic_ar2

TRUTH = {"alpha": 0.08, "beta": 0.4, "sigma2": 0.25}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--h", type=float, default=5.0)
    a = p.parse_args()
    path = simulate_quadratic_ar2(QuadraticSimParams(), substream(a.seed, "path"))
    designs = {
        "regular": subsample_regular(path, a.h),
        "lari": subsample_lari(path, a.h, substream(a.seed, "lari")),
    }
    cfg = MCMCConfig(adapt_iters=a.iters, sample_iters=a.iters, position_thin=10)
    for name, sub in designs.items():
        d = run_mwg(sub, config=cfg, rng=substream(a.seed, "mcmc", name))
        s = summarize_fit(d, TRUTH, design=name, unobserved_truth=sub.unobserved_truth)
        print(f"{name}: converged={s.converged} mspe={s.mspe:.1f}")
        for k, (lo, hi) in s.ci.items():
            print(f"  {k:7s} [{lo:.4f}, {hi:.4f}]  truth {TRUTH[k]}  covers={s.covers[k]}")


if __name__ == "__main__":
    main()
