"""Repeated-sampling study of interval coverage and change-point recovery.

    python3 scripts/recovery_study.py coverage --reps 200
    python3 scripts/recovery_study.py changepoint --reps 50 --V 0.25 0.5 1.0
"""
import argparse
import time

import numpy as np

from nof1causal import synth
from nof1causal.estimands import Request, estimate
from nof1causal.pipeline import fit_all
from nof1causal.series import OUTCOME, DagConfig
from nof1causal.ssm import SsmSpec, fit_model


def coverage(reps, T, level):
    covered, widths = 0, []
    for seed in range(reps):
        syn = synth.generate(synth.TruthSpec(T=T, seed=seed))
        _, lo, hi = estimate(fit_all(syn.series).frame, Request("CE"), T // 2, level=level, seed=seed)
        covered += lo <= -1.0 <= hi
        widths.append(hi - lo)
    rate = covered / reps
    mcse = np.sqrt(rate * (1 - rate) / reps)
    print(f"CE coverage {rate:.3f} +- {mcse:.3f} (nominal {level}), mean width {np.mean(widths):.3f}")


def changepoint(reps, T, Vs, window):
    cp = T // 2
    for V in Vs:
        hits = spurious = 0
        for seed in range(reps):
            for change in (True, False):
                b1 = {"piecewise": {"values": [-1.0, -0.2], "change_points": [cp]}} if change else -1.0
                spec = synth.TruthSpec(T=T, seed=seed, V=V, outcome_coefficients={
                    "beta0": 0.5, "rho": 0.5, "beta1": b1, "beta2": -0.3, "beta_C": 0.2})
                s = synth.generate(spec).series
                m = SsmSpec.build(s.schema, DagConfig(), OUTCOME, regimes={"beta1": "periodic"})
                found = fit_model(m, s).change_points.get("beta1", ())
                if change:
                    hits += any(abs(c - cp) <= window for c in found)
                else:
                    spurious += bool(found)
        print(f"V={V:<5} detected {hits / reps:.2f}  spurious {spurious / reps:.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="study", required=True)
    c = sub.add_parser("coverage")
    c.add_argument("--reps", type=int, default=200)
    c.add_argument("--T", type=int, default=600)
    c.add_argument("--level", type=float, default=0.90)
    p = sub.add_parser("changepoint")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--T", type=int, default=600)
    p.add_argument("--V", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    p.add_argument("--window", type=int, default=21)
    args = ap.parse_args()
    t0 = time.perf_counter()
    if args.study == "coverage":
        coverage(args.reps, args.T, args.level)
    else:
        changepoint(args.reps, args.T, args.V, args.window)
    print(f"({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
