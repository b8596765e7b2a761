"""Simulate a study, fit it, and print a handful of effect estimates.

    python3 scripts/demo_pipeline.py --T 600 --seed 0
"""
import argparse

from nof1causal import gformula, synth
from nof1causal.diagnostics import positivity_report, step_response
from nof1causal.estimands import Request, estimate
from nof1causal.pipeline import fit_all


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--T", type=int, default=600)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--t", type=int, default=None, help="evaluation time (default: T - 40)")
    args = ap.parse_args()

    syn = synth.generate(synth.TruthSpec(T=args.T, seed=args.seed))
    fitted = fit_all(syn.series)
    frame = fitted.frame
    t = args.t or args.T - 40

    print("outcome model")
    for row in fitted.outcome.table():
        print(f"  {row['variable']:<8} {row['estimate']:+.3f}  [{row['lower']:+.3f}, {row['upper']:+.3f}]")

    print(f"\neffects at t={t}: estimate (truth)")
    for req in [Request("CE"), Request("LE", q=1), Request("LE", q=2), Request("TE", q=3),
                Request("GE", strategy=(1, 0, 1)), Request("cumDE"), Request("cumOE", horizon=30)]:
        est, lo, hi = estimate(frame, req, t)
        truth = req.evaluate(syn.truth.point(), t)
        print(f"  {req.label():<12} {est:+.3f}  [{lo:+.3f}, {hi:+.3f}]  ({truth:+.3f})")

    step = step_response(frame, t - 10, 10)
    print(f"\nstep response lags: {step.summary}")

    pos = positivity_report(syn.series, max_duration=7)
    print("positivity: " + ", ".join(f"p={r.p} {r.percentage:.0f}%" for r in pos.counts))

    ranked = gformula.recommend_strategy(frame, syn.series, t, 6, 3, pos, gformula.McConfig(K=200, B=50))
    print("\ntop strategies (lower outcome is better):")
    for r in ranked[:5]:
        print(f"  {''.join(map(str, r.strategy))}  {r.estimate:+.3f}")


if __name__ == "__main__":
    main()
