#!/usr/bin/env python3
"""Simulated log-likelihood kernel: numba vs pure numpy.

Usage: python3 benchmarks/bench_kernels.py [--n 648] [--draws 200] [--runs 5] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from crashvol import _config, _kernels
from crashvol.likelihood import LikelihoodProblem, ModelSpec, ParameterVector, Term, make_draws
from crashvol.synth import GroundTruth, bernoulli, normal, simulate_events, uniform


def fixture(n, draws):
    spec = ModelSpec((
        Term("x1", "MC", True, "normal", ("z",), ("h",)),
        Term("x2", "PRC", True, "normal"),
        Term("x3", "SC"),
        Term("z", "SC"),
    ))
    theta = [0.2, -0.5, -1.0, 0.8, -0.4, 0.5, 0.3, 0.6, 0.4, -0.3, 0.2]
    gens = {"x1": normal(0, 1), "x2": uniform(0, 2), "x3": normal(0, 1), "z": bernoulli(0.5), "h": bernoulli(0.3)}
    data = simulate_events(GroundTruth(spec, theta, gens, n, seed=1))
    _, u = make_draws(spec, n, draws)
    return LikelihoodProblem(data, spec, u), ParameterVector(spec, theta)


def run(kernel, prob, theta, runs):
    d = prob.design
    args = (
        d.chosen, d.weights, d.X, d.term_out, d.term_rand, d.const_out, d.rand_term,
        d.Z, d.z_owner, d.B, d.b_owner, prob.V, d.n_out, *map(np.ascontiguousarray, theta.parts()), True,
    )
    kernel(*args)  # warm-up / compile
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        ll, score = kernel(*args)
        times.append(time.perf_counter() - t0)
    return {"min": min(times), "mean": sum(times) / len(times), "loglik": float(ll.sum()),
            "score_sum": float(score.sum())}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=648)
    ap.add_argument("--draws", type=int, default=200)
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()

    prob, theta = fixture(args.n, args.draws)
    results = {"n": args.n, "draws": args.draws, "numpy": run(_kernels.simulated_loglik_terms_numpy, prob, theta, args.runs)}
    if _config.HAVE_NUMBA:
        results["numba"] = run(_kernels.simulated_loglik_terms_numba, prob, theta, args.runs)
        results["speedup"] = results["numpy"]["min"] / results["numba"]["min"]
        results["max_abs_ll_diff"] = abs(results["numpy"]["loglik"] - results["numba"]["loglik"])

    print(f"N={args.n} R={args.draws}  (LL + score, best of {args.runs})")
    for name in ("numpy", "numba"):
        if name in results:
            r = results[name]
            print(f"  {name:<6} {r['min'] * 1e3:9.2f} ms   LL={r['loglik']:.10f}")
    if "speedup" in results:
        print(f"  speedup {results['speedup']:.1f}x, |dLL|={results['max_abs_ll_diff']:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
