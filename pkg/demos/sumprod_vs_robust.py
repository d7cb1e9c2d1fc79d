"""Partial beliefs under slow, uneven message delivery.

Both layers run on the same 20-node chain with per-edge delays of 1 to 10
rounds.  Sum-product beliefs are frequently not valid densities and its
estimates are poor until the very end, while every robust belief is a valid
density whose error drifts toward the global value.
"""
import random

import numpy as np

from distinfer.harness.calibration import gen_calibration
from distinfer.harness.metrics import rms
from distinfer.harness.oracle import oracle_posterior
from distinfer.harness.static import deploy, run_scripted


def main(n=20, seed=3, max_delay=10):
    cal = gen_calibration(n, seed=seed)
    rng = random.Random(seed)
    adj = {i: set() for i in cal.nodes}
    for a, b in zip(cal.nodes, cal.nodes[1:]):
        adj[a].add(b)
        adj[b].add(a)
    delays = {(i, j): rng.randint(1, max_delay) for i in adj for j in adj[i]}

    def observe(r, layers):
        est = {i: layers[i].estimate(cal.targets[i]) for i in cal.nodes}
        bad = sum(v is None for v in est.values())
        return (rms(est, cal.true_bias) if bad < n else np.nan), bad

    traces = {k: run_scripted(deploy(cal.model, k), adj, delays, observe=observe).rounds
              for k in ("robust", "sumprod")}
    full = oracle_posterior(cal.model)
    g = rms({i: full.mean_of(cal.targets[i]) for i in cal.nodes}, cal.true_bias)
    loc = rms({i: oracle_posterior(cal.model, [f"M{i}"]).mean_of(cal.targets[i]) for i in cal.nodes},
              cal.true_bias)
    print(f"rms global {g:.3f}, rms local {loc:.3f}")
    print(f"{'round':>5} {'robust':>8} {'sumprod':>8} {'invalid':>7}")
    rounds = max(len(t) for t in traces.values())
    for r in range(0, rounds, 5):
        rb = traces["robust"][min(r, len(traces["robust"]) - 1)]
        sp = traces["sumprod"][min(r, len(traces["sumprod"]) - 1)]
        print(f"{r + 1:>5} {rb[0]:8.3f} {sp[0]:8.3f} {sp[1]:>7}")


if __name__ == "__main__":
    main()
