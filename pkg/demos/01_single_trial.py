"""One desk-scale network, all four schemes side by side.

Run with ``python3 demos/01_single_trial.py [seed]``.
"""

import sys

from iccs.orchestrator import SCHEMES, RunConfig, build_instance, run_all_schemes

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
cfg = RunConfig.desk()
inst = build_instance(cfg, seed)
print(f"seed {seed}: {inst.K} vehicles, {inst.M} APs, serving sets "
      f"{[list(map(int, s)) for s in inst.ch.serving_sets]}")

# benchmarks run first so the proposed scheme can start over from the best of them
results = run_all_schemes(cfg, seed)
for name in SCHEMES:
    r = results[name]
    if r.failed:
        print(f"{name:>9}: failed ({'; '.join(r.warnings)})")
        continue
    rep = r.report
    print(f"{name:>9}: max latency {rep.max_latency:.4f} s after {r.iterations} outer iterations"
          f" ({r.wall_time:.1f} s)")
    print(f"{'':>11}per vehicle {rep.total.round(4).tolist()}")

best = results["proposed"]
if not best.failed:
    off = best.state.offload
    tiers = ["local" if b + c == 0 else ("MEC" if b > 0.5 else "cloud") for b, c in zip(off.xb, off.xc)]
    print("proposed tier per vehicle:", tiers)
    if best.restarted_from:
        print(f"(the AO continued from the {best.restarted_from} benchmark's end point)")
