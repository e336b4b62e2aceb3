"""Outer objective traces of the alternating optimization.

Each outer iteration runs the offloading LP sequence, the beamforming SOCP
sequence and the resource program once; the max latency never goes up.
The AO runs here without the restart from the benchmarks, so a seed may
stay at the all-local start (2.1333 s): with tiny initial rates, offloading
looks worse than computing locally and the AO stops in that stationary
point. ``run_all_schemes`` avoids this by restarting from the best
benchmark. Run with ``python3 demos/02_convergence.py``.
"""

from iccs.orchestrator import RunConfig, run_scheme

cfg = RunConfig.desk()
for seed in range(5):
    r = run_scheme(cfg, seed, "proposed")
    if r.failed:
        print(f"seed {seed}: no sensing-feasible start")
        continue
    trace = " -> ".join(f"{v:.4f}" for v in r.trace)
    print(f"seed {seed}: {trace}  (1% change reached at iteration {r.iterations_to_tol})")
    for i, t in enumerate(r.offload_traces):
        print(f"    offload pass {i}: merit {t.objective[0]:.4f} -> {t.objective[-1]:.4f} "
              f"in {len(t.objective) - 1} steps")
