"""Compare the proposed scheme with exhaustive pattern search on two vehicles and two APs.

Run with ``python3 demos/04_oracle.py``; expect roughly ten seconds per seed.
"""

from dataclasses import replace

from iccs.orchestrator import BENCHMARKS, RunConfig, brute_force_oracle, run_all_schemes

cfg = RunConfig.desk()
cfg.scenario = replace(cfg.scenario, num_aps=2, num_vehicles=2, serving_set_size=2)
for seed in range(3):
    out = run_all_schemes(cfg, seed)
    if out["proposed"].failed:
        print(f"seed {seed}: no sensing-feasible start")
        continue
    oracle, pattern = brute_force_oracle(cfg, seed, return_pattern=True)
    prop = out["proposed"].max_latency
    bench = min(out[b].max_latency for b in BENCHMARKS)
    print(f"seed {seed}: oracle {oracle:.5f} <= proposed {prop:.5f} <= best benchmark {bench:.5f}")
    print(f"          best pattern {pattern}")
