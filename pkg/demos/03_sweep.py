"""A small Monte-Carlo sweep over the cloud capacity.

Every sweep point reuses the same seeds, so the schemes are compared on the
same networks. Run with ``python3 demos/03_sweep.py [trials]``; the CLI
equivalent is ``python3 -m iccs sweep --axis F_CC_max``.
"""

import sys

from iccs.orchestrator import RunConfig, emit_csv, monte_carlo

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 6
cfg = RunConfig.desk(trials=trials)
rows, _ = monte_carlo(cfg, "F_CC_max", (3e9, 1e10, 3e10))
print(f"{'F_CC_max':>10} {'scheme':>9} {'mean (s)':>9} {'stderr':>8} {'n':>3}")
for r in rows:
    print(f"{r.sweep_value:>10.0e} {r.scheme:>9} {r.mean_latency_s:>9.4f} {r.stderr_s:>8.4f} {r.n_trials:>3}")
emit_csv(rows, "demo_sweep_F_CC_max.csv")
print("wrote demo_sweep_F_CC_max.csv")
