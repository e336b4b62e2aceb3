"""Command line entry point: ``python3 -m iccs {run,sweep,convergence,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import orchestrator as orc
from .config import ConfigError, load_config


def _base_config(args) -> orc.RunConfig:
    # without a file the desk-scale setup is used; a file overrides the full-scale defaults
    cfg = load_config(args.config) if args.config else orc.RunConfig.desk()
    over = {}
    for name in ("seed", "trials", "scheme", "axis", "out"):
        val = getattr(args, name, None)
        if val is not None:
            over[name] = val
    return replace(cfg, **over)


def _report_dict(res: orc.TrialResult) -> dict:
    out = {"seed": res.seed, "scheme": res.scheme, "failed": res.failed,
           "converged": res.converged, "iterations": res.iterations,
           "wall_time_s": round(res.wall_time, 4), "warnings": res.warnings}
    if res.report is not None:
        r = res.report
        out.update(max_latency_s=r.max_latency, total_s=r.total.tolist(),
                   local_s=r.local.tolist(), mec_s=r.mec.tolist(), cc_s=r.cc.tolist(),
                   trace_s=[float(v) for v in res.trace],
                   violations=[(v.constraint, list(v.index), v.slack) for v in res.slacks])
        if res.state is not None:
            out.update(x_mec=res.state.offload.xb.tolist(), x_cc=res.state.offload.xc.tolist())
    return out


def cmd_run(cfg: orc.RunConfig) -> int:
    if cfg.scheme == "proposed" and cfg.dominance_restart:
        res = orc.run_all_schemes(cfg, cfg.seed)["proposed"]
    else:
        res = orc.run_scheme(cfg, cfg.seed, cfg.scheme)
    d = _report_dict(res)
    text = json.dumps(d, indent=2)
    print(text)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text + "\n")
    return 1 if res.failed else 0


def cmd_sweep(cfg: orc.RunConfig) -> int:
    if cfg.axis is None:
        print("sweep needs --axis (one of %s)" % ", ".join(orc.AXES), file=sys.stderr)
        return 2
    values = cfg.values or orc.DEFAULT_VALUES[cfg.axis]
    schemes = orc.SCHEMES if cfg.scheme == "proposed" else (cfg.scheme,)
    rows, _ = orc.monte_carlo(cfg, cfg.axis, values, schemes)
    path = cfg.out or f"sweep_{cfg.axis}.csv"
    orc.emit_csv(rows, path)
    print(f"{'value':>12} {'scheme':>9} {'mean_s':>10} {'stderr_s':>10} {'n':>4} {'failed':>6}")
    for r in rows:
        print(f"{r.sweep_value:>12.4g} {r.scheme:>9} {r.mean_latency_s:>10.5f} "
              f"{r.stderr_s:>10.5f} {r.n_trials:>4} {r.n_failed:>6}")
    print(f"wrote {path}")
    return 0


def cmd_convergence(cfg: orc.RunConfig) -> int:
    seeds = [cfg.seed + i for i in range(cfg.trials)]
    results = [orc.run_scheme(cfg, s, cfg.scheme) for s in seeds]
    ok = [r for r in results if not r.failed]
    path = cfg.out or "convergence.csv"
    orc.emit_traces(ok, path)
    for r in results:
        if r.failed:
            print(f"seed {r.seed}: failed ({'; '.join(r.warnings)})")
        else:
            print(f"seed {r.seed}: " + " ".join(f"{v:.5f}" for v in r.trace))
    print(f"wrote {path}")
    return 0


def cmd_oracle(cfg: orc.RunConfig) -> int:
    sc = cfg.scenario
    if sc.num_vehicles > 2 or sc.num_aps > 2:
        # exhaustive search is limited to two vehicles and two APs
        cfg = replace(cfg, scenario=replace(sc, num_vehicles=min(sc.num_vehicles, 2),
                                            num_aps=min(sc.num_aps, 2),
                                            serving_set_size=min(sc.serving_set_size, 2)))
        print("oracle: instance reduced to K, M <= 2", file=sys.stderr)
    rows = []
    for s in (cfg.seed + i for i in range(cfg.trials)):
        out = orc.run_all_schemes(cfg, s)
        if out["proposed"].failed:
            print(f"seed {s}: no sensing-feasible start")
            continue
        o = orc.brute_force_oracle(cfg, s)
        p = out["proposed"].max_latency
        b = min(out[k].max_latency for k in orc.BENCHMARKS)
        rows.append((s, o, p, b))
        print(f"seed {s}: oracle {o:.6f}  proposed {p:.6f}  best benchmark {b:.6f}")
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write("seed,oracle_s,proposed_s,best_benchmark_s\n")
            for s, o, p, b in rows:
                fh.write(f"{s},{o!r},{p!r},{b!r}\n")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "convergence": cmd_convergence,
            "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iccs", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"run": "single trial, prints the latency report",
             "sweep": "Monte-Carlo sweep over one axis, writes a CSV",
             "convergence": "outer objective traces, writes a CSV",
             "oracle": "brute-force comparison on a tiny instance (K, M <= 2)"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="first seed")
        p.add_argument("--trials", type=int, help="number of seeds")
        p.add_argument("--scheme", choices=orc.SCHEMES)
        p.add_argument("--axis", choices=orc.AXES)
        p.add_argument("--out", help="output path")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = _base_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    np.set_printoptions(precision=5)
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
