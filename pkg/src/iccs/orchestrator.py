"""Alternating optimization driver, benchmark schemes, oracle and Monte-Carlo sweeps."""

from __future__ import annotations

import copy
import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import beamform, conic, offload, resources
from .metrics import Instance, LatencyReport, OffloadMatrix, State, TaskParams
from .scenario import PathLossParams, ScenarioConfig, make_scenario

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "local", "mec", "cc")
BENCHMARKS = ("local", "mec", "cc")
AXES = ("L", "F_CC_max", "R_f_max", "SINR_req_dB", "N_t")
# sweep points used when a config gives none
DEFAULT_VALUES = {
    "L": (1, 2, 3),
    "F_CC_max": (3e9, 1e10, 3e10),
    "R_f_max": (1e8, 5e8, 2e9),
    "SINR_req_dB": (0.0, 1.0, 5.0),
    "N_t": (4, 8),
}


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    pathloss: PathLossParams = field(default_factory=PathLossParams)
    task: TaskParams = field(default_factory=TaskParams)
    zeta_offload: float = 0.01
    zeta_beam: float = 1e-3
    zeta_outer: float = 0.01
    max_outer: int = 30
    max_offload_iter: int = 20
    max_beam_iter: int = 10
    scheme: str = "proposed"
    axis: str | None = None
    values: tuple = ()
    trials: int = 20
    seed: int = 0  # trial i uses seed + i
    out: str | None = None
    workers: int = 1
    dominance_restart: bool = True

    def __post_init__(self):
        for name in ("zeta_offload", "zeta_beam", "zeta_outer"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.axis is not None and self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")

    @classmethod
    def desk(cls, **kw):
        """CI-scale configuration (M=4, N=4, K=3, N_t=N_r=4, L=2, 20 trials)."""
        return cls(scenario=ScenarioConfig.desk(), **kw)

    def with_axis_value(self, axis, value) -> "RunConfig":
        cfg = copy.deepcopy(self)
        if axis == "L":
            cfg.scenario = replace(cfg.scenario, serving_set_size=int(value))
        elif axis == "N_t":
            cfg.scenario = replace(cfg.scenario, tx_antennas=int(value))
        elif axis == "F_CC_max":
            cfg.task = replace(cfg.task, f_cc_max=float(value))
        elif axis == "R_f_max":
            cfg.task = replace(cfg.task, r_f_max=float(value))
        elif axis == "SINR_req_dB":
            cfg.task = replace(cfg.task, sinr_req=10 ** (float(value) / 10))
        else:
            raise ValueError(f"unknown axis {axis!r}")
        return cfg


@dataclass
class TrialResult:
    seed: int
    scheme: str
    converged: bool
    failed: bool
    trace: list
    report: LatencyReport | None
    slacks: list
    wall_time: float
    iterations: int = 0
    iterations_to_tol: int | None = None
    warnings: list = field(default_factory=list)
    offload_traces: list = field(default_factory=list)
    beam_traces: list = field(default_factory=list)
    solves: list = field(default_factory=list)  # (status, residuals) per conic solve
    state: State | None = None
    restarted_from: str | None = None

    @property
    def max_latency(self) -> float:
        return self.report.max_latency if self.report is not None else float("nan")


def build_instance(cfg: RunConfig, seed) -> Instance:
    geom, ch = make_scenario(cfg.scenario, cfg.pathloss, seed=seed)
    return Instance(cfg.scenario, cfg.task, geom, ch)


def _failed(seed, scheme, why, t0):
    return TrialResult(seed, scheme, False, True, [], None, [], time.perf_counter() - t0,
                       warnings=[why])


def _initial_state(inst: Instance, scheme):
    plan = resources.equal_share_plan(inst)
    beams = beamform.initial_beams(inst, plan)
    if beams is None:
        return None
    state = State(OffloadMatrix.local(inst.K, inst.M), beams, plan)
    if scheme in ("mec", "cc"):
        rates = inst.rates(beams)
        plan = offload.standby_plan(inst, state)
        state = State(offload.forced_tier(inst, plan, rates, scheme), beams, plan)
    return state


def _outer_step(inst, state, scheme, cfg: RunConfig, res: TrialResult):
    """One offload -> beamform -> resources pass; every block keeps or lowers the objective."""
    if scheme == "proposed":
        state, otr = offload.run_algorithm1(inst, state, zeta=cfg.zeta_offload,
                                            max_iter=cfg.max_offload_iter)
        res.offload_traces.append(otr)
    elif scheme in ("mec", "cc"):
        state, otr = offload.run_forced(inst, state, scheme)
        res.offload_traces.append(otr)
    beams, btr, _ = beamform.run_algorithm2(inst, state, zeta=cfg.zeta_beam,
                                            max_iter=cfg.max_beam_iter)
    res.beam_traces.append(btr)
    if btr.warning:
        res.warnings.append(f"beam: {btr.warning}")
    state = State(state.offload, beams, state.plan)
    out = resources.solve_resources(inst, state)
    if out.warning:
        res.warnings.append(f"resources: {out.warning}")
    return State(state.offload, state.beams, out.plan)


def _ao_loop(inst, state, scheme, cfg, res: TrialResult, budget):
    obj = inst.objective(state)
    converged = False
    for _ in range(budget):
        state = _outer_step(inst, state, scheme, cfg, res)
        new = inst.objective(state)
        res.trace.append(new)
        res.iterations += 1
        change = abs(obj - new) / max(new, 1e-300)
        if res.iterations_to_tol is None and change < 1e-2:
            res.iterations_to_tol = res.iterations
        obj = new
        if change < cfg.zeta_outer:
            converged = True
            break
    return state, converged


def run_scheme(cfg: RunConfig, seed, scheme="proposed", incumbents=None) -> TrialResult:
    """Solve one trial with ``scheme``.

    For the proposed scheme, ``incumbents`` may map benchmark names to their
    finished results on the same seed; when one of them ends lower, the AO
    continues from that (feasible) point.
    """
    t0 = time.perf_counter()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    with conic.recording() as solves:
        inst = build_instance(cfg, seed)
        state = _initial_state(inst, scheme)
        if state is None:
            return _failed(seed, scheme, "no sensing-feasible initial beamformer", t0)
        res = TrialResult(seed, scheme, False, False, [inst.objective(state)], None, [], 0.0)
        state, converged = _ao_loop(inst, state, scheme, cfg, res, cfg.max_outer)
        if scheme == "proposed" and incumbents and cfg.dominance_restart:
            done = [r for r in incumbents.values() if r is not None and not r.failed
                    and r.state is not None]
            if done:
                best = min(done, key=lambda r: r.max_latency)
                if best.max_latency < inst.objective(state):
                    state = best.state.copy()
                    res.trace.append(inst.objective(state))
                    res.restarted_from = best.scheme
                    state, converged = _ao_loop(inst, state, scheme, cfg, res, cfg.max_outer)
        res.converged = converged
        res.state = state
        res.report = inst.report(state)
        res.slacks = inst.violations(state)
    res.solves = list(solves)
    res.wall_time = time.perf_counter() - t0
    return res


def run_ao(cfg: RunConfig, seed, incumbents=None) -> TrialResult:
    return run_scheme(cfg, seed, "proposed", incumbents)


def run_benchmark(cfg: RunConfig, seed, scheme) -> TrialResult:
    if scheme not in BENCHMARKS:
        raise ValueError(f"benchmark must be one of {BENCHMARKS}")
    return run_scheme(cfg, seed, scheme)


def run_all_schemes(cfg: RunConfig, seed, schemes=SCHEMES) -> dict:
    """Benchmarks first, then the proposed scheme with them as incumbents."""
    out = {s: run_benchmark(cfg, seed, s) for s in BENCHMARKS if s in schemes}
    if "proposed" in schemes:
        out["proposed"] = run_ao(cfg, seed, incumbents=out)
    return out


# ------------------------------------------------------------ oracle ----

def _patterns(inst: Instance):
    """Per vehicle: local, or a tier with any non-empty support inside M_k."""
    per = []
    for k in range(inst.K):
        S = [int(m) for m in inst.ch.serving_sets[k]]
        opts = [("local", ())]
        for tier in ("mec", "cc"):
            for r in range(1, len(S) + 1):
                for sup in itertools.combinations(S, r):
                    opts.append((tier, sup))
        per.append(opts)
    return list(itertools.product(*per))


def _split_on_support(inst, plan, rates, pattern):
    cm, cc, comp = offload.tier_costs(inst, plan, rates)
    off = OffloadMatrix.local(inst.K, inst.M)
    for k, (tier, sup) in enumerate(pattern):
        if tier == "local":
            continue
        idx = np.array(sup)
        if np.any(rates[k, idx] <= 0):
            return None
        coef = cm[k, idx] if tier == "mec" else cc[k, idx]
        if not np.all(np.isfinite(coef)):
            return None
        x, _ = offload.tier_split_lp(coef, 0.0 if tier == "mec" else comp[k])
        if x is None:
            return None
        (off.mec if tier == "mec" else off.cc)[k, idx] = x
    return off


def _pattern_value(inst, cfg, pattern, start: State, zeta, max_outer):
    """Fixed-pattern AO over (split, beams, resources); inf if the pattern is unusable."""
    state = start.copy()
    best = float("inf")
    for _ in range(max_outer):
        rates = inst.rates(state.beams)
        plan = offload.standby_plan(inst, state)
        off = _split_on_support(inst, plan, rates, pattern)
        if off is None:
            return best
        # the exact split is optimal for the frozen rates and plan
        state = State(off, state.beams, plan)
        beams, _, _ = beamform.run_algorithm2(inst, state, zeta=cfg.zeta_beam,
                                              max_iter=cfg.max_beam_iter)
        state = State(state.offload, beams, state.plan)
        state = State(state.offload, state.beams, resources.solve_resources(inst, state).plan)
        new = inst.objective(state)
        if new == float("inf"):
            return best
        done = np.isfinite(best) and abs(best - new) / max(new, 1e-300) < zeta
        best = min(best, new)
        if done:
            break
    return best


def brute_force_oracle(cfg: RunConfig, seed, zeta=1e-3, max_outer=40, return_pattern=False):
    """Minimum max-latency over every tier/support pattern of a tiny instance.

    Each pattern is solved with the within-tier split, beamformer and
    resource blocks alternated to a tight tolerance. Returns nan when no
    sensing-feasible start exists.
    """
    inst = build_instance(cfg, seed)
    if inst.K > 2 or inst.M > 2:
        raise ValueError("the oracle is limited to K <= 2 and M <= 2")
    start = _initial_state(inst, "proposed")
    if start is None:
        return (float("nan"), None) if return_pattern else float("nan")
    best, arg = float("inf"), None
    for pattern in _patterns(inst):
        v = _pattern_value(inst, cfg, pattern, start, zeta, max_outer)
        if v < best:
            best, arg = v, pattern
    return (best, arg) if return_pattern else best


# ------------------------------------------------------- Monte Carlo ----

@dataclass
class SweepRow:
    sweep_value: float
    scheme: str
    mean_latency_s: float
    stderr_s: float
    n_trials: int
    n_failed: int


CSV_COLUMNS = ("sweep_value", "scheme", "mean_latency_s", "stderr_s", "n_trials", "n_failed")
TRACE_COLUMNS = ("seed", "iteration", "objective_s")


def _seed_job(args):
    cfg, seed, schemes = args
    return seed, run_all_schemes(cfg, seed, schemes)


def run_seeds(cfg: RunConfig, seeds, schemes=SCHEMES):
    """All schemes on every seed; returns {seed: {scheme: TrialResult}} in seed order."""
    jobs = [(cfg, s, schemes) for s in seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            done = dict(ex.map(_seed_job, jobs))
    else:
        done = dict(map(_seed_job, jobs))
    return {s: done[s] for s in sorted(done)}


def monte_carlo(cfg: RunConfig, axis=None, values=None, schemes=SCHEMES, common_seeds=True):
    """Mean and standard error of the max latency per sweep value and scheme.

    With ``common_seeds`` the averages use only the seeds that succeeded for
    every scheme at every sweep value, so all points are paired.
    Returns ``(rows, results)`` where ``results[value][seed][scheme]`` holds the trials.
    """
    axis = axis or cfg.axis
    values = list(values if values is not None else (cfg.values or [None]))
    seeds = [cfg.seed + i for i in range(cfg.trials)]
    results = {}
    for v in values:
        cv = cfg if axis is None or v is None else cfg.with_axis_value(axis, v)
        results[v] = run_seeds(cv, seeds, schemes)

    def ok(r):
        return r is not None and not r.failed and np.isfinite(r.max_latency)

    usable = set(seeds)
    if common_seeds:
        for v in values:
            for s in seeds:
                if not all(ok(results[v][s].get(sc)) for sc in schemes):
                    usable.discard(s)
    rows = []
    for v in values:
        for sc in schemes:
            lat = [results[v][s][sc].max_latency for s in seeds
                   if s in usable and ok(results[v][s].get(sc))] if common_seeds else \
                [results[v][s][sc].max_latency for s in seeds if ok(results[v][s].get(sc))]
            n_failed = sum(1 for s in seeds if not ok(results[v][s].get(sc)))
            lat = np.asarray(lat, float)
            mean = float(lat.mean()) if lat.size else float("nan")
            se = float(lat.std(ddof=1) / np.sqrt(lat.size)) if lat.size > 1 else 0.0
            rows.append(SweepRow(float("nan") if v is None else float(v), sc, mean, se,
                                 int(lat.size), n_failed))
    return rows, results


def emit_csv(rows, path):
    """Write sweep rows; an empty list gives a header-only file."""
    order = {s: i for i, s in enumerate(SCHEMES)}
    rows = sorted(rows, key=lambda r: (r.sweep_value, order.get(r.scheme, len(order)), r.scheme))
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow([repr(r.sweep_value), r.scheme, repr(r.mean_latency_s),
                            repr(r.stderr_s), r.n_trials, r.n_failed])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path):
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [SweepRow(float(d["sweep_value"]), d["scheme"], float(d["mean_latency_s"]),
                         float(d["stderr_s"]), int(d["n_trials"]), int(d["n_failed"]))
                for d in rd]


def emit_traces(results, path):
    """Outer objective traces, one row per (seed, iteration), sorted by seed."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in sorted(results, key=lambda r: r.seed):
                for i, v in enumerate(r.trace):
                    w.writerow([r.seed, i, repr(float(v))])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
