"""Execution frequencies and fronthaul shares with offloading and beams frozen.

Frequencies enter the conic program in GHz and fronthaul shares in Mbit/s.
With f in GHz the dynamic CPU power is ``kappa * 1e27 * f^3`` watts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .metrics import ACTIVE_THRESHOLD, Instance, ResourcePlan, State, received_power_watts

log = logging.getLogger(__name__)

MBIT = 1e6
GHZ = 1e9
FREQ_FLOOR = 1e3  # Hz, lower bound on active entries


@dataclass
class ResourceIterate:
    plan: ResourcePlan
    t_mec: np.ndarray
    t_cc: np.ndarray
    t: float


@dataclass
class ResourceLayout:
    f_loc: dict
    f_mec: dict
    f_cc: dict
    r_f: dict
    t_mec: dict
    t_cc: dict
    t: int


@dataclass
class ResourceOutcome:
    plan: ResourcePlan
    objective: float
    accepted: bool
    status: str
    residuals: dict = field(default_factory=dict)
    warning: str = ""


def equal_share_plan(inst: Instance, margin=0.999) -> ResourcePlan:
    """Feasible plan splitting every capacity equally over the vehicles that can use it."""
    task, ch = inst.task, inst.ch
    K, M = inst.K, inst.M
    mask = inst.serving_mask()
    n_m = np.maximum(mask.sum(axis=0), 1)
    F = np.broadcast_to(np.asarray(task.f_mec_max, float), (M,))
    P = np.broadcast_to(np.asarray(task.p_mec_max, float), (M,))
    kap = np.broadcast_to(np.asarray(task.kappa_mec, float), (M,))
    Rf = np.broadcast_to(np.asarray(task.r_f_max, float), (M,))
    f_m = np.minimum(F / n_m, (margin * P / (n_m * kap)) ** (1.0 / 3.0))
    f_loc = np.minimum(task.vec("f_loc_max", K),
                       (margin * task.vec("p_max", K) / task.vec("kappa_loc", K)) ** (1.0 / 3.0))
    return ResourcePlan(
        f_loc=f_loc,
        f_mec=mask * f_m[None, :],
        f_cc=np.full(K, float(task.f_cc_max) / K),
        r_f=mask * (Rf / n_m)[None, :],
    )


def _transmit_watts(inst: Instance, beams):
    g = beams.aggregate
    return np.sum(np.abs(g) ** 2, axis=1) * inst.ch.power_unit


def build_resource_problem(inst: Instance, state: State, rates):
    """Convex program in (f_loc, f_mec, f_cc, r_f, t_mec, t_cc, t)."""
    task = inst.task
    K, M = inst.K, inst.M
    off = state.offload
    xb, xc = off.xb, off.xc
    D = task.vec("task_bits", K) / MBIT
    Dg = task.vec("task_bits", K) / GHZ  # alpha * Dg is in Gcycles
    a_loc = task.vec("alpha_loc", K)
    a_mec = np.broadcast_to(np.asarray(task.alpha_mec, float), (M,))
    a_cc = task.vec("alpha_cc", K)
    k_loc = task.vec("kappa_loc", K) * GHZ ** 3
    k_mec = np.broadcast_to(np.asarray(task.kappa_mec, float), (M,)) * GHZ ** 3
    F_mec = np.broadcast_to(np.asarray(task.f_mec_max, float), (M,)) / GHZ
    P_mec = np.broadcast_to(np.asarray(task.p_mec_max, float), (M,))
    R_f = np.broadcast_to(np.asarray(task.r_f_max, float), (M,)) / MBIT
    floor = FREQ_FLOOR / GHZ
    Rm = rates / MBIT

    p_left = task.vec("p_max", K) - _transmit_watts(inst, state.beams)
    recv = received_power_watts(state.beams, inst.ch)

    bld = conic.ConeBuilder()
    t = bld.var(1, "t")[0]
    bld.objective(t, 1.0)
    lay = ResourceLayout({}, {}, {}, {}, {}, {}, t)

    def recip(f_idx):
        """z >= 1/f as z f >= 1; returns z."""
        z = bld.var(1)[0]
        conic.encode_hyperbolic(bld, bld.row([(z, 1.0)]), bld.row([(f_idx, 1.0)]), bld.row([], 1.0))
        return z

    def var_between(lo, hi):
        x = bld.var(1)[0]
        bld.geq(bld.row([(x, 1.0)], -lo))
        bld.geq(bld.row([(x, -1.0)], hi))
        return x

    epi = {k: [(t, 1.0)] for k in range(K)}
    for k in range(K):
        w_loc = max(1.0 - xb[k] - xc[k], 0.0)
        if w_loc > ACTIVE_THRESHOLD:
            if p_left[k] <= 0:
                raise conic.InvalidProblemError(f"vehicle {k} has no power left for computing")
            cap = task.vec("f_loc_max", K)[k] / GHZ
            f = var_between(cap if task.pin_local_freq else floor, cap)
            lay.f_loc[k] = f
            conic.encode_cube_bound(bld, bld.row([(f, 1.0)]), bld.row([], p_left[k] / k_loc[k]))
            z = recip(f)
            epi[k].append((z, -w_loc * a_loc[k] * Dg[k]))

        if xb[k] > ACTIVE_THRESHOLD:
            tm = bld.var(1)[0]
            lay.t_mec[k] = tm
            epi[k].append((tm, -xb[k]))
            for m in range(M):
                b = off.mec[k, m]
                if b <= ACTIVE_THRESHOLD:
                    continue
                if Rm[k, m] <= 0:
                    raise conic.InvalidProblemError(f"b[{k},{m}] active on a zero-rate link")
                f = var_between(floor, F_mec[m])
                lay.f_mec[(k, m)] = f
                z = recip(f)
                bld.geq(bld.row([(tm, 1.0), (z, -a_mec[m] * b * Dg[k])], -b * D[k] / Rm[k, m]))

        if xc[k] > ACTIVE_THRESHOLD:
            tc = bld.var(1)[0]
            lay.t_cc[k] = tc
            epi[k].append((tc, -xc[k]))
            f = var_between(floor, float(task.f_cc_max) / GHZ)
            lay.f_cc[k] = f
            zc = recip(f)
            for m in range(M):
                c = off.cc[k, m]
                if c <= ACTIVE_THRESHOLD:
                    continue
                if Rm[k, m] <= 0:
                    raise conic.InvalidProblemError(f"c[{k},{m}] active on a zero-rate link")
                r = var_between(FREQ_FLOOR / MBIT, R_f[m])
                lay.r_f[(k, m)] = r
                y = recip(r)
                bld.geq(bld.row([(tc, 1.0), (y, -c * D[k]), (zc, -a_cc[k] * Dg[k])],
                                -c * D[k] / Rm[k, m]))
        bld.geq(bld.row(epi[k]))

    for m in range(M):
        users = [k for k in range(K) if (k, m) in lay.f_mec]
        if users:
            bld.geq(bld.row([], F_mec[m]), bld.row([(lay.f_mec[(k, m)], 1.0) for k in users]))
            budget = P_mec[m] - float(np.sum((off.cc[:, m] > ACTIVE_THRESHOLD) * recv[:, m]))
            if budget <= 0:
                raise conic.InvalidProblemError(f"AP {m} has no power left for computing")
            s = [bld.var(1)[0] for _ in users]
            for k, sk in zip(users, s):
                conic.encode_cube_bound(bld, bld.row([(lay.f_mec[(k, m)], 1.0)]), bld.row([(sk, 1.0)]))
            bld.geq(bld.row([], budget / k_mec[m]), bld.row([(sk, 1.0) for sk in s]))
        fh = [lay.r_f[(k, m)] for k in range(K) if (k, m) in lay.r_f]
        if fh:
            bld.geq(bld.row([], R_f[m]), bld.row([(r, 1.0) for r in fh]))
    if lay.f_cc:
        bld.geq(bld.row([], float(task.f_cc_max) / GHZ),
                bld.row([(f, xc[k]) for k, f in lay.f_cc.items()]))
    return bld.build(), lay


def plan_from_solution(inst: Instance, state: State, x, lay: ResourceLayout) -> ResourcePlan:
    K, M = inst.K, inst.M
    task = inst.task
    f_loc = np.zeros(K)
    p_left = np.maximum(task.vec("p_max", K) - _transmit_watts(inst, state.beams), 0.0)
    # vehicles that do not compute locally keep the largest admissible frequency
    idle = np.minimum(task.vec("f_loc_max", K),
                      (p_left / task.vec("kappa_loc", K)) ** (1.0 / 3.0) * (1 - 1e-9))
    if task.pin_local_freq:
        idle = task.vec("f_loc_max", K)
    for k in range(K):
        f_loc[k] = x[lay.f_loc[k]] * GHZ if k in lay.f_loc else idle[k]
    f_mec = np.zeros((K, M))
    r_f = np.zeros((K, M))
    f_cc = np.zeros(K)
    for (k, m), i in lay.f_mec.items():
        f_mec[k, m] = x[i] * GHZ
    for (k, m), i in lay.r_f.items():
        r_f[k, m] = x[i] * MBIT
    for k, i in lay.f_cc.items():
        f_cc[k] = x[i] * GHZ
    # clip solver round-off at the box bounds
    f_loc = np.minimum(f_loc, task.vec("f_loc_max", K))
    f_mec = np.minimum(f_mec, np.broadcast_to(np.asarray(task.f_mec_max, float), (M,))[None, :])
    return ResourcePlan(f_loc, f_mec, f_cc, r_f)


def solve_resources(inst: Instance, state: State, rates=None, tol=1e-8) -> ResourceOutcome:
    """Optimal plan for the frozen offloading/beams; keeps the incoming plan if not better."""
    if rates is None:
        rates = inst.rates(state.beams)
    incoming = inst.objective(state, rates)
    try:
        prob, lay = build_resource_problem(inst, state, rates)
    except conic.InvalidProblemError as exc:
        return ResourceOutcome(state.plan, incoming, False, "structure", warning=str(exc))
    sol = conic.solve(prob, tol=tol)
    if sol.status not in ("optimal", "inaccurate"):
        return ResourceOutcome(state.plan, incoming, False, sol.status,
                               warning=f"resource solve {sol.status}")
    plan = plan_from_solution(inst, state, sol.x, lay)
    cand = State(state.offload, state.beams, plan)
    obj = inst.objective(cand, rates)
    viol = [v for v in inst.violations(cand, require_binary=False) if v.constraint != "sensing"]
    if viol or not obj <= incoming:
        return ResourceOutcome(state.plan, incoming, False, sol.status,
                               residuals=sol.residuals if sol.ok else {},
                               warning="candidate rejected" if viol else "")
    return ResourceOutcome(plan, obj, True, sol.status,
                           residuals=sol.residuals if sol.ok else {})
