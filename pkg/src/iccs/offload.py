"""Offloading block: penalty relaxation of the binary tier choice solved as LPs.

Rates, frequencies and fronthaul shares are frozen. Inside the LPs task
sizes are in Mbit, rates and fronthaul shares in Mbit/s and frequencies in
GHz, so every latency row is in seconds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .metrics import (ACTIVE_THRESHOLD, Instance, OffloadMatrix, ResourcePlan, State,
                      max_latency, received_power_watts)

log = logging.getLogger(__name__)

MBIT = 1e6
GHZ = 1e9
TIERS = ("mec", "cc", "local")  # tie-break order


@dataclass
class PenaltyState:
    rho_b: np.ndarray  # (K,)
    rho_c: np.ndarray
    upsilon: float
    w_b: np.ndarray  # (K, M) step weights
    w_c: np.ndarray
    eps: float = 1e-3
    n: int = 0

    def __post_init__(self):
        if self.upsilon <= 0 or self.eps <= 0:
            raise ValueError("upsilon and eps must be positive")


@dataclass
class OffloadIterate:
    offload: OffloadMatrix
    t_mec: np.ndarray  # (K,) latency anchors per tier
    t_cc: np.ndarray
    t: float


@dataclass
class OffloadTrace:
    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    max_violation: list = field(default_factory=list)
    warning: str = ""
    pre_round_objective: float = float("nan")
    rounded_objective: float = float("nan")
    pre_round_sums: np.ndarray = None
    residuals: list = field(default_factory=list)

    def record(self, it, obj, viol):
        self.iteration.append(it)
        self.objective.append(float(obj))
        self.max_violation.append(float(viol))


# --------------------------------------------------- penalty pieces ----

def penalty(x):
    """G(x) = (1 - x) x, zero exactly at binary sums."""
    x = np.asarray(x, float)
    return (1.0 - x) * x


def penalty_update(state: PenaltyState, prev: OffloadMatrix) -> PenaltyState:
    xb, xc = prev.xb, prev.xc
    state.rho_b = state.upsilon * (1.0 - xb) * xb
    state.rho_c = state.upsilon * (1.0 - xc) * xc
    return state


def penalty_majorant(x_sum, anchor_sum):
    """Affine upper bound of G at ``x_sum`` that is tight at ``anchor_sum``."""
    a = float(anchor_sum)
    return a * a + (1.0 - 2.0 * a) * np.asarray(x_sum, float)


def bilinear_linearize(x, t, x0, t0):
    """First-order expansion of x * t around (x0, t0)."""
    return x0 * t + t0 * x - t0 * x0


def weight_update(state: PenaltyState, prev: OffloadMatrix) -> PenaltyState:
    state.w_b = 1.0 / (prev.mec + state.eps)
    state.w_c = 1.0 / (prev.cc + state.eps)
    return state


def new_penalty_state(anchor: OffloadMatrix, t_ref, eps=1e-3, scale=100.0):
    K, M = anchor.mec.shape
    st = PenaltyState(np.zeros(K), np.zeros(K), scale * max(t_ref, 1e-12),
                      np.ones((K, M)), np.ones((K, M)), eps)
    penalty_update(st, anchor)
    return weight_update(st, anchor)


def merit(inst: Instance, plan, off: OffloadMatrix, rates, upsilon):
    """True max latency plus the exact concave penalty on the tier sums."""
    base = max_latency(inst.task, plan, off, rates)
    return base + upsilon * float(np.sum(penalty(off.xb)) + np.sum(penalty(off.xc)))


def settled_merit(inst: Instance, state: State, off: OffloadMatrix, rates, upsilon):
    """Merit of ``off`` under its settled plan; ``(merit, plan)`` with inf if it does not fit."""
    plan = settle_plan(inst, state, off)
    if plan is None:
        return float("inf"), None
    with np.errstate(divide="ignore", invalid="ignore"):
        val = merit(inst, plan, off, rates, upsilon)
    return (val if np.isfinite(val) else float("inf")), plan


# ----------------------------------------------------- frozen inputs ----

def standby_plan(inst: Instance, state: State, margin=0.999) -> ResourcePlan:
    """Fill unused serving pairs with equal shares of the leftover budgets.

    Entries already in use are untouched, so the objective of the current
    pattern is unchanged while every binary pattern stays within budget.
    """
    task, ch = inst.task, inst.ch
    K, M = inst.K, inst.M
    off, plan = state.offload, state.plan
    out = plan.copy()
    mask = inst.serving_mask()
    F = np.broadcast_to(np.asarray(task.f_mec_max, float), (M,))
    P = np.broadcast_to(np.asarray(task.p_mec_max, float), (M,))
    kap = np.broadcast_to(np.asarray(task.kappa_mec, float), (M,))
    Rf = np.broadcast_to(np.asarray(task.r_f_max, float), (M,))
    recv = received_power_watts(state.beams, ch)
    b_on = off.mec > ACTIVE_THRESHOLD
    c_on = off.cc > ACTIVE_THRESHOLD
    for m in range(M):
        idle = mask[:, m] & ~b_on[:, m]
        if idle.any():
            f_left = F[m] - plan.f_mec[b_on[:, m], m].sum()
            # leave room for every serving pair becoming a cloud user
            p_left = P[m] - float(np.sum(kap[m] * plan.f_mec[b_on[:, m], m] ** 3)) \
                - float(np.sum(recv[mask[:, m], m]))
            n = idle.sum()
            share = min(max(f_left, 0.0) / n, (max(p_left, 0.0) / (n * kap[m])) ** (1 / 3))
            out.f_mec[idle, m] = margin * share
        idle = mask[:, m] & ~c_on[:, m]
        if idle.any():
            r_left = Rf[m] - plan.r_f[c_on[:, m], m].sum()
            out.r_f[idle, m] = margin * max(r_left, 0.0) / idle.sum()
    xc = off.xc
    idle = xc <= ACTIVE_THRESHOLD
    if idle.any():
        f_left = float(task.f_cc_max) - float(np.sum(xc * plan.f_cc))
        out.f_cc[idle] = margin * max(f_left, 0.0) / idle.sum()
    return out


def _budgets(inst: Instance):
    M = inst.M
    task = inst.task
    b = lambda v: np.broadcast_to(np.asarray(v, float), (M,))
    return b(task.f_mec_max), b(task.p_mec_max), b(task.kappa_mec), b(task.r_f_max)


def open_plan(inst: Instance, state: State, margin=0.999) -> ResourcePlan:
    """Offer every unused serving pair the whole leftover of its budgets.

    Used as the frozen input of the offloading LP, whose weighted budget
    rows decide how many new pairs may share a leftover.
    """
    K, M = inst.K, inst.M
    off, plan = state.offload, state.plan
    out = plan.copy()
    mask = inst.serving_mask()
    F, P, kap, Rf = _budgets(inst)
    recv = received_power_watts(state.beams, inst.ch)
    b_on = off.mec > ACTIVE_THRESHOLD
    c_on = off.cc > ACTIVE_THRESHOLD
    for m in range(M):
        idle = mask[:, m] & ~b_on[:, m]
        if idle.any():
            f_left = F[m] - plan.f_mec[b_on[:, m], m].sum()
            p_left = P[m] - float(np.sum(kap[m] * plan.f_mec[b_on[:, m], m] ** 3)) \
                - float(np.sum(recv[c_on[:, m], m]))
            out.f_mec[idle, m] = margin * min(max(f_left, 0.0), (max(p_left, 0.0) / kap[m]) ** (1 / 3))
        idle = mask[:, m] & ~c_on[:, m]
        if idle.any():
            out.r_f[idle, m] = margin * max(Rf[m] - plan.r_f[c_on[:, m], m].sum(), 0.0)
    idle = off.xc <= ACTIVE_THRESHOLD
    if idle.any():
        out.f_cc[idle] = margin * max(float(inst.task.f_cc_max) - float(np.sum(off.xc * plan.f_cc)), 0.0)
    return out


def settle_plan(inst: Instance, state: State, off: OffloadMatrix, margin=0.999):
    """Budget-feasible plan for ``off`` that keeps the entries ``state`` already uses.

    Pairs that ``off`` newly activates split the leftovers equally. Returns
    None when an AP with new users has no power left.
    """
    K, M = inst.K, inst.M
    plan, old = state.plan, state.offload
    out = plan.copy()
    F, P, kap, Rf = _budgets(inst)
    recv = received_power_watts(state.beams, inst.ch)
    b_new, c_new = off.mec > ACTIVE_THRESHOLD, off.cc > ACTIVE_THRESHOLD
    b_keep = b_new & (old.mec > ACTIVE_THRESHOLD) & (plan.f_mec > 0)
    c_keep = c_new & (old.cc > ACTIVE_THRESHOLD) & (plan.r_f > 0)
    b_add, c_add = b_new & ~b_keep, c_new & ~c_keep
    for m in range(M):
        f_left = F[m] - plan.f_mec[b_keep[:, m], m].sum()
        p_left = P[m] - float(np.sum(kap[m] * plan.f_mec[b_keep[:, m], m] ** 3)) \
            - float(np.sum(recv[c_new[:, m], m]))
        n = int(b_add[:, m].sum())
        adds_power = n > 0 or bool(np.any(c_new[:, m] & ~(old.cc[:, m] > ACTIVE_THRESHOLD)))
        if adds_power and p_left < 0:
            return None
        if n:
            share = min(max(f_left, 0.0) / n, (p_left / (n * kap[m])) ** (1 / 3))
            out.f_mec[b_add[:, m], m] = margin * share
        n = int(c_add[:, m].sum())
        if n:
            out.r_f[c_add[:, m], m] = margin * max(Rf[m] - plan.r_f[c_keep[:, m], m].sum(), 0.0) / n
    xc = off.xc
    on = xc > ACTIVE_THRESHOLD
    keep = on & (old.xc > ACTIVE_THRESHOLD) & (plan.f_cc > 0)
    add = on & ~keep
    if add.any():
        left = float(inst.task.f_cc_max) - float(np.sum(xc[keep] * plan.f_cc[keep]))
        out.f_cc[add] = margin * max(left, 0.0) / float(np.sum(xc[add]))
    return out


def eligible(inst: Instance, plan: ResourcePlan, rates):
    """Pairs that may carry MEC / CC fractions under the frozen inputs."""
    mask = inst.serving_mask() & (rates > 0)
    mec = mask & (plan.f_mec > 0)
    cc = mask & (plan.r_f > 0) & (plan.f_cc[:, None] > 0)
    return mec, cc


def tier_costs(inst, plan, rates):
    """Per-unit-fraction latency coefficients (s) and the CC compute constant."""
    task = inst.task
    K, M = inst.K, inst.M
    D = task.vec("task_bits", K)
    a_mec = np.broadcast_to(np.asarray(task.alpha_mec, float), (M,))
    with np.errstate(divide="ignore", invalid="ignore"):
        cm = D[:, None] / rates + a_mec[None, :] * D[:, None] / plan.f_mec
        cc = D[:, None] / rates + D[:, None] / plan.r_f
        comp = task.vec("alpha_cc", K) * D / plan.f_cc
    return cm, cc, comp


# ------------------------------------------------- split subproblems ----

def tier_split_lp(coef, const=0.0, tol=1e-9):
    """min eta s.t. eta >= coef_m x_m + const, sum x = 1, x >= 0.

    Returns ``(x, eta)``; ``x`` is None when no pair is eligible or the solve fails.
    """
    coef = np.asarray(coef, float)
    n = coef.size
    if n == 0:
        return None, float("inf")
    bld = conic.ConeBuilder()
    x = bld.var(n)
    eta = bld.var(1)[0]
    bld.objective(eta, 1.0)
    for j in range(n):
        bld.geq(bld.row([(eta, 1.0), (x[j], -coef[j])], -const))
    bld.nonneg(np.eye(n), np.zeros(n))
    bld.eq(bld.row([(x, np.ones(n))], -1.0))
    sol = conic.solve(bld.build(), tol=tol)
    if sol.status not in ("optimal", "inaccurate"):
        return None, float("inf")
    xs = np.clip(sol.x[x], 0.0, None)
    xs /= xs.sum()
    return xs, float(np.max(coef * xs) + const)


def init_offload(inst: Instance, plan: ResourcePlan, rates, scale=(1.0 / MBIT)):
    """Best pure tier per vehicle from the single-vehicle MEC and CC subproblems.

    Returns ``(OffloadMatrix, tier_latency)`` with ``tier_latency`` shaped
    (K, 3) for (MEC, CC, local). Solver failures fall back to local.
    """
    K, M = inst.K, inst.M
    el_mec, el_cc = eligible(inst, plan, rates)
    cm, cc, comp = tier_costs(inst, plan, rates)
    task = inst.task
    t_loc = task.vec("alpha_loc", K) * task.vec("task_bits", K) / np.where(plan.f_loc > 0, plan.f_loc, np.nan)
    t_loc = np.where(np.isnan(t_loc), np.inf, t_loc)
    off = OffloadMatrix.local(K, M)
    lat = np.full((K, 3), np.inf)
    lat[:, 2] = t_loc
    splits = {}
    for k in range(K):
        idx = np.flatnonzero(el_mec[k])
        xb, eta = tier_split_lp(cm[k, idx])
        if xb is not None:
            lat[k, 0] = eta
            splits[(k, 0)] = (idx, xb)
        idx = np.flatnonzero(el_cc[k])
        xc, eta = tier_split_lp(cc[k, idx], comp[k])
        if xc is not None:
            lat[k, 1] = eta
            splits[(k, 1)] = (idx, xc)
        best = int(np.argmin(lat[k]))  # first minimum follows the MEC, CC, local order
        if best == 0:
            idx, x = splits[(k, 0)]
            off.mec[k, idx] = x
        elif best == 1:
            idx, x = splits[(k, 1)]
            off.cc[k, idx] = x
    return off, lat


def adopt_sequential(inst: Instance, state: State, init: OffloadMatrix, lat, rates):
    """Move vehicles one at a time to their init choice, largest gain first.

    A move is kept when the settled max latency does not increase and, on a
    tie, the latency sum strictly decreases. Returns ``(OffloadMatrix, plan)``.
    """
    from .metrics import total_latency
    off, plan = state.offload.copy(), state.plan
    with np.errstate(divide="ignore", invalid="ignore"):
        cur = total_latency(inst.task, plan, off, rates).total
    gain = cur - np.min(lat, axis=1)
    for k in np.argsort(-gain, kind="stable"):
        if not gain[k] > 0:
            break
        cand = off.copy()
        cand.mec[k], cand.cc[k] = init.mec[k], init.cc[k]
        cplan = settle_plan(inst, state, cand)
        if cplan is None:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            tot = total_latency(inst.task, cplan, cand, rates).total
        if not np.all(np.isfinite(tot)):
            continue
        if tot.max() < cur.max() or (tot.max() <= cur.max() and tot.sum() < cur.sum()):
            off, plan, cur = cand, cplan, tot
    return off, plan


# ---------------------------------------------------------- main LP ----

TIEBREAK = 1e-3

@dataclass
class OffloadLayout:
    b: dict
    c: dict
    t_mec: np.ndarray
    t_cc: np.ndarray
    t: int


def build_offload_lp(inst: Instance, it: OffloadIterate, pen: PenaltyState,
                     plan: ResourcePlan, rates, beams, tiebreak=TIEBREAK):
    """Linear program of one Algorithm 1 iteration; returns (ConicProblem, layout).

    ``tiebreak`` adds ``tiebreak / K * sum_k s_k`` with per-vehicle epigraphs
    ``s_k <= t``, so ties in the max latency are broken towards vertices
    where every vehicle is as fast as the frozen resources allow.
    """
    task = inst.task
    K, M = inst.K, inst.M
    el_mec, el_cc = eligible(inst, plan, rates)
    cm, cc, comp = tier_costs(inst, plan, rates)
    D = task.vec("task_bits", K)
    t_loc = task.vec("alpha_loc", K) * D / plan.f_loc
    x0b, x0c = it.offload.xb, it.offload.xc

    bld = conic.ConeBuilder()
    t = bld.var(1, "t")[0]
    tm = bld.var(K)
    tc = bld.var(K)
    b = {(k, m): bld.var(1)[0] for k in range(K) for m in range(M) if el_mec[k, m]}
    c = {(k, m): bld.var(1)[0] for k in range(K) for m in range(M) if el_cc[k, m]}
    sk = bld.var(K)
    lay = OffloadLayout(b, c, tm, tc, t)

    bld.objective(t, 1.0)
    for k in range(K):
        bld.objective(sk[k], tiebreak / K)
        bld.geq(bld.row([(t, 1.0), (sk[k], -1.0)]))
    for k in range(K):
        # rho * majorant; the constant part does not affect the LP
        for (kk, m), i in b.items():
            if kk == k:
                bld.objective(i, pen.rho_b[k] * (1.0 - 2.0 * x0b[k]))
        for (kk, m), i in c.items():
            if kk == k:
                bld.objective(i, pen.rho_c[k] * (1.0 - 2.0 * x0c[k]))

    for k in range(K):
        bk = [(i, 1.0) for (kk, m), i in b.items() if kk == k]
        ck = [(i, 1.0) for (kk, m), i in c.items() if kk == k]
        # s_k >= (1 - xb - xc) T_loc + lin(xb * t_mec) + lin(xc * t_cc)
        terms = [(sk[k], 1.0), (tm[k], -x0b[k]), (tc[k], -x0c[k])]
        terms += [(i, t_loc[k] - it.t_mec[k]) for i, _ in bk]
        terms += [(i, t_loc[k] - it.t_cc[k]) for i, _ in ck]
        const = -t_loc[k] + x0b[k] * it.t_mec[k] + x0c[k] * it.t_cc[k]
        bld.geq(bld.row(terms, const))
        bld.geq(bld.row([(tm[k], 1.0)]))
        bld.geq(bld.row([(tc[k], 1.0)], -comp[k] if np.isfinite(comp[k]) else 0.0))
        for (kk, m), i in b.items():
            if kk == k:
                bld.geq(bld.row([(tm[k], 1.0), (i, -cm[k, m])]))
        for (kk, m), i in c.items():
            if kk == k:
                bld.geq(bld.row([(tc[k], 1.0), (i, -cc[k, m])], -comp[k]))
        if bk or ck:
            bld.geq(bld.row([], 1.0), bld.row(bk + ck))
    for i in list(b.values()) + list(c.values()):
        bld.geq(bld.row([(i, 1.0)]))
        bld.geq(bld.row([(i, -1.0)], 1.0))

    # weighted budget rows; the step U(x) is replaced by w_U * x
    P = np.broadcast_to(np.asarray(task.p_mec_max, float), (M,))
    F = np.broadcast_to(np.asarray(task.f_mec_max, float), (M,))
    kap = np.broadcast_to(np.asarray(task.kappa_mec, float), (M,))
    Rf = np.broadcast_to(np.asarray(task.r_f_max, float), (M,))
    recv = received_power_watts(beams, inst.ch)
    for m in range(M):
        pw = [(i, pen.w_b[k, mm] * kap[m] * plan.f_mec[k, m] ** 3) for (k, mm), i in b.items() if mm == m]
        pw += [(i, pen.w_c[k, mm] * recv[k, m]) for (k, mm), i in c.items() if mm == m]
        if pw:
            bld.geq(bld.row([], P[m]), bld.row(pw))
        cap = [(i, pen.w_b[k, mm] * plan.f_mec[k, m] / GHZ) for (k, mm), i in b.items() if mm == m]
        if cap:
            bld.geq(bld.row([], F[m] / GHZ), bld.row(cap))
        fh = [(i, pen.w_c[k, mm] * plan.r_f[k, m] / MBIT) for (k, mm), i in c.items() if mm == m]
        if fh:
            bld.geq(bld.row([], Rf[m] / MBIT), bld.row(fh))
    if c:
        bld.geq(bld.row([], float(task.f_cc_max) / GHZ),
                bld.row([(i, plan.f_cc[k] / GHZ) for (k, m), i in c.items()]))
    return bld.build(), lay


def _extract(x, lay: OffloadLayout, K, M):
    off = OffloadMatrix.local(K, M)
    for (k, m), i in lay.b.items():
        off.mec[k, m] = x[i]
    for (k, m), i in lay.c.items():
        off.cc[k, m] = x[i]
    off.mec = np.clip(off.mec, 0.0, 1.0)
    off.cc = np.clip(off.cc, 0.0, 1.0)
    # solver round-off may push a sum marginally above one
    s = off.xb + off.xc
    over = s > 1.0
    off.mec[over] /= s[over, None]
    off.cc[over] /= s[over, None]
    # entries below the activity threshold are numerically zero
    off.mec[off.mec <= ACTIVE_THRESHOLD] = 0.0
    off.cc[off.cc <= ACTIVE_THRESHOLD] = 0.0
    return off


def _anchors(inst, plan, off, rates, pure):
    """Tier latency anchors: current value where active, pure-tier value elsewhere."""
    from .metrics import total_latency
    K = inst.K
    tm = np.where(np.isfinite(pure[:, 0]), pure[:, 0], 0.0)
    tc = np.where(np.isfinite(pure[:, 1]), pure[:, 1], 0.0)
    try:
        rep = total_latency(inst.task, plan, off, rates)
    except Exception:
        return tm, tc
    xb, xc = off.xb, off.xc
    for k in range(K):
        if xb[k] > ACTIVE_THRESHOLD:
            tm[k] = rep.mec[k]
        if xc[k] > ACTIVE_THRESHOLD:
            tc[k] = rep.cc[k]
    return tm, tc


def _max_violation(inst, plan, off, beams):
    from .metrics import check_budgets
    worst = 0.0
    for v in check_budgets(inst.task, plan, off, beams, inst.ch, inst.geom,
                           rtol=0.0, require_binary=False):
        if v.constraint == "sensing":
            continue
        worst = max(worst, -v.slack / max(abs(v.budget), 1e-300))
    return worst


# ------------------------------------------------- rounding / repair ----

def round_offload(off: OffloadMatrix) -> OffloadMatrix:
    """Snap tier sums to {0, 1} and renormalize the within-tier split."""
    K, M = off.mec.shape
    out = OffloadMatrix.local(K, M)
    for k in range(K):
        xb, xc = off.xb[k], off.xc[k]
        if xb >= 0.5 and xb >= xc:
            out.mec[k] = off.mec[k] / xb
        elif xc >= 0.5:
            out.cc[k] = off.cc[k] / xc
    return out


def repair(inst: Instance, plan, off: OffloadMatrix, rates) -> OffloadMatrix:
    """Re-optimize the within-tier split for the fixed binary pattern."""
    el_mec, el_cc = eligible(inst, plan, rates)
    cm, cc, comp = tier_costs(inst, plan, rates)
    out = off.copy()
    for k in range(inst.K):
        if off.xb[k] > 0.5:
            idx = np.flatnonzero(el_mec[k])
            x, _ = tier_split_lp(cm[k, idx])
            if x is not None:
                out.mec[k] = 0.0
                out.mec[k, idx] = x
        elif off.xc[k] > 0.5:
            idx = np.flatnonzero(el_cc[k])
            x, _ = tier_split_lp(cc[k, idx], comp[k])
            if x is not None:
                out.cc[k] = 0.0
                out.cc[k, idx] = x
    return out


# ------------------------------------------------------ Algorithm 1 ----

def run_algorithm1(inst: Instance, state: State, zeta=0.01, max_iter=20,
                   upsilon_scale=100.0, eps=1e-3, rates=None, tol=1e-8):
    """Penalty/weight updates with LP solves, then rounding and repair.

    The LP sees the open plan; candidates are scored under their settled
    plan, so the incumbent is always budget-feasible. The trace records the
    penalized merit of the incumbent, which never increases.
    Returns ``(State, OffloadTrace)``; the state carries the settled plan.
    """
    trace = OffloadTrace()
    if rates is None:
        rates = inst.rates(state.beams)
    plan = open_plan(inst, state)
    K, M = inst.K, inst.M
    incoming = state.offload
    obj_in = max_latency(inst.task, state.plan, incoming, rates)
    pen = new_penalty_state(incoming, obj_in if np.isfinite(obj_in) else 1.0,
                            eps=eps, scale=upsilon_scale)
    ups = pen.upsilon

    best, best_plan = incoming, state.plan
    best_merit = merit(inst, state.plan, incoming, rates, ups)
    trace.record(0, best_merit, _max_violation(inst, best_plan, best, state.beams))
    init, pure = init_offload(inst, plan, rates)
    m_init, p_init = settled_merit(inst, state, init, rates, ups)
    if m_init <= best_merit:
        best, best_plan, best_merit = init, p_init, m_init
    seq, p_seq = adopt_sequential(inst, State(incoming, state.beams, state.plan), init, pure, rates)
    m_seq = merit(inst, p_seq, seq, rates, ups)
    if m_seq <= best_merit:
        best, best_plan, best_merit = seq, p_seq, m_seq
    trace.record(1, best_merit, _max_violation(inst, best_plan, best, state.beams))

    cur = best
    for n in range(2, max_iter + 2):
        penalty_update(pen, cur)
        weight_update(pen, cur)
        pen.n = n
        tm0, tc0 = _anchors(inst, plan, cur, rates, pure)
        it = OffloadIterate(cur, tm0, tc0, best_merit)
        prob, lay = build_offload_lp(inst, it, pen, plan, rates, state.beams)
        sol = conic.solve(prob, tol=tol)
        if sol.status not in ("optimal", "inaccurate"):
            trace.warning = f"offload LP {sol.status}"
            break
        if sol.ok:
            trace.residuals.append(sol.residuals)
        cand = _extract(sol.x, lay, K, M)
        m_cand, p_cand = settled_merit(inst, state, cand, rates, ups)
        prev_best = best_merit
        cur = cand
        if m_cand <= best_merit:
            best, best_plan, best_merit = cand, p_cand, m_cand
        trace.record(n, best_merit, _max_violation(inst, best_plan, best, state.beams))
        # relative change of the recorded objective
        if abs(prev_best - best_merit) / max(abs(best_merit), 1e-300) < zeta:
            break

    trace.pre_round_sums = np.stack([best.xb, best.xc], axis=1)
    trace.pre_round_objective = max_latency(inst.task, best_plan, best, rates)
    rounded = round_offload(best)
    r_plan = settle_plan(inst, state, rounded)
    r_obj = float("inf")
    if r_plan is not None:
        rounded = repair(inst, r_plan, rounded, rates)
        r_plan = settle_plan(inst, state, rounded)
        if r_plan is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                r_obj = max_latency(inst.task, r_plan, rounded, rates)
    trace.rounded_objective = r_obj
    if r_obj <= obj_in:
        out = State(rounded, state.beams, r_plan)
    else:
        out = State(incoming.copy(), state.beams, state.plan.copy())
    return out, trace


# ------------------------------------------------ single-tier schemes ----

def forced_tier(inst: Instance, plan, rates, tier):
    """Every vehicle fully on ``tier`` ("mec" or "cc") with the optimal split.

    Vehicles without an eligible pair stay local.
    """
    K, M = inst.K, inst.M
    el_mec, el_cc = eligible(inst, plan, rates)
    cm, cc, comp = tier_costs(inst, plan, rates)
    off = OffloadMatrix.local(K, M)
    for k in range(K):
        if tier == "mec":
            idx = np.flatnonzero(el_mec[k])
            x, _ = tier_split_lp(cm[k, idx])
            if x is not None:
                off.mec[k, idx] = x
        elif tier == "cc":
            idx = np.flatnonzero(el_cc[k])
            x, _ = tier_split_lp(cc[k, idx], comp[k])
            if x is not None:
                off.cc[k, idx] = x
        else:
            raise ValueError(f"unknown tier {tier!r}")
    return off


def run_forced(inst: Instance, state: State, tier, rates=None):
    """Offloading step of the MEC/CC benchmarks: re-split within the pinned tier."""
    trace = OffloadTrace()
    if rates is None:
        rates = inst.rates(state.beams)
    plan = standby_plan(inst, state)
    obj_in = max_latency(inst.task, plan, state.offload, rates)
    trace.record(0, obj_in, _max_violation(inst, plan, state.offload, state.beams))
    cand = forced_tier(inst, plan, rates, tier)
    obj = max_latency(inst.task, plan, cand, rates)
    keep = cand if obj <= obj_in else state.offload.copy()
    trace.record(1, min(obj, obj_in), _max_violation(inst, plan, keep, state.beams))
    trace.pre_round_sums = np.stack([keep.xb, keep.xc], axis=1)
    trace.pre_round_objective = trace.rounded_objective = min(obj, obj_in)
    return State(keep, state.beams, plan), trace
