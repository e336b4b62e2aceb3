"""WMMSE rate surrogate, SCA sensing minorant and the beamforming SOCP.

Inside the conic programs rates are in Mbit/s, task sizes in Mbit, cycle
counts in Gcycles and frequencies in GHz, so latencies stay in seconds and
every coefficient is of order one. Complex precoders are stored as pairs of
real coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .metrics import (ACTIVE_THRESHOLD, BeamformerSet, Instance, State,
                      all_sensing_sinr, _streams_at_ap)
from .scenario import steering

log = logging.getLogger(__name__)

MBIT = 1e6
GHZ = 1e9


class InfeasibleStructureError(ValueError):
    """The frozen blocks leave the beamforming subproblem without interior."""


@dataclass
class WmmseState:
    receivers: np.ndarray  # (K, M, N) complex, zero outside serving pairs
    weights: np.ndarray  # (K, M), 1 outside serving pairs
    iteration: int = 0


@dataclass
class SensingLinearization:
    anchors: np.ndarray  # (K, N_t) aggregate beams g^(n)
    steer: np.ndarray  # (K, N_t) a_t(theta_k)
    n_rx: int

    def matrix(self, k):
        a = self.steer[k]
        return self.n_rx * np.outer(a, a.conj())


@dataclass
class BeamTrace:
    iteration: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    min_sensing_slack: list = field(default_factory=list)
    max_power_slack: list = field(default_factory=list)
    warning: str = ""

    def record(self, it, obj, sens, pw):
        self.iteration.append(it)
        self.objective.append(float(obj))
        self.min_sensing_slack.append(float(sens))
        self.max_power_slack.append(float(pw))


# ------------------------------------------------------------ WMMSE ----

def _full_cov(m, beams, ch):
    imgs = _streams_at_ap(m, beams, ch)
    N = ch.uplink.shape[2]
    return np.eye(N, dtype=complex) + imgs.T @ imgs.conj()


def mmse_receiver(k, m, beams, ch):
    """v = (N_{k,m} + H w w^H H^H)^{-1} H w."""
    if m not in ch.serving_sets[k]:
        raise ValueError(f"AP {m} does not serve vehicle {k}")
    hw = ch.uplink[k, m] @ beams.comm[k, m]
    return np.linalg.solve(_full_cov(m, beams, ch), hw)


def wmmse_weight(k, m, beams, ch):
    """V = 1 / MSE at the MMSE receiver."""
    hw = ch.uplink[k, m] @ beams.comm[k, m]
    v = mmse_receiver(k, m, beams, ch)
    mse = 1.0 - float(np.real(np.vdot(hw, v)))
    return 1.0 / max(mse, 1e-300)


def wmmse_state(beams, ch, iteration=0) -> WmmseState:
    K, M = ch.num_vehicles, ch.num_aps
    N = ch.uplink.shape[2]
    v = np.zeros((K, M, N), complex)
    V = np.ones((K, M))
    for m in range(M):
        C = _full_cov(m, beams, ch)
        for k in range(K):
            if m not in ch.serving_sets[k]:
                continue
            hw = ch.uplink[k, m] @ beams.comm[k, m]
            v[k, m] = np.linalg.solve(C, hw)
            V[k, m] = 1.0 / max(1.0 - float(np.real(np.vdot(hw, v[k, m]))), 1e-300)
    return WmmseState(v, V, iteration)


def mse(k, m, v, beams, ch):
    """E|s - v^H y|^2 for an arbitrary receiver v."""
    hw = ch.uplink[k, m] @ beams.comm[k, m]
    C = _full_cov(m, beams, ch)
    return float(np.real(np.vdot(v, C @ v)) - 2.0 * np.real(np.vdot(v, hw)) + 1.0)


def surrogate_rate(k, m, beams, v, V, ch, B):
    """Concave WMMSE minorant of the (k, m) rate at ``beams`` for frozen (v, V)."""
    hw = ch.uplink[k, m] @ beams.comm[k, m]
    C = _full_cov(m, beams, ch)
    quad = float(np.real(np.vdot(v, C @ v)))
    lin = 2.0 * float(np.real(np.vdot(v, hw)))
    return B * (np.log2(V) - V * quad + V * lin + 1.0 - V)


# ---------------------------------------------------------- sensing ----

def sensing_linearization(beams, ch, geom) -> SensingLinearization:
    K, Nt = beams.sensing.shape
    steer = np.array([steering(geom.target_angles[k], Nt) for k in range(K)])
    return SensingLinearization(beams.aggregate.copy(), steer, ch.cross.shape[2])


def sensing_minorant(k, g, lin: SensingLinearization, geom):
    """Affine lower bound of eta^2 g^H A_k g anchored at g^(n)."""
    g0 = lin.anchors[k]
    a = lin.steer[k]
    eta2 = geom.reflection_coeffs[k] ** 2
    return float(eta2 * lin.n_rx * np.real(np.conj(np.vdot(a, g0)) * np.vdot(a, 2 * g - g0)))


def sensing_quadratic(k, g, lin: SensingLinearization, geom):
    a = lin.steer[k]
    return float(geom.reflection_coeffs[k] ** 2 * lin.n_rx * abs(np.vdot(a, g)) ** 2)


# ----------------------------------------------------- budget helpers ----

def power_budgets(inst: Instance, plan):
    """Transmit budget per vehicle in beamformer units after the CPU share."""
    K = inst.K
    p = inst.task.vec("p_max", K) - inst.task.vec("kappa_loc", K) * plan.f_loc ** 3
    return p / inst.ch.power_unit


def sensing_slacks(inst: Instance, beams):
    req = inst.task.vec("sinr_req", inst.K)
    return all_sensing_sinr(beams, inst.ch, inst.geom) / req - 1.0


def power_slacks(inst: Instance, beams, plan):
    """Relative slack of the per-vehicle power budget (>= 0 feasible)."""
    K = inst.K
    pmax = inst.task.vec("p_max", K)
    g = beams.aggregate
    used = inst.task.vec("kappa_loc", K) * plan.f_loc ** 3 \
        + np.sum(np.abs(g) ** 2, axis=1) * inst.ch.power_unit
    return (pmax - used) / pmax


def beams_feasible(inst: Instance, beams, plan, tol=1e-7):
    return bool(np.min(sensing_slacks(inst, beams)) >= -tol
                and np.min(power_slacks(inst, beams, plan)) >= -tol)


# ------------------------------------------------------- initializer ----

def _principal_direction(H):
    _, _, vh = np.linalg.svd(H)
    return vh[0].conj()


def _sensing_phase1(inst: Instance, plan, start, max_iter=20, margin=1e-3):
    """SCA maximizing the worst sensing margin over aggregates g; None on failure."""
    K, Nt = inst.K, inst.Nt
    pbud = power_budgets(inst, plan)
    req = inst.task.vec("sinr_req", K)
    g0 = start.aggregate.copy()
    Nr = inst.ch.cross.shape[2]
    steer = np.array([steering(inst.geom.target_angles[k], Nt) for k in range(K)])
    for _ in range(max_iter):
        lin = SensingLinearization(g0, steer, Nr)
        bld = conic.ConeBuilder()
        G = bld.var(K * 2 * Nt).reshape(K, 2, Nt)
        tau = bld.var(1)[0]
        bld.objective(tau, -1.0)
        for k in range(K):
            rows = [bld.row([], np.sqrt(pbud[k]))] + _g_rows(bld, G[k], np.eye(Nt))
            bld.add("soc", np.vstack([g for g, _ in rows]), np.array([c for _, c in rows]))
        for k in range(K):
            g_u, c_u = _minorant_row(bld, k, G[k], lin, inst.geom, req[k], Nr)
            g_u[tau] -= 1.0
            w = []
            for kp in range(K):
                if kp != k:
                    w += _g_rows(bld, G[kp], inst.ch.cross[k, kp])
            conic.encode_hyperbolic(bld, (g_u, c_u), (np.zeros(bld.n), 1.0), w)
        bld.geq(bld.row([(tau, -1.0)], 1e3))  # keeps the margin bounded
        sol = conic.solve(bld.build())
        if sol.status not in ("optimal", "inaccurate"):
            return None
        g = sol.x[G[:, 0, :]] + 1j * sol.x[G[:, 1, :]]
        if np.min(sensing_slacks(inst, _sensing_only(inst, g))) >= margin:
            return g
        g0 = g
    return None


def _sensing_only(inst, g):
    beams = BeamformerSet.zeros(inst.K, inst.M, inst.Nt)
    beams.sensing[:] = g
    return beams


def _mix(inst, g_sen, pbud, lam):
    """Blend a sensing aggregate with principal-direction comm beams (power share lam)."""
    beams = BeamformerSet.zeros(inst.K, inst.M, inst.Nt)
    for k in range(inst.K):
        beams.sensing[k] = np.sqrt(1.0 - lam) * g_sen[k]
        S = inst.ch.serving_sets[k]
        for m in S:
            d = _principal_direction(inst.ch.uplink[k, m])
            beams.comm[k, m] = np.sqrt(lam * pbud[k] / len(S)) * d
        gp = np.sum(np.abs(beams.aggregate[k]) ** 2)
        if gp > pbud[k]:
            s = np.sqrt(pbud[k] / gp)
            beams.comm[k] *= s
            beams.sensing[k] *= s
    return beams


def initial_beams(inst: Instance, plan, margin=1e-2, comm_share=0.1, tol=1e-4):
    """Sensing-feasible starting beamformers at full budget, or None.

    The preferred start is a matched sensing beam with ``comm_share`` of the
    budget on principal-direction comm beams. When inter-vehicle interference
    makes it infeasible, an SCA phase maximizes the worst sensing margin and
    the largest comm share (up to ``comm_share``) keeping feasibility is
    found by bisection.
    """
    pbud = power_budgets(inst, plan)
    if np.any(pbud <= 0):
        return None
    steer = np.array([steering(inst.geom.target_angles[k], inst.Nt) for k in range(inst.K)])
    g_match = np.sqrt(pbud)[:, None] * steer / np.sqrt(inst.Nt)

    def ok(beams):
        return np.min(sensing_slacks(inst, beams)) >= margin

    cand = _mix(inst, g_match, pbud, comm_share)
    if ok(cand):
        return cand
    g_sen = _sensing_phase1(inst, plan, _sensing_only(inst, g_match), margin=margin)
    if g_sen is None:
        return None
    lo, hi = 0.0, comm_share
    if ok(_mix(inst, g_sen, pbud, hi)):
        return _mix(inst, g_sen, pbud, hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(_mix(inst, g_sen, pbud, mid)):
            lo = mid
        else:
            hi = mid
    return _mix(inst, g_sen, pbud, lo)


# ------------------------------------------------------- SOCP layout ----

def _cplx_form(X, Y, q):
    """Real and imaginary parts of q^T (x + j y) as builder terms."""
    qr, qi = q.real, q.imag
    re = [(X, qr), (Y, -qi)]
    im = [(X, qi), (Y, qr)]
    return re, im


def _g_rows(bld, Gk, H):
    """Rows (re, im) of H g for an aggregate stored directly in ``Gk``."""
    rows = []
    for q in H:
        re, im = _cplx_form(Gk[0], Gk[1], q)
        rows += [bld.row(re), bld.row(im)]
    return rows


def _minorant_row(bld, k, Gk, lin, geom, req, Nr):
    """Affine row lin_k(g)/req - N_r for an aggregate stored in ``Gk``."""
    a = lin.steer[k]
    g0 = lin.anchors[k]
    eta2 = geom.reflection_coeffs[k] ** 2
    c0 = np.vdot(a, g0)
    scale = eta2 * lin.n_rx / req
    q = 2.0 * np.conj(c0) * a.conj()
    re, _ = _cplx_form(Gk[0], Gk[1], q)
    terms = [(idx, scale * coef) for idx, coef in re]
    return bld.row(terms, -scale * abs(c0) ** 2 - Nr)


@dataclass
class BeamLayout:
    w: np.ndarray  # (K, L+1, 2, N_t) variable indices; slot L is the sensing beam
    slots: list  # per vehicle: list of AP indices for the comm slots
    t: int
    t_mec: dict
    t_cc: dict
    r: dict


def _agg_terms(lay, k, q):
    """Terms of Re/Im of q^T g_k, summed over every slot of vehicle k."""
    re, im = [], []
    for j in range(lay.w.shape[1]):
        r_, i_ = _cplx_form(lay.w[k, j, 0], lay.w[k, j, 1], q)
        re += r_
        im += i_
    return re, im


def _slot_terms(lay, k, j, q):
    return _cplx_form(lay.w[k, j, 0], lay.w[k, j, 1], q)


def build_beam_socp(inst: Instance, state: State, wm: WmmseState,
                    lin: SensingLinearization):
    """Convex beamforming subproblem around the current iterate.

    Returns ``(ConicProblem, BeamLayout)``.
    """
    ch, task, geom = inst.ch, inst.task, inst.geom
    K, M, Nt = inst.K, inst.M, inst.Nt
    L = len(ch.serving_sets[0])
    off, plan = state.offload, state.plan
    D = task.vec("task_bits", K) / MBIT
    Dg = task.vec("task_bits", K) / GHZ  # alpha * Dg is in Gcycles
    a_loc = task.vec("alpha_loc", K)
    a_mec = np.broadcast_to(np.asarray(task.alpha_mec, float), (M,))
    a_cc = task.vec("alpha_cc", K)
    Bm = inst.B / MBIT
    req = task.vec("sinr_req", K)
    Nr = ch.cross.shape[2]

    pbud = power_budgets(inst, plan)
    if np.any(pbud <= 0):
        raise InfeasibleStructureError("local CPU power exhausts the transmit budget")

    bld = conic.ConeBuilder()
    widx = bld.var(K * (L + 1) * 2 * Nt).reshape(K, L + 1, 2, Nt)
    slots = [list(map(int, ch.serving_sets[k])) for k in range(K)]
    t = bld.var(1, "t")[0]
    xb, xc = off.xb, off.xc
    t_mec = {k: bld.var(1)[0] for k in range(K) if xb[k] > ACTIVE_THRESHOLD}
    t_cc = {k: bld.var(1)[0] for k in range(K) if xc[k] > ACTIVE_THRESHOLD}
    active = [(k, m) for k in range(K) for m in slots[k]
              if off.mec[k, m] > ACTIVE_THRESHOLD or off.cc[k, m] > ACTIVE_THRESHOLD]
    r = {km: bld.var(1)[0] for km in active}
    lay = BeamLayout(widx, slots, t, t_mec, t_cc, r)
    bld.objective(t, 1.0)

    # epigraph of the per-vehicle total latency
    for k in range(K):
        w_loc = max(1.0 - xb[k] - xc[k], 0.0)
        const = 0.0
        if w_loc > ACTIVE_THRESHOLD:
            if plan.f_loc[k] <= 0:
                raise InfeasibleStructureError(f"vehicle {k} computes locally at zero frequency")
            const = w_loc * a_loc[k] * Dg[k] / (plan.f_loc[k] / GHZ)
        terms = [(t, 1.0)]
        if k in t_mec:
            terms.append((t_mec[k], -xb[k]))
        if k in t_cc:
            terms.append((t_cc[k], -xc[k]))
        bld.geq(bld.row(terms, -const))

    one = (np.zeros(0), 1.0)
    for (k, m) in active:
        # r <= WMMSE surrogate, written as an rsoc with the interference expanded
        v, V = wm.receivers[k, m], wm.weights[k, m]
        j_own = slots[k].index(m)
        c0 = np.log2(V) + 1.0 - V - V * float(np.real(np.vdot(v, v)))
        q_own = v.conj() @ ch.uplink[k, m]
        re_own, _ = _slot_terms(lay, k, j_own, q_own)
        # divided by B*V:  c0/V + 2 Re(q w) - r/(B V) >= sum_s |q_s w_s|^2
        u_terms = [(idx, 2.0 * coef) for idx, coef in re_own]
        u_terms.append((r[(k, m)], -1.0 / (Bm * V)))
        u = bld.row(u_terms, c0 / V)
        ws = []
        for kp in range(K):
            q = v.conj() @ ch.uplink[kp, m]
            for j in range(L + 1):
                re_, im_ = _slot_terms(lay, kp, j, q)
                ws.append(bld.row(re_))
                ws.append(bld.row(im_))
        conic.encode_hyperbolic(bld, u, one, ws)

        if off.mec[k, m] > ACTIVE_THRESHOLD:
            b = off.mec[k, m]
            if plan.f_mec[k, m] <= 0:
                raise InfeasibleStructureError(f"b[{k},{m}] active with zero MEC frequency")
            comp = a_mec[m] * b * Dg[k] / (plan.f_mec[k, m] / GHZ)
            conic.encode_hyperbolic(bld, bld.row([(r[(k, m)], 1.0)]),
                                    bld.row([(t_mec[k], 1.0)], -comp),
                                    bld.row([], np.sqrt(b * D[k])))
        if off.cc[k, m] > ACTIVE_THRESHOLD:
            c = off.cc[k, m]
            if plan.r_f[k, m] <= 0 or plan.f_cc[k] <= 0:
                raise InfeasibleStructureError(f"c[{k},{m}] active with zero fronthaul or CC frequency")
            fixed = c * D[k] / (plan.r_f[k, m] / MBIT) + a_cc[k] * Dg[k] / (plan.f_cc[k] / GHZ)
            conic.encode_hyperbolic(bld, bld.row([(r[(k, m)], 1.0)]),
                                    bld.row([(t_cc[k], 1.0)], -fixed),
                                    bld.row([], np.sqrt(c * D[k])))

    # per-vehicle transmit power
    eye = np.eye(Nt)
    for k in range(K):
        rows = [bld.row([], np.sqrt(pbud[k]))]
        for q in eye:
            re_, im_ = _agg_terms(lay, k, q)
            rows += [bld.row(re_), bld.row(im_)]
        bld.add("soc", np.vstack([g for g, _ in rows]), np.array([c for _, c in rows]))

    # per-AP received power of cloud-bound streams
    recv_cap = _ap_received_caps(inst, state)
    for m, cap in recv_cap.items():
        ws = []
        for k in range(K):
            if off.cc[k, m] > ACTIVE_THRESHOLD:
                j = slots[k].index(m)
                for q in ch.uplink[k, m]:
                    re_, im_ = _slot_terms(lay, k, j, q)
                    ws += [bld.row(re_), bld.row(im_)]
        conic.encode_hyperbolic(bld, bld.row([], cap), one, ws)

    # sensing: minorant >= req (N_r + interference)
    for k in range(K):
        a = lin.steer[k]
        g0 = lin.anchors[k]
        c0 = np.vdot(a, g0)
        scale = geom.reflection_coeffs[k] ** 2 * Nr / req[k]
        re_, _ = _agg_terms(lay, k, 2.0 * np.conj(c0) * a.conj())
        # divide through by s so the row entries stay O(1): u/s >= ||w / sqrt(s)||^2
        s_ = max(1.0, scale * abs(c0) ** 2 + Nr)
        u = bld.row([(idx, scale * coef / s_) for idx, coef in re_], -(scale * abs(c0) ** 2 + Nr) / s_)
        ws = []
        for kp in range(K):
            if kp == k:
                continue
            for q in ch.cross[k, kp]:
                re2, im2 = _agg_terms(lay, kp, q / np.sqrt(s_))
                ws += [bld.row(re2), bld.row(im2)]
        conic.encode_hyperbolic(bld, u, one, ws)

    return bld.build(), lay


def _ap_received_caps(inst: Instance, state: State):
    """Right sides (noise-normalized) of the AP received-power rows that can bind."""
    task, ch, off, plan = inst.task, inst.ch, state.offload, state.plan
    M, K = inst.M, inst.K
    p_mec = np.broadcast_to(np.asarray(task.p_mec_max, float), (M,))
    kappa = np.broadcast_to(np.asarray(task.kappa_mec, float), (M,))
    pbud = power_budgets(inst, plan)
    caps = {}
    for m in range(M):
        users = [k for k in range(K) if off.cc[k, m] > ACTIVE_THRESHOLD]
        if not users:
            continue
        budget = p_mec[m] - float(np.sum((off.mec[:, m] > ACTIVE_THRESHOLD)
                                         * kappa[m] * plan.f_mec[:, m] ** 3))
        cap = budget / ch.noise_power
        worst = sum(np.linalg.norm(ch.uplink[k, m], 2) ** 2 * pbud[k] for k in users)
        if worst <= cap:
            continue  # cannot bind for any admissible beam
        caps[m] = max(cap, 0.0)
    return caps


def extract_beams(x, lay: BeamLayout, K, M, Nt):
    beams = BeamformerSet.zeros(K, M, Nt)
    L = lay.w.shape[1] - 1
    for k in range(K):
        for j, m in enumerate(lay.slots[k]):
            beams.comm[k, m] = x[lay.w[k, j, 0]] + 1j * x[lay.w[k, j, 1]]
        beams.sensing[k] = x[lay.w[k, L, 0]] + 1j * x[lay.w[k, L, 1]]
    return beams


# ----------------------------------------------------- Algorithm 2 ----

def run_algorithm2(inst: Instance, state: State, zeta=1e-3, max_iter=10, tol=1e-8):
    """Alternate WMMSE/anchor refreshes and SOCP solves from a feasible start.

    Returns ``(BeamformerSet, BeamTrace, residuals)`` where ``residuals``
    lists the KKT residual dicts of every optimal solve.
    """
    trace = BeamTrace()
    beams = state.beams.copy()
    cur = state.copy()
    obj = inst.objective(cur)
    trace.record(0, obj, np.min(sensing_slacks(inst, beams)),
                 np.min(power_slacks(inst, beams, state.plan)))
    residuals = []
    if not beams_feasible(inst, beams, state.plan, tol=1e-6):
        trace.warning = "infeasible start"
        return beams, trace, residuals
    for it in range(1, max_iter + 1):
        wm = wmmse_state(beams, inst.ch, it)
        lin = sensing_linearization(beams, inst.ch, inst.geom)
        try:
            prob, lay = build_beam_socp(inst, cur, wm, lin)
        except InfeasibleStructureError as exc:
            trace.warning = str(exc)
            break
        sol = conic.solve(prob, tol=tol)
        if sol.status not in ("optimal", "inaccurate"):
            trace.warning = f"socp {sol.status}"
            break
        if sol.ok:
            residuals.append(sol.residuals)
        cand = extract_beams(sol.x, lay, inst.K, inst.M, inst.Nt)
        if not beams_feasible(inst, cand, state.plan, tol=1e-7):
            trace.warning = "candidate outside budgets"
            break
        trial = State(cur.offload, cand, cur.plan)
        new_obj = inst.objective(trial)
        if not new_obj <= obj:
            break
        change = abs(obj - new_obj) / max(new_obj, 1e-300)
        beams, cur, obj = cand, trial, new_obj
        trace.record(it, obj, np.min(sensing_slacks(inst, beams)),
                     np.min(power_slacks(inst, beams, state.plan)))
        if change < zeta:
            break
    return beams, trace, residuals
