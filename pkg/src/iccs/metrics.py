"""Closed-form model quantities: rates, radar SINR, latencies, power and budgets.

Units are SI throughout (bits, bit/s, cycles/s, W, s). Beamformer entries are
expressed in square roots of ``ChannelSet.power_unit`` watts, matching the
noise-normalized channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ChannelSet, Geometry, steering

ACTIVE_THRESHOLD = 1e-9


class InfeasibleLatencyError(ValueError):
    """A positive offloaded fraction faces a zero rate, frequency or bandwidth."""


class ConstraintViolationError(ValueError):
    pass


def step(x):
    """Unit step U(x): 1 where x exceeds the activity threshold, else 0."""
    return (np.asarray(x) > ACTIVE_THRESHOLD).astype(float)


@dataclass
class BeamformerSet:
    comm: np.ndarray  # (K, M, N_t); rows m outside M_k are zero
    sensing: np.ndarray  # (K, N_t)

    @property
    def aggregate(self) -> np.ndarray:
        """g_k = sum_m w_{k,m} + w_k^sen, shape (K, N_t)."""
        return self.comm.sum(axis=1) + self.sensing

    def copy(self):
        return BeamformerSet(self.comm.copy(), self.sensing.copy())

    @classmethod
    def zeros(cls, K, M, Nt):
        return cls(np.zeros((K, M, Nt), complex), np.zeros((K, Nt), complex))


@dataclass
class OffloadMatrix:
    mec: np.ndarray  # b_{k,m}, (K, M)
    cc: np.ndarray  # c_{k,m}, (K, M)

    @property
    def xb(self):
        return self.mec.sum(axis=1)

    @property
    def xc(self):
        return self.cc.sum(axis=1)

    def copy(self):
        return OffloadMatrix(self.mec.copy(), self.cc.copy())

    @classmethod
    def local(cls, K, M):
        return cls(np.zeros((K, M)), np.zeros((K, M)))


@dataclass
class TaskParams:
    task_bits: float = 1.6e6  # D_k: 0.2 MB as 0.2e6 bytes
    alpha_loc: float = 400.0
    alpha_mec: float = 400.0
    alpha_cc: float = 400.0
    kappa_loc: float = 1e-28
    kappa_mec: float = 1e-28
    p_max: float = 10 ** -0.7  # 23 dBm, W
    p_mec_max: float = 1.0  # 30 dBm, W
    f_loc_max: float = 3e8
    f_mec_max: float = 3e9
    f_cc_max: float = 1e10
    r_f_max: float = 5e8
    sinr_req: float = 10 ** 0.1  # 1 dB
    pin_local_freq: bool = False

    def __post_init__(self):
        for name in ("task_bits", "alpha_loc", "alpha_mec", "alpha_cc", "kappa_loc",
                     "kappa_mec", "p_max", "p_mec_max", "f_loc_max", "f_mec_max",
                     "f_cc_max", "r_f_max", "sinr_req"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be strictly positive")

    def vec(self, name, n):
        return np.broadcast_to(np.asarray(getattr(self, name), float), (n,)).copy()


@dataclass
class ResourcePlan:
    f_loc: np.ndarray  # (K,)
    f_mec: np.ndarray  # (K, M)
    f_cc: np.ndarray  # (K,)
    r_f: np.ndarray  # (K, M)

    def copy(self):
        return ResourcePlan(self.f_loc.copy(), self.f_mec.copy(), self.f_cc.copy(), self.r_f.copy())


@dataclass
class LatencyReport:
    local: np.ndarray
    mec: np.ndarray
    cc: np.ndarray
    total: np.ndarray
    mec_tx: np.ndarray  # (K, M)
    mec_comp: np.ndarray
    cc_tx: np.ndarray
    cc_fronthaul: np.ndarray
    cc_comp: np.ndarray  # (K,)

    @property
    def max_latency(self) -> float:
        return float(np.max(self.total))


@dataclass
class Violation:
    constraint: str
    index: tuple
    slack: float
    budget: float = field(default=0.0)


# ---------------------------------------------------------------- rates ----

def _streams_at_ap(m, beams: BeamformerSet, ch: ChannelSet):
    """Received images H_{k',m} w for every transmitted stream, shape (S, N)."""
    K = ch.num_vehicles
    imgs = []
    for kp in range(K):
        H = ch.uplink[kp, m]
        for mp in ch.serving_sets[kp]:
            imgs.append(H @ beams.comm[kp, mp])
        imgs.append(H @ beams.sensing[kp])
    return np.array(imgs)


def interference_cov(k, m, beams: BeamformerSet, ch: ChannelSet) -> np.ndarray:
    """Interference-plus-noise covariance seen by the (k, m) stream."""
    if beams.comm.shape[:2] != ch.uplink.shape[:2] or beams.comm.shape[2] != ch.uplink.shape[3]:
        raise ValueError("beamformer and channel dimensions disagree")
    if m not in ch.serving_sets[k]:
        raise ValueError(f"AP {m} does not serve vehicle {k}")
    imgs = _streams_at_ap(m, beams, ch)
    cov = np.eye(ch.uplink.shape[2], dtype=complex) + imgs.T @ imgs.conj()
    own = ch.uplink[k, m] @ beams.comm[k, m]
    return cov - np.outer(own, own.conj())


def rate(k, m, beams, ch, B, logdet=False) -> float:
    """Achievable rate (bit/s) of the (k, m) stream.

    ``logdet=True`` evaluates the determinant form literally; the default
    uses the equivalent rank-one scalar form.
    """
    Nkm = interference_cov(k, m, beams, ch)
    hw = ch.uplink[k, m] @ beams.comm[k, m]
    if logdet:
        N = Nkm.shape[0]
        M_ = np.eye(N) + np.outer(hw, hw.conj()) @ np.linalg.inv(Nkm)
        sign, ld = np.linalg.slogdet(M_)
        return float(B * ld.real / np.log(2.0))
    q = np.real(hw.conj() @ np.linalg.solve(Nkm, hw))
    return float(B * np.log2(1.0 + max(q, 0.0)))


def all_rates(beams, ch, B) -> np.ndarray:
    """Rates R_{k,m} for every serving pair, zeros elsewhere, shape (K, M)."""
    K, M = ch.num_vehicles, ch.num_aps
    N = ch.uplink.shape[2]
    R = np.zeros((K, M))
    for m in range(M):
        imgs = _streams_at_ap(m, beams, ch)
        C = np.eye(N, dtype=complex) + imgs.T @ imgs.conj()
        Cinv = np.linalg.inv(C)
        for k in range(K):
            if m not in ch.serving_sets[k]:
                continue
            hw = ch.uplink[k, m] @ beams.comm[k, m]
            # w^H H^H C^{-1} H w = q / (1 + q) with C = N_{k,m} + H w w^H H^H
            u = np.real(hw.conj() @ Cinv @ hw)
            u = min(max(u, 0.0), 1.0 - 1e-300)
            R[k, m] = -B * np.log2(1.0 - u)
    return R


# -------------------------------------------------------------- sensing ----

def sensing_sinr(k, beams: BeamformerSet, ch: ChannelSet, geom: Geometry) -> float:
    g = beams.aggregate
    Nr, Nt = ch.cross.shape[2], g.shape[1]
    a = steering(geom.target_angles[k], Nt)
    num = geom.reflection_coeffs[k] ** 2 * Nr * abs(np.vdot(a, g[k])) ** 2
    den = float(Nr)
    for kp in range(ch.num_vehicles):
        if kp != k:
            den += float(np.sum(np.abs(ch.cross[k, kp] @ g[kp]) ** 2))
    return float(num / den)


def all_sensing_sinr(beams, ch, geom) -> np.ndarray:
    return np.array([sensing_sinr(k, beams, ch, geom) for k in range(ch.num_vehicles)])


# ------------------------------------------------------------ latencies ----

def local_latency(k, task: TaskParams, plan: ResourcePlan) -> float:
    f = plan.f_loc[k]
    if f <= 0:
        raise ZeroDivisionError("local frequency must be positive")
    K = len(plan.f_loc)
    return float(task.vec("alpha_loc", K)[k] * task.vec("task_bits", K)[k] / f)


def local_power(k, task, plan, beams, power_unit=1e-3) -> float:
    K = len(plan.f_loc)
    g = beams.aggregate[k]
    return float(task.vec("kappa_loc", K)[k] * plan.f_loc[k] ** 3
                 + np.real(np.vdot(g, g)) * power_unit)


def mec_latency(k, task, plan, offload: OffloadMatrix, rates):
    """Edge latency of vehicle k and its per-AP (transmission, compute) parts."""
    K, M = offload.mec.shape
    D = task.vec("task_bits", K)[k]
    alpha = np.broadcast_to(np.asarray(task.alpha_mec, float), (M,))
    tx = np.zeros(M)
    comp = np.zeros(M)
    for m in range(M):
        b = offload.mec[k, m]
        if b <= ACTIVE_THRESHOLD:
            continue
        if rates[k, m] <= 0 or plan.f_mec[k, m] <= 0:
            raise InfeasibleLatencyError(f"b[{k},{m}]={b:g} with zero rate or frequency")
        tx[m] = b * D / rates[k, m]
        comp[m] = alpha[m] * b * D / plan.f_mec[k, m]
    return float(np.max(tx + comp, initial=0.0)), tx, comp


def cc_latency(k, task, plan, offload: OffloadMatrix, rates):
    """Cloud latency of vehicle k with (V2A, A2C, compute) parts.

    Reported as zero when the vehicle sends nothing to the cloud.
    """
    K, M = offload.cc.shape
    D = task.vec("task_bits", K)[k]
    tx = np.zeros(M)
    fh = np.zeros(M)
    if offload.cc[k].sum() <= ACTIVE_THRESHOLD:
        return 0.0, tx, fh, 0.0
    for m in range(M):
        c = offload.cc[k, m]
        if c <= ACTIVE_THRESHOLD:
            continue
        if rates[k, m] <= 0 or plan.r_f[k, m] <= 0:
            raise InfeasibleLatencyError(f"c[{k},{m}]={c:g} with zero rate or fronthaul")
        tx[m] = c * D / rates[k, m]
        fh[m] = c * D / plan.r_f[k, m]
    if plan.f_cc[k] <= 0:
        raise InfeasibleLatencyError(f"vehicle {k} uses the cloud with zero frequency")
    comp = task.vec("alpha_cc", K)[k] * D / plan.f_cc[k]
    return float(np.max(tx + fh) + comp), tx, fh, float(comp)


def mec_power(m, task, plan, offload) -> float:
    M = offload.mec.shape[1]
    kappa = np.broadcast_to(np.asarray(task.kappa_mec, float), (M,))[m]
    return float(np.sum(step(offload.mec[:, m]) * kappa * plan.f_mec[:, m] ** 3))


def total_latency(task, plan, offload: OffloadMatrix, rates, tol=1e-6) -> LatencyReport:
    K, M = offload.mec.shape
    xb, xc = offload.xb, offload.xc
    if np.any(xb + xc > 1 + tol):
        raise ConstraintViolationError("x_b + x_c exceeds 1")
    loc = np.zeros(K)
    mec = np.zeros(K)
    cc = np.zeros(K)
    mec_tx, mec_comp = np.zeros((K, M)), np.zeros((K, M))
    cc_tx, cc_fh, cc_comp = np.zeros((K, M)), np.zeros((K, M)), np.zeros(K)
    for k in range(K):
        w_loc = max(1.0 - xb[k] - xc[k], 0.0)
        if w_loc > ACTIVE_THRESHOLD:
            loc[k] = local_latency(k, task, plan)
        mec[k], mec_tx[k], mec_comp[k] = mec_latency(k, task, plan, offload, rates)
        cc[k], cc_tx[k], cc_fh[k], cc_comp[k] = cc_latency(k, task, plan, offload, rates)
    total = np.maximum(1.0 - xb - xc, 0.0) * loc + xb * mec + xc * cc
    return LatencyReport(loc, mec, cc, total, mec_tx, mec_comp, cc_tx, cc_fh, cc_comp)


def max_latency(task, plan, offload, rates) -> float:
    """Objective value; +inf when the state has an unusable active link."""
    try:
        return total_latency(task, plan, offload, rates).max_latency
    except (InfeasibleLatencyError, ZeroDivisionError, ConstraintViolationError):
        return float("inf")


# -------------------------------------------------------------- budgets ----

def received_power_watts(beams, ch) -> np.ndarray:
    """P_n * ||H_{k,m} w_{k,m}||^2 in watts, shape (K, M)."""
    img = np.einsum("kmnt,kmt->kmn", ch.uplink, beams.comm)
    return np.sum(np.abs(img) ** 2, axis=-1) * ch.noise_power


def check_budgets(task: TaskParams, plan: ResourcePlan, offload: OffloadMatrix,
                  beams: BeamformerSet, ch: ChannelSet, geom: Geometry,
                  rtol=1e-6, require_binary=True, binary_tol=1e-6):
    """Signed slacks of every constraint of the joint problem.

    Returns the list of violated constraints; a constraint counts as violated
    when ``slack < -rtol * max(|budget|, tiny)``.
    """
    K, M = offload.mec.shape
    out = []

    def probe(name, idx, budget, usage):
        slack = float(budget - usage)
        if slack < -rtol * max(abs(budget), 1e-300):
            out.append(Violation(name, idx, slack, float(budget)))

    b, c = offload.mec, offload.cc
    xb, xc = offload.xb, offload.xc
    for k in range(K):
        probe("offload_sum", (k,), 1.0, xb[k] + xc[k])
        if require_binary:
            for nm, x in (("binary_mec", xb[k]), ("binary_cc", xc[k])):
                if min(abs(x), abs(1 - x)) > binary_tol:
                    out.append(Violation(nm, (k,), -min(abs(x), abs(1 - x)), 1.0))
    for nm, arr in (("mec_fraction", b), ("cc_fraction", c)):
        lo = np.argwhere(arr < -rtol)
        hi = np.argwhere(arr > 1 + rtol)
        for idx in lo:
            out.append(Violation(nm, tuple(idx), float(arr[tuple(idx)]), 0.0))
        for idx in hi:
            out.append(Violation(nm, tuple(idx), float(1 - arr[tuple(idx)]), 1.0))

    pmax = task.vec("p_max", K)
    for k in range(K):
        probe("local_power", (k,), pmax[k], local_power(k, task, plan, beams, ch.power_unit))
        probe("local_freq_cap", (k,), task.vec("f_loc_max", K)[k], plan.f_loc[k])

    recv = received_power_watts(beams, ch)
    p_mec = np.broadcast_to(np.asarray(task.p_mec_max, float), (M,))
    F_mec = np.broadcast_to(np.asarray(task.f_mec_max, float), (M,))
    R_f = np.broadcast_to(np.asarray(task.r_f_max, float), (M,))
    for m in range(M):
        usage = mec_power(m, task, plan, offload) + float(np.sum(step(c[:, m]) * recv[:, m]))
        probe("ap_power", (m,), p_mec[m], usage)
        probe("mec_capacity", (m,), F_mec[m], float(np.sum(step(b[:, m]) * plan.f_mec[:, m])))
        probe("fronthaul", (m,), R_f[m], float(np.sum(step(c[:, m]) * plan.r_f[:, m])))
    probe("cc_capacity", (), float(task.f_cc_max), float(np.sum(xc * plan.f_cc)))

    req = task.vec("sinr_req", K)
    for k in range(K):
        probe("sensing", (k,), sensing_sinr(k, beams, ch, geom), req[k])
    return out


# ------------------------------------------------------- trial context ----

@dataclass
class State:
    """Full decision state of the joint problem."""

    offload: OffloadMatrix
    beams: BeamformerSet
    plan: ResourcePlan

    def copy(self):
        return State(self.offload.copy(), self.beams.copy(), self.plan.copy())


@dataclass
class Instance:
    """One network realization together with its task/budget parameters."""

    cfg: object  # ScenarioConfig
    task: TaskParams
    geom: Geometry
    ch: ChannelSet

    @property
    def K(self):
        return self.ch.num_vehicles

    @property
    def M(self):
        return self.ch.num_aps

    @property
    def Nt(self):
        return self.ch.uplink.shape[3]

    @property
    def B(self):
        return self.cfg.bandwidth

    def rates(self, beams):
        return all_rates(beams, self.ch, self.B)

    def objective(self, state: State, rates=None) -> float:
        if rates is None:
            rates = self.rates(state.beams)
        return max_latency(self.task, state.plan, state.offload, rates)

    def report(self, state: State) -> LatencyReport:
        return total_latency(self.task, state.plan, state.offload, self.rates(state.beams))

    def violations(self, state: State, **kw):
        return check_budgets(self.task, state.plan, state.offload, state.beams,
                             self.ch, self.geom, **kw)

    def serving_mask(self):
        mask = np.zeros((self.K, self.M), bool)
        for k, s in enumerate(self.ch.serving_sets):
            mask[k, s] = True
        return mask
