from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iccs import beamform as bf
from iccs import conic, offload
from iccs.metrics import BeamformerSet, Instance, State, all_sensing_sinr, rate
from iccs.orchestrator import _initial_state
from iccs.scenario import ScenarioConfig, make_scenario, steering

from conftest import scalar_channel, tiny_instance


def random_beams(ch, rng, scale=0.5):
    K, M, N, Nt = ch.uplink.shape
    b = BeamformerSet.zeros(K, M, Nt)
    for k in range(K):
        for m in ch.serving_sets[k]:
            b.comm[k, m] = scale * (rng.standard_normal(Nt) + 1j * rng.standard_normal(Nt))
        b.sensing[k] = scale * (rng.standard_normal(Nt) + 1j * rng.standard_normal(Nt))
    return b


@pytest.fixture(scope="module")
def desk_ch():
    return make_scenario(ScenarioConfig.desk(), seed=4)


def test_receiver_and_weight_scalar_case():
    ch = scalar_channel(1.0)
    b = BeamformerSet.zeros(1, 1, 1)
    assert np.allclose(bf.mmse_receiver(0, 0, b, ch), 0)
    assert bf.wmmse_weight(0, 0, b, ch) == pytest.approx(1.0)
    b.comm[0, 0] = 1.0
    assert bf.mmse_receiver(0, 0, b, ch)[0] == pytest.approx(0.5)
    assert bf.wmmse_weight(0, 0, b, ch) == pytest.approx(2.0)
    assert bf.mse(0, 0, np.array([0.5]), b, ch) == pytest.approx(0.5)


def test_receiver_minimizes_mse(desk_ch):
    _, ch = desk_ch
    rng = np.random.default_rng(0)
    b = random_beams(ch, rng)
    k, m = 1, int(ch.serving_sets[1][0])
    v = bf.mmse_receiver(k, m, b, ch)
    best = bf.mse(k, m, v, b, ch)
    for _ in range(1000):
        dv = 1e-2 * (rng.standard_normal(v.shape) + 1j * rng.standard_normal(v.shape))
        assert bf.mse(k, m, v + dv, b, ch) >= best - 1e-12


def test_log_weight_equals_rate(desk_ch):
    _, ch = desk_ch
    rng = np.random.default_rng(1)
    B = 1e7
    for _ in range(5):
        b = random_beams(ch, rng)
        for k in range(3):
            for m in ch.serving_sets[k]:
                lhs = B * np.log2(bf.wmmse_weight(k, m, b, ch))
                assert lhs == pytest.approx(rate(k, m, b, ch, B, logdet=True), rel=1e-9)


def test_surrogate_tight_and_minorant(desk_ch):
    _, ch = desk_ch
    rng = np.random.default_rng(2)
    B = 1e7
    b = random_beams(ch, rng)
    wm = bf.wmmse_state(b, ch)
    for k in range(3):
        for m in ch.serving_sets[k]:
            s = bf.surrogate_rate(k, m, b, wm.receivers[k, m], wm.weights[k, m], ch, B)
            assert s == pytest.approx(rate(k, m, b, ch, B), rel=1e-9)
    for _ in range(50):
        b2 = random_beams(ch, rng, rng.uniform(0.1, 2.0))
        for k in range(3):
            for m in ch.serving_sets[k]:
                s = bf.surrogate_rate(k, m, b2, wm.receivers[k, m], wm.weights[k, m], ch, B)
                assert s <= rate(k, m, b2, ch, B) + 1e-9 * B


def test_surrogate_at_zero_beam(desk_ch):
    _, ch = desk_ch
    rng = np.random.default_rng(3)
    b = random_beams(ch, rng)
    wm = bf.wmmse_state(b, ch)
    k, m = 0, int(ch.serving_sets[0][0])
    v, V = wm.receivers[k, m], wm.weights[k, m]
    b0 = b.copy()
    b0.comm[k, m] = 0
    from iccs.metrics import interference_cov
    N = interference_cov(k, m, b0, ch)
    expect = 1e7 * (np.log2(V) - V * np.real(np.vdot(v, N @ v)) + 1 - V)
    assert bf.surrogate_rate(k, m, b0, v, V, ch, 1e7) == pytest.approx(expect, rel=1e-12)


def _lin(K=3, Nt=4, seed=0):
    rng = np.random.default_rng(seed)
    anchors = rng.standard_normal((K, Nt)) + 1j * rng.standard_normal((K, Nt))
    steer = np.array([steering(t, Nt) for t in rng.uniform(0, np.pi, K)])
    return bf.SensingLinearization(anchors, steer, Nt)


class _Geom:
    reflection_coeffs = np.array([0.9, 0.85, 1.0])


@given(st.integers(0, 10_000))
@settings(max_examples=50)
def test_sensing_minorant_dominance(seed):
    rng = np.random.default_rng(seed)
    lin = _lin(seed=seed)
    for k in range(3):
        g = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        assert bf.sensing_minorant(k, g, lin, _Geom) <= bf.sensing_quadratic(k, g, lin, _Geom) + 1e-10
        g0 = lin.anchors[k]
        assert bf.sensing_minorant(k, g0, lin, _Geom) == pytest.approx(
            bf.sensing_quadratic(k, g0, lin, _Geom), abs=1e-10)


def test_sensing_minorant_at_zero():
    lin = _lin()
    g0 = lin.anchors[0]
    val = bf.sensing_minorant(0, np.zeros(4), lin, _Geom)
    assert val == pytest.approx(-0.81 * np.real(np.vdot(g0, lin.matrix(0) @ g0)))
    assert val <= 0


def test_socp_cone_kinds(desk_inst):
    st_ = _initial_state(desk_inst, "mec")
    wm = bf.wmmse_state(st_.beams, desk_inst.ch)
    lin = bf.sensing_linearization(st_.beams, desk_inst.ch, desk_inst.geom)
    prob, _ = bf.build_beam_socp(desk_inst, st_, wm, lin)
    assert {c.kind for c in prob.cones} <= {"nonneg", "soc", "rsoc"}


def _phase1_point(inst, plan, g, iters=5):
    # one SCA step per call; margin -inf accepts the step's solution
    for _ in range(iters):
        g = bf._sensing_phase1(inst, plan, bf._sensing_only(inst, g), max_iter=1, margin=-np.inf)
    return g[0]


def test_matched_beam_single_vehicle():
    from iccs.resources import equal_share_plan
    inst = tiny_instance(h=0.0, Nt=4, Nr=4, theta=0.7)
    plan = equal_share_plan(inst)
    g = _phase1_point(inst, plan, np.array([[1.0, 0.5j, -0.2, 0.1]]))
    a = steering(0.7, 4)
    corr = abs(np.vdot(a, g)) / (np.linalg.norm(a) * np.linalg.norm(g))
    assert corr > 0.999


def _socp_t(inst, st_):
    wm = bf.wmmse_state(st_.beams, inst.ch)
    lin = bf.sensing_linearization(st_.beams, inst.ch, inst.geom)
    prob, lay = bf.build_beam_socp(inst, st_, wm, lin)
    sol = conic.solve(prob)
    assert sol.status == "optimal"
    return sol.x[lay.t]


def test_doubling_power_never_hurts(desk_inst):
    st_ = _initial_state(desk_inst, "cc")
    t1 = _socp_t(desk_inst, st_)
    task2 = replace(desk_inst.task, p_max=2 * desk_inst.task.p_max)
    inst2 = Instance(desk_inst.cfg, task2, desk_inst.geom, desk_inst.ch)
    t2 = _socp_t(inst2, st_)
    assert t2 <= t1 + 1e-7


def test_algorithm2_monotone_and_feasible(desk_inst):
    st_ = _initial_state(desk_inst, "proposed")
    st_, _ = offload.run_algorithm1(desk_inst, st_)
    beams, trace, residuals = bf.run_algorithm2(desk_inst, st_)
    obj = np.array(trace.objective)
    assert np.all(np.diff(obj) <= 1e-6)
    sinr = all_sensing_sinr(beams, desk_inst.ch, desk_inst.geom)
    assert np.all(sinr >= desk_inst.task.sinr_req * (1 - 1e-6))
    assert all(max(r.values()) < 1e-7 for r in residuals)


def test_algorithm2_loose_tolerance(desk_inst):
    st_ = _initial_state(desk_inst, "cc")
    _, trace, _ = bf.run_algorithm2(desk_inst, st_, zeta=1.0)
    assert len(trace.iteration) <= 2


def test_initial_beams_feasible(desk_inst):
    from iccs.resources import equal_share_plan
    plan = equal_share_plan(desk_inst)
    beams = bf.initial_beams(desk_inst, plan)
    assert beams is not None
    assert bf.beams_feasible(desk_inst, beams, plan)
