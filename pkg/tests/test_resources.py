from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iccs import offload
from iccs.metrics import BeamformerSet, Instance, OffloadMatrix, State, TaskParams
from iccs.orchestrator import _initial_state
from iccs.resources import build_resource_problem, equal_share_plan, solve_resources

from conftest import tiny_instance


def _local_state(inst, beam=0.5):
    plan = equal_share_plan(inst)
    plan.f_loc[:] = 1e8  # start below the optimum
    b = BeamformerSet.zeros(inst.K, inst.M, inst.Nt)
    b.sensing[:] = beam
    return State(OffloadMatrix.local(inst.K, inst.M), b, plan)


@given(st.floats(1e-3, 0.2))
@settings(max_examples=15, deadline=None)
def test_single_local_vehicle_closed_form(p_max):
    task = TaskParams(p_max=p_max, f_loc_max=1e12)
    inst = tiny_instance(task=task)
    st_ = _local_state(inst)
    out = solve_resources(inst, st_)
    residual = p_max - 0.25 * 1e-3  # |g|^2 = 0.25 in mW units
    f_star = (residual / task.kappa_loc) ** (1 / 3)
    assert out.plan.f_loc[0] == pytest.approx(f_star, rel=1e-5)
    assert out.objective == pytest.approx(400 * 1.6e6 / f_star, rel=1e-5)


def test_pinned_local_frequency():
    task = TaskParams(pin_local_freq=True)
    inst = tiny_instance(task=task)
    out = solve_resources(inst, _local_state(inst))
    assert out.plan.f_loc[0] == pytest.approx(3e8)


def _two_on_one_ap():
    inst = tiny_instance(h=5.0, K=2, M=1, task=TaskParams(p_mec_max=100.0))
    inst.ch.uplink[1] = inst.ch.uplink[0]
    plan = equal_share_plan(inst)
    plan.f_mec[:] = [[0.5e9], [1.0e9]]
    b = BeamformerSet.zeros(2, 1, 1)
    b.comm[:] = 1.0
    b.sensing[:] = 0.1
    return inst, State(OffloadMatrix(np.ones((2, 1)), np.zeros((2, 1))), b, plan)


def test_symmetric_mec_split():
    inst, st_ = _two_on_one_ap()
    out = solve_resources(inst, st_)
    assert out.accepted
    assert out.plan.f_mec[0, 0] == pytest.approx(out.plan.f_mec[1, 0], rel=1e-5)
    assert out.plan.f_mec.sum() <= inst.task.f_mec_max + 1e-6


def test_inactive_entries_get_nothing(desk_inst):
    st_ = _initial_state(desk_inst, "mec")
    out = solve_resources(desk_inst, st_)
    assert np.all(out.plan.r_f == 0)
    assert np.all(out.plan.f_cc == 0)
    mask = desk_inst.serving_mask()
    assert np.all(out.plan.f_mec[~mask] == 0)


def test_fixed_point(desk_inst):
    st_ = _initial_state(desk_inst, "cc")
    first = solve_resources(desk_inst, st_)
    second = solve_resources(desk_inst, State(st_.offload, st_.beams, first.plan))
    assert second.objective == pytest.approx(first.objective, rel=1e-8, abs=1e-8)


def test_more_cloud_capacity_never_hurts(desk_inst):
    st_ = _initial_state(desk_inst, "cc")
    t1 = solve_resources(desk_inst, st_).objective
    task2 = replace(desk_inst.task, f_cc_max=2 * desk_inst.task.f_cc_max)
    inst2 = Instance(desk_inst.cfg, task2, desk_inst.geom, desk_inst.ch)
    t2 = solve_resources(inst2, st_).objective
    assert t2 <= t1 + 1e-9


def test_budgets_hold_after_solve(desk_inst):
    st_ = _initial_state(desk_inst, "proposed")
    st_, _ = offload.run_algorithm1(desk_inst, st_)
    out = solve_resources(desk_inst, st_)
    cand = State(st_.offload, st_.beams, out.plan)
    v = [x for x in desk_inst.violations(cand) if x.constraint != "sensing"]
    assert v == []
    active = st_.offload.mec > 1e-9
    assert np.all((active * out.plan.f_mec).sum(axis=0) <= desk_inst.task.f_mec_max + 1e-6)


def test_cube_constraints_in_problem(desk_inst):
    st_ = _initial_state(desk_inst, "mec")
    prob, _ = build_resource_problem(desk_inst, st_, desk_inst.rates(st_.beams))
    assert {c.kind for c in prob.cones} <= {"nonneg", "rsoc"}
