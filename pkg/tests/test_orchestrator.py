from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iccs import cli, orchestrator as orc
from iccs.config import ConfigError, config_from_dict, config_to_dict, dump_config, load_config
from iccs.orchestrator import (RunConfig, SweepRow, brute_force_oracle, emit_csv, emit_traces,
                               monte_carlo, read_csv, run_all_schemes, run_ao, run_benchmark)


def tiny_cfg(**task):
    cfg = RunConfig.desk()
    cfg = replace(cfg, scenario=replace(cfg.scenario, num_aps=2, num_vehicles=2, serving_set_size=1))
    if task:
        cfg = replace(cfg, task=replace(cfg.task, **task))
    return cfg


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(zeta_outer=0.0)
    with pytest.raises(ValueError):
        RunConfig(trials=0)
    with pytest.raises(ValueError):
        RunConfig(scheme="edge")
    with pytest.raises(ValueError):
        RunConfig(axis="M")


def test_determinism(desk_cfg):
    a = run_ao(desk_cfg, 2)
    b = run_ao(desk_cfg, 2)
    assert a.trace == b.trace
    assert np.array_equal(a.report.total, b.report.total)
    assert np.array_equal(a.state.offload.mec, b.state.offload.mec)


def test_ao_trace_monotone(desk_cfg):
    r = run_ao(desk_cfg, 5)
    assert not r.failed and r.converged
    assert np.all(np.diff(r.trace) <= 1e-6)
    assert r.slacks == []


def test_local_scheme_ignores_fronthaul(desk_cfg):
    a = run_benchmark(desk_cfg, 1, "local")
    cfg2 = desk_cfg.with_axis_value("R_f_max", 1e6)
    b = run_benchmark(cfg2, 1, "local")
    assert a.max_latency == pytest.approx(b.max_latency, rel=1e-12)
    assert np.all(a.state.offload.xb == 0) and np.all(a.state.offload.xc == 0)


def test_mec_relaxation_lower_bound(desk_cfg):
    finite = run_benchmark(desk_cfg, 1, "mec").max_latency
    big = replace(desk_cfg, task=replace(desk_cfg.task, f_mec_max=1e15, p_mec_max=1e15))
    assert run_benchmark(big, 1, "mec").max_latency <= finite + 1e-6


def test_benchmark_rejects_proposed(desk_cfg):
    with pytest.raises(ValueError):
        run_benchmark(desk_cfg, 1, "proposed")


def test_proposed_dominates_benchmarks_per_seed(desk_cfg):
    out = run_all_schemes(desk_cfg, 3)
    p = out["proposed"].max_latency
    for s in orc.BENCHMARKS:
        assert p <= out[s].max_latency + 1e-6


def test_oracle_local_branch():
    # 1 kHz of bandwidth makes every upload take tens of seconds
    cfg = RunConfig.desk()
    cfg = replace(cfg, scenario=replace(cfg.scenario, num_aps=1, num_vehicles=1,
                                        serving_set_size=1, bandwidth=1e3))
    v, pat = brute_force_oracle(cfg, 0, return_pattern=True)
    assert v == pytest.approx(400 * 1.6e6 / 3e8, rel=1e-9)
    assert pat[0][0] == "local"


def test_oracle_limits(desk_cfg):
    with pytest.raises(ValueError):
        brute_force_oracle(desk_cfg, 0)


def test_oracle_order_invariant(monkeypatch):
    cfg = tiny_cfg()
    base = brute_force_oracle(cfg, 0)
    orig = orc._patterns
    monkeypatch.setattr(orc, "_patterns", lambda inst: list(reversed(orig(inst))))
    assert brute_force_oracle(cfg, 0) == pytest.approx(base, rel=1e-12)


def test_oracle_below_algorithm():
    cfg = tiny_cfg()
    out = run_all_schemes(cfg, 1)
    o = brute_force_oracle(cfg, 1)
    assert o <= out["proposed"].max_latency + 1e-6


def test_monte_carlo_shared_seeds(desk_cfg):
    cfg = replace(desk_cfg, trials=2, seed=1)
    rows, results = monte_carlo(cfg, "F_CC_max", [1e10], schemes=("local", "cc"))
    assert len(rows) == 2
    r = results[1e10]
    for seed in (1, 2):
        # every scheme sees the same realization
        assert r[seed]["local"].seed == r[seed]["cc"].seed == seed
    assert all(row.n_trials + row.n_failed == 2 for row in rows)


def test_csv_empty_and_roundtrip(tmp_path):
    p = tmp_path / "empty.csv"
    emit_csv([], p)
    assert p.read_text().strip() == ",".join(orc.CSV_COLUMNS)
    rows = [SweepRow(2.0, "cc", 0.123456789012345, 0.01, 5, 1),
            SweepRow(1.0, "local", 2.1333333333333333, 0.0, 5, 0),
            SweepRow(1.0, "proposed", 0.2, 1e-3, 5, 0)]
    p = tmp_path / "rows.csv"
    emit_csv(rows, p)
    back = read_csv(p)
    assert [(r.sweep_value, r.scheme) for r in back] == [(1.0, "proposed"), (1.0, "local"), (2.0, "cc")]
    assert {(r.sweep_value, r.scheme): r for r in back} == {(r.sweep_value, r.scheme): r for r in rows}


@given(st.lists(st.tuples(st.floats(0, 1e12, allow_nan=False), st.sampled_from(orc.SCHEMES),
                          st.floats(0, 10), st.floats(0, 1), st.integers(0, 100), st.integers(0, 100)),
                max_size=8))
@settings(max_examples=25, deadline=None)
def test_csv_roundtrip_property(tmp_path_factory, items):
    rows = [SweepRow(*it) for it in items]
    p = tmp_path_factory.mktemp("csv") / "x.csv"
    emit_csv(rows, p)
    back = read_csv(p)
    key = lambda r: (r.sweep_value, orc.SCHEMES.index(r.scheme))
    assert [key(r) for r in back] == sorted(key(r) for r in rows)
    assert sorted(back, key=lambda r: (key(r), r.mean_latency_s, r.stderr_s, r.n_trials)) == \
        sorted(rows, key=lambda r: (key(r), r.mean_latency_s, r.stderr_s, r.n_trials))


def test_csv_write_error(tmp_path):
    with pytest.raises(OSError, match="cannot write"):
        emit_csv([], tmp_path / "missing" / "x.csv")


def test_traces_file(tmp_path, desk_cfg):
    r = run_ao(desk_cfg, 1)
    p = tmp_path / "t.csv"
    emit_traces([r], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "seed,iteration,objective_s"
    assert len(lines) == 1 + len(r.trace)


# ---------------------------------------------------------- config ----

def test_config_units():
    cfg = config_from_dict({"D": 0.2, "P_max": 23, "P_MEC_max": 30, "SINR_req": 1, "B": 10, "K": 2,
                            "kappa_CC": 1e-28})
    assert cfg.task.task_bits == pytest.approx(1.6e6)
    assert cfg.task.p_max == pytest.approx(0.19953, rel=1e-4)
    assert cfg.task.p_mec_max == pytest.approx(1.0)
    assert cfg.task.sinr_req == pytest.approx(10 ** 0.1)
    assert cfg.scenario.bandwidth == 1e7 and cfg.scenario.num_vehicles == 2


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        config_from_dict({"Q": 3})
    with pytest.raises(ConfigError):
        config_from_dict({"algorithm": {"zeta": 1}})
    with pytest.raises(ConfigError):
        config_from_dict({"algorithm": {"zeta_outer": -1}})


def test_config_roundtrip(tmp_path):
    cfg = replace(RunConfig.desk(), trials=3, axis="N_t", values=(4.0, 8.0))
    p = tmp_path / "c.yaml"
    dump_config(cfg, p)
    back = load_config(p)
    assert back.scenario == cfg.scenario and back.pathloss == cfg.pathloss
    assert back.trials == 3 and back.axis == "N_t" and back.values == (4.0, 8.0)
    for name in ("task_bits", "p_max", "p_mec_max", "sinr_req", "f_cc_max"):
        assert getattr(back.task, name) == pytest.approx(getattr(cfg.task, name), rel=1e-12)


def test_shipped_configs():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    full = load_config(root / "table1.yaml")
    assert (full.scenario.num_aps, full.scenario.num_vehicles, full.scenario.tx_antennas) == (6, 6, 8)
    assert full.task == RunConfig().task
    desk = load_config(root / "desk.yaml")
    assert desk.scenario == RunConfig.desk().scenario
    tiny = load_config(root / "tiny.yaml")
    assert (tiny.scenario.num_aps, tiny.scenario.num_vehicles) == (2, 2)


# ------------------------------------------------------------- CLI ----

def test_cli_run(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert cli.main(["run", "--seed", "1", "--scheme", "cc", "--out", str(out)]) == 0
    import json
    d = json.loads(out.read_text())
    assert d["scheme"] == "cc" and d["max_latency_s"] > 0


def test_cli_sweep_and_convergence(tmp_path, capsys):
    p = tmp_path / "s.csv"
    assert cli.main(["sweep", "--axis", "R_f_max", "--trials", "1", "--seed", "1",
                     "--scheme", "local", "--out", str(p)]) == 0
    rows = read_csv(p)
    assert {r.scheme for r in rows} == {"local"} and len(rows) == 3
    q = tmp_path / "c.csv"
    assert cli.main(["convergence", "--trials", "1", "--seed", "1", "--out", str(q)]) == 0
    assert q.read_text().startswith("seed,iteration,objective_s")
    assert cli.main(["sweep", "--trials", "1"]) == 2


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("Q: 1\n")
    assert cli.main(["run", "--config", str(p)]) == 2


def test_cli_oracle_reduces_instance(tmp_path, capsys):
    p = tmp_path / "o.csv"
    assert cli.main(["oracle", "--trials", "1", "--seed", "0", "--out", str(p)]) == 0
    assert "reduced" in capsys.readouterr().err
    lines = p.read_text().splitlines()
    assert lines[0] == "seed,oracle_s,proposed_s,best_benchmark_s"
    for ln in lines[1:]:
        _, o, prop, bench = map(float, ln.split(","))
        assert o <= prop + 1e-6 and prop <= bench + 1e-6
