"""YAML run configuration.

Keys mirror the simulation-parameter table names. Units are the ones a
reader of that table expects and are converted to SI on load:

======================  =========================  ======================
key                     meaning                    unit in the file
======================  =========================  ======================
M                       number of APs              count
N                       antennas per AP            count
K                       number of vehicles         count
N_t / N_r               vehicle tx / rx antennas   count
B                       transmission bandwidth     MHz
L                       serving-set size |M_k|     count
alpha_Loc               local intensity            cycles/bit
alpha_MEC               MEC intensity              cycles/bit
alpha_CC                cloud intensity            cycles/bit
D                       task size                  MB (1 MB = 1e6 bytes)
f_Loc                   local frequency (cap)      cycles/s
F_MEC                   MEC server capacity        cycles/s
F_CC_max                cloud capacity             cycles/s
R_f_max                 fronthaul capacity per AP  bit/s
kappa_Loc, kappa_MEC    switched capacitance       W s^3 / cycle^3
kappa_CC                accepted, unused (no cloud power budget)
SINR_req                sensing SINR requirement   dB
P_max                   vehicle power budget       dBm
P_MEC_max               AP power budget            dBm
area_side               square side                km
pin_f_Loc               fix f_Loc at its cap       bool
======================  =========================  ======================

Optional sections ``pathloss`` (PathLossParams fields, same units as the
dataclass) and ``algorithm`` (zeta_offload, zeta_beam, zeta_outer,
max_outer, max_offload_iter, max_beam_iter, dominance_restart) and ``run``
(scheme, axis, values, trials, seed, out, workers).
"""

from __future__ import annotations

from dataclasses import asdict, fields, replace

import yaml

from .metrics import TaskParams
from .orchestrator import RunConfig
from .scenario import PathLossParams, ScenarioConfig


def _db_to_lin(x):
    return 10.0 ** (float(x) / 10.0)


def _dbm_to_w(x):
    return 10.0 ** ((float(x) - 30.0) / 10.0)


# key -> (section, field, to SI, from SI)
KEYS = {
    "M": ("scenario", "num_aps", int, int),
    "N": ("scenario", "antennas_per_ap", int, int),
    "K": ("scenario", "num_vehicles", int, int),
    "N_t": ("scenario", "tx_antennas", int, int),
    "N_r": ("scenario", "rx_antennas", int, int),
    "B": ("scenario", "bandwidth", lambda v: float(v) * 1e6, lambda v: v / 1e6),
    "L": ("scenario", "serving_set_size", int, int),
    "area_side": ("scenario", "area_side", float, float),
    "alpha_Loc": ("task", "alpha_loc", float, float),
    "alpha_MEC": ("task", "alpha_mec", float, float),
    "alpha_CC": ("task", "alpha_cc", float, float),
    "D": ("task", "task_bits", lambda v: float(v) * 8e6, lambda v: v / 8e6),
    "f_Loc": ("task", "f_loc_max", float, float),
    "F_MEC": ("task", "f_mec_max", float, float),
    "F_CC_max": ("task", "f_cc_max", float, float),
    "R_f_max": ("task", "r_f_max", float, float),
    "kappa_Loc": ("task", "kappa_loc", float, float),
    "kappa_MEC": ("task", "kappa_mec", float, float),
    "SINR_req": ("task", "sinr_req", _db_to_lin, None),
    "P_max": ("task", "p_max", _dbm_to_w, None),
    "P_MEC_max": ("task", "p_mec_max", _dbm_to_w, None),
    "pin_f_Loc": ("task", "pin_local_freq", bool, bool),
}
IGNORED = {"kappa_CC"}
ALGORITHM_KEYS = ("zeta_offload", "zeta_beam", "zeta_outer", "max_outer",
                  "max_offload_iter", "max_beam_iter", "dominance_restart")
RUN_KEYS = ("scheme", "axis", "values", "trials", "seed", "out", "workers")


class ConfigError(ValueError):
    pass


def config_from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a RunConfig from parsed YAML; unspecified keys keep ``base`` values."""
    cfg = base if base is not None else RunConfig()
    data = dict(data or {})
    parts = {"scenario": {}, "task": {}}
    for key in list(data):
        if key in KEYS:
            section, name, conv, _ = KEYS[key]
            parts[section][name] = conv(data.pop(key))
        elif key in IGNORED:
            data.pop(key)
    pl = data.pop("pathloss", None) or {}
    alg = data.pop("algorithm", None) or {}
    run = data.pop("run", None) or {}
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    known_pl = {f.name for f in fields(PathLossParams)}
    bad = set(pl) - known_pl
    bad |= {f"algorithm.{k}" for k in set(alg) - set(ALGORITHM_KEYS)}
    bad |= {f"run.{k}" for k in set(run) - set(RUN_KEYS)}
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    if "values" in run and run["values"] is not None:
        run["values"] = tuple(float(v) for v in run["values"])
    try:
        return replace(
            cfg,
            scenario=replace(cfg.scenario, **parts["scenario"]),
            task=replace(cfg.task, **parts["task"]),
            pathloss=replace(cfg.pathloss, **pl),
            **alg, **run,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data, base)


def config_to_dict(cfg: RunConfig) -> dict:
    """Inverse of :func:`config_from_dict` (dB/dBm values are written back in dB/dBm)."""
    import math
    out = {}
    for key, (section, name, _, back) in KEYS.items():
        val = getattr(getattr(cfg, section), name)
        if back is not None:
            out[key] = back(val)
    out["SINR_req"] = 10.0 * math.log10(cfg.task.sinr_req)
    out["P_max"] = 10.0 * math.log10(cfg.task.p_max) + 30.0
    out["P_MEC_max"] = 10.0 * math.log10(cfg.task.p_mec_max) + 30.0
    out["pathloss"] = asdict(cfg.pathloss)
    out["algorithm"] = {k: getattr(cfg, k) for k in ALGORITHM_KEYS}
    out["run"] = {k: getattr(cfg, k) for k in RUN_KEYS}
    out["run"]["values"] = list(cfg.values)
    return out


def dump_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
