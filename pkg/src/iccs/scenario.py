"""Network geometry, path loss and channel generation for one Monte-Carlo trial.

All channels returned by :func:`draw_channels` are divided by the square
root of the receiver noise power (expressed in the beamformer power unit),
so every downstream SINR/rate expression uses an identity noise covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidParameterError(ValueError):
    """Raised when a physical parameter is outside its valid range."""


@dataclass
class ScenarioConfig:
    """Network dimensions. Defaults follow the paper's simulation table."""

    num_aps: int = 6  # M
    antennas_per_ap: int = 8  # N
    num_vehicles: int = 6  # K
    tx_antennas: int = 8  # N_t
    rx_antennas: int = 8  # N_r
    bandwidth: float = 10e6  # B, Hz
    serving_set_size: int = 3  # L = |M_k|
    area_side: float = 0.2  # km
    rng_seed: int = 0
    # Linear unit (in W) of beamformer power. Budgets given in dBm are
    # referenced to 1 mW, and the radar echo term is evaluated in this unit.
    power_unit: float = 1e-3

    def __post_init__(self):
        counts = (self.num_aps, self.antennas_per_ap, self.num_vehicles,
                  self.tx_antennas, self.rx_antennas, self.serving_set_size)
        if min(counts) < 1:
            raise InvalidParameterError("all counts must be >= 1")
        if self.serving_set_size > self.num_aps:
            raise InvalidParameterError("serving_set_size must not exceed num_aps")
        if self.area_side <= 0 or self.bandwidth <= 0 or self.power_unit <= 0:
            raise InvalidParameterError("area_side, bandwidth and power_unit must be positive")

    @classmethod
    def desk(cls, **overrides) -> "ScenarioConfig":
        """Small configuration used by the test-suite and quick sweeps."""
        base = dict(num_aps=4, antennas_per_ap=4, num_vehicles=3,
                    tx_antennas=4, rx_antennas=4, serving_set_size=2)
        base.update(overrides)
        return cls(**base)


@dataclass
class PathLossParams:
    carrier_freq: float = 1900.0  # MHz
    ap_height: float = 15.0  # m
    user_height: float = 1.65  # m
    breakpoint_d0: float = 0.01  # km
    breakpoint_d1: float = 0.05  # km
    noise_figure_db: float = 9.0
    boltzmann: float = 1.381e-23
    temperature: float = 290.0
    min_distance: float = 0.005  # km, clamp against near-singular gains

    def __post_init__(self):
        if not 0 < self.breakpoint_d0 < self.breakpoint_d1:
            raise InvalidParameterError("need 0 < d0 < d1")
        if self.min_distance <= 0:
            raise InvalidParameterError("min_distance must be positive")


@dataclass
class Geometry:
    ap_positions: np.ndarray  # (M, 2) km
    vehicle_positions: np.ndarray  # (K, 2) km
    target_angles: np.ndarray  # (K,) rad
    target_distances: np.ndarray  # (K,) m
    reflection_coeffs: np.ndarray  # (K,)
    ap_distances: np.ndarray  # (K, M) km
    vehicle_distances: np.ndarray  # (K, K) km


@dataclass
class ChannelSet:
    """Noise-normalized channels of one realization.

    ``uplink[k, m]`` is the ``N x N_t`` matrix from vehicle ``k`` to AP ``m``;
    ``cross[k, kp]`` is the ``N_r x N_t`` interference matrix from vehicle
    ``kp`` into the radar receiver of vehicle ``k``. Self pairs of ``cross``
    are zero-filled and never read.
    """

    uplink: np.ndarray  # (K, M, N, N_t)
    cross: np.ndarray  # (K, K, N_r, N_t)
    beta_ap: np.ndarray  # (K, M) linear gains
    beta_cross: np.ndarray  # (K, K) linear gains, diagonal unused
    serving_sets: list  # list of sorted index arrays
    noise_power: float  # W
    power_unit: float = 1e-3
    extra: dict = field(default_factory=dict)

    @property
    def num_vehicles(self):
        return self.uplink.shape[0]

    @property
    def num_aps(self):
        return self.uplink.shape[1]


def lloss_db(params: PathLossParams) -> float:
    """Frequency/height dependent constant of the three-slope model (dB)."""
    f, h_ap, h_u = params.carrier_freq, params.ap_height, params.user_height
    if f <= 0 or h_ap <= 0 or h_u < 0:
        raise InvalidParameterError("carrier_freq and ap_height must be positive, user_height >= 0")
    lf = np.log10(f)
    return float(46.3 + 33.9 * lf - 13.82 * np.log10(h_ap)
                 - (1.1 * lf - 0.7) * h_u + (1.56 * lf - 0.8))


def pathloss_db(d_km, params: PathLossParams):
    """Three-slope path loss in dB at distance ``d_km`` (scalar or array)."""
    d = np.asarray(d_km, dtype=float)
    if np.any(d <= 0):
        raise InvalidParameterError("distance must be positive")
    L = lloss_db(params)
    d0, d1 = params.breakpoint_d0, params.breakpoint_d1
    far = L + 35.0 * np.log10(d)
    near = L + 15.0 * np.log10(d1) + 20.0 * np.log10(d0)
    mid = L + 15.0 * np.log10(d1) + 20.0 * np.log10(d)
    pl = np.where(d > d1, far, np.where(d <= d0, near, mid))
    return float(pl) if pl.ndim == 0 else pl


def noise_power_watts(B: float, params: PathLossParams) -> float:
    if B <= 0:
        raise InvalidParameterError("bandwidth must be positive")
    return B * params.boltzmann * params.temperature * 10.0 ** (params.noise_figure_db / 10.0)


def steering(theta: float, n: int) -> np.ndarray:
    """Half-wavelength ULA steering vector of length ``n``."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    return np.exp(-1j * np.pi * np.arange(n) * np.sin(theta))


def place_network(cfg: ScenarioConfig, rng: np.random.Generator) -> Geometry:
    M, K, side = cfg.num_aps, cfg.num_vehicles, cfg.area_side
    aps = rng.uniform(0.0, side, size=(M, 2))
    veh = rng.uniform(0.0, side, size=(K, 2))
    theta = rng.uniform(0.0, np.pi, size=K)
    tdist = rng.uniform(40.0, 50.0, size=K)
    eta = rng.uniform(0.8, 1.0, size=K)
    d_ap = np.linalg.norm(veh[:, None, :] - aps[None, :, :], axis=-1)
    d_vv = np.linalg.norm(veh[:, None, :] - veh[None, :, :], axis=-1)
    return Geometry(aps, veh, theta, tdist, eta, d_ap, d_vv)


def select_serving_aps(beta: np.ndarray, L: int) -> list:
    """Indices of the ``L`` strongest APs per vehicle (ties -> lowest index)."""
    beta = np.asarray(beta, dtype=float)
    if L > beta.shape[1]:
        raise InvalidParameterError("L must not exceed the number of APs")
    sets = []
    for row in beta:
        # stable sort on -beta keeps the lowest index first among equals
        order = np.argsort(-row, kind="stable")[:L]
        sets.append(np.sort(order))
    return sets


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channels(geom: Geometry, cfg: ScenarioConfig, params: PathLossParams,
                  rng: np.random.Generator) -> ChannelSet:
    K, M = cfg.num_vehicles, cfg.num_aps
    N, Nt, Nr = cfg.antennas_per_ap, cfg.tx_antennas, cfg.rx_antennas
    pn = noise_power_watts(cfg.bandwidth, params)
    pn_unit = pn / cfg.power_unit

    d_ap = np.maximum(geom.ap_distances, params.min_distance)
    beta_ap = 10.0 ** (-pathloss_db(d_ap, params) / 10.0)
    d_vv = np.maximum(geom.vehicle_distances, params.min_distance)
    beta_vv = 10.0 ** (-pathloss_db(d_vv, params) / 10.0)
    np.fill_diagonal(beta_vv, 0.0)

    uplink = _cn(rng, (K, M, N, Nt)) * np.sqrt(beta_ap / pn_unit)[:, :, None, None]
    cross = _cn(rng, (K, K, Nr, Nt)) * np.sqrt(beta_vv / pn_unit)[:, :, None, None]
    for k in range(K):
        cross[k, k] = 0.0
    return ChannelSet(uplink=uplink, cross=cross, beta_ap=beta_ap, beta_cross=beta_vv,
                      serving_sets=select_serving_aps(beta_ap, cfg.serving_set_size),
                      noise_power=pn, power_unit=cfg.power_unit)


def make_scenario(cfg: ScenarioConfig, params: PathLossParams | None = None,
                  seed: int | None = None):
    """Geometry and channels for one trial, a pure function of (cfg, seed)."""
    params = params or PathLossParams()
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    geom = place_network(cfg, rng)
    return geom, draw_channels(geom, cfg, params, rng)
