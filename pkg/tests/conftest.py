import numpy as np
import pytest

from iccs.metrics import Instance, TaskParams
from iccs.orchestrator import RunConfig, build_instance
from iccs.scenario import ChannelSet, Geometry, ScenarioConfig


@pytest.fixture(scope="session")
def desk_cfg():
    return RunConfig.desk()


@pytest.fixture(scope="session")
def desk_inst(desk_cfg):
    return build_instance(desk_cfg, 1)


def scalar_channel(h=1.0, K=1, M=1, N=1, Nt=1, Nr=1, serving=None):
    """Hand-made ChannelSet with every uplink entry equal to ``h``."""
    up = np.full((K, M, N, Nt), h, complex)
    cross = np.zeros((K, K, Nr, Nt), complex)
    sets = serving or [np.arange(M) for _ in range(K)]
    return ChannelSet(up, cross, np.ones((K, M)), np.zeros((K, K)), sets, 1e-13)


def simple_geometry(K=1, M=1, theta=0.0, eta=1.0):
    return Geometry(np.zeros((M, 2)), np.zeros((K, 2)), np.full(K, theta),
                    np.full(K, 45.0), np.full(K, eta), np.ones((K, M)), np.ones((K, K)))


def tiny_instance(h=1.0, K=1, M=1, N=1, Nt=1, Nr=1, task=None, B=1e7, theta=0.0):
    cfg = ScenarioConfig(num_aps=M, antennas_per_ap=N, num_vehicles=K, tx_antennas=Nt,
                         rx_antennas=Nr, bandwidth=B, serving_set_size=M)
    return Instance(cfg, task or TaskParams(), simple_geometry(K, M, theta), scalar_channel(h, K, M, N, Nt, Nr))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for text in mod.summary_lines():
        terminalreporter.write_line(text)
