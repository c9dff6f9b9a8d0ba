import sys

import numpy as np
import pytest

from eemgrid.feeder import SCE56_EXPERIMENT_OVERRIDES, BusSpec, LineSpec, build_tree, builtin_sce56
from eemgrid.scenario import SlotData, SyntheticConfig, gen_synthetic


def make_path_feeder(n_load=1, r_ohm=0.01, x_ohm=0.01, v_base=1.0, s_base=1.0, pv_bus=None,
                     pv=0.0, s_bar_factor=1.3, peak=1.0, pf=0.8):
    """Root 0 followed by a chain 1..n_load; ohmic values equal p.u. when bases are 1."""
    buses = [(BusSpec(0), True)]
    for k in range(1, n_load + 1):
        has_pv = k == pv_bus
        buses.append((BusSpec(k, peak_load=peak, power_factor=pf,
                              pv_nameplate=pv if has_pv else 0.0,
                              inverter_rating=pv if has_pv else 0.0,
                              overload_rating=s_bar_factor * pv if has_pv else 0.0), False))
    lines = [LineSpec(k - 1, k, r_ohm, x_ohm) for k in range(1, n_load + 1)]
    return build_tree(buses, lines, v_base, s_base, name="path")


def make_slot(tree, p_c, q_c=None, pg_max=None, t=0, main=30.0, fit=15.0):
    n = tree.n_buses
    p_c = np.asarray(p_c, dtype=float)
    q_c = np.zeros(n) if q_c is None else np.asarray(q_c, dtype=float)
    pg_max = np.zeros(n) if pg_max is None else np.asarray(pg_max, dtype=float)
    return SlotData(t, p_c, q_c, pg_max, main, fit)


@pytest.fixture(scope="session")
def sce56():
    return builtin_sce56(SCE56_EXPERIMENT_OVERRIDES)


@pytest.fixture(scope="session")
def sce56_printed():
    return builtin_sce56()


@pytest.fixture(scope="session")
def fig2_slots(sce56):
    return gen_synthetic(sce56, SyntheticConfig(0.4, 0.8, 0.05, seed=0, n_slots=120))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
