"""Shared fixtures: direct WorldState construction without a full Simulation."""

import numpy as np
import pytest

from axsched import phy
from axsched.ru import enumerate_goals, make_layout
from axsched.sim import WorldState

LAYOUT = make_layout(20)
GOALS = enumerate_goals(LAYOUT)


def make_world(csi, buffers, n_rx, n_tx, tx_power_w=10 ** (15 / 10) / 1000,
               noise_power_w=1.56e-15, timing=None):
    return WorldState(
        csi=np.asarray(csi, dtype=complex),
        buffers=np.asarray(buffers, dtype=np.int64),
        layout=LAYOUT,
        goal_table=GOALS,
        mcs=phy.default_mcs_table(),
        n_rx=n_rx,
        n_tx=n_tx,
        tx_power_w=tx_power_w,
        noise_power_w=noise_power_w,
        phy=timing or phy.PhyParams(),
    )


def random_world(rng, k, n_rx, n_tx=1, buffer_high=20, gain_scale=3e-6):
    """Random flat-statistics world with channel magnitudes in the MCS sweet spot."""
    shape = (LAYOUT.num_subcarriers, k, n_rx, n_tx)
    csi = gain_scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    buffers = rng.integers(0, buffer_high, size=k)
    return make_world(csi, buffers, n_rx, n_tx)


@pytest.fixture
def layout():
    return LAYOUT


@pytest.fixture
def goal_table():
    return GOALS
