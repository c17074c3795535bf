"""Buffer dynamics: arrivals, departures, conservation."""

import numpy as np
import pytest

from axsched.traffic import BufferState, DepartureError, arrivals, depart


def test_zero_rate_leaves_buffers_unchanged():
    state = BufferState(counts=np.array([3, 0, 7]))
    out = arrivals(state, 0.0, 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.counts, state.counts)


def test_arrival_mean_matches_poisson():
    rng = np.random.default_rng(1)
    lam = 2.0
    trials = 10_000
    state = BufferState(counts=np.zeros(trials, dtype=int))
    out = arrivals(state, 400.0, 0.005, rng)  # rate * dt = 2
    sigma = np.sqrt(lam / trials)
    assert abs(out.counts.mean() - lam) < 3 * sigma


def test_capacity_clips_arrivals():
    state = BufferState(counts=np.full(4, 10), capacity=10)
    out = arrivals(state, 1e6, 1.0, np.random.default_rng(2))
    np.testing.assert_array_equal(out.counts, np.full(4, 10))


def test_depart_zero_noop():
    state = BufferState(counts=np.array([4, 1]))
    out = depart(state, np.zeros(2, dtype=int))
    np.testing.assert_array_equal(out.counts, state.counts)


def test_depart_to_empty():
    state = BufferState(counts=np.array([5]))
    assert depart(state, np.array([5])).counts[0] == 0


def test_depart_random_elementwise():
    rng = np.random.default_rng(3)
    for _ in range(50):
        b = rng.integers(0, 20, size=6)
        p = np.array([rng.integers(0, v + 1) for v in b])
        out = depart(BufferState(counts=b), p)
        np.testing.assert_array_equal(out.counts, b - p)


def test_depart_overdraw_is_contract_violation():
    state = BufferState(counts=np.array([2, 3]))
    with pytest.raises(DepartureError):
        depart(state, np.array([3, 0]))
    with pytest.raises(DepartureError):
        depart(state, np.array([-1, 0]))
    with pytest.raises(DepartureError):
        depart(state, np.array([1]))


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        BufferState(counts=np.array([-1]))


def test_flow_conservation_over_a_run():
    rng = np.random.default_rng(4)
    state = BufferState(counts=rng.integers(0, 10, size=5))
    initial = int(state.counts.sum())
    arrived = 0
    delivered = 0
    for _ in range(200):
        before = int(state.counts.sum())
        state = arrivals(state, 300.0, 0.004, rng)
        arrived += int(state.counts.sum()) - before
        p = np.array([rng.integers(0, v + 1) for v in state.counts])
        state = depart(state, p)
        delivered += int(p.sum())
        assert (state.counts >= 0).all()
    assert delivered == initial + arrived - int(state.counts.sum())
