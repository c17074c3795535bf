"""Per-station packet buffers with Poisson arrivals and scheduled departures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BufferState", "DepartureError", "arrivals", "depart"]


class DepartureError(Exception):
    """A scheduler tried to drain more packets than a buffer holds."""


@dataclass(frozen=True)
class BufferState:
    """Non-negative packet counts per station, optionally capped."""

    counts: np.ndarray
    capacity: int | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if (counts < 0).any():
            raise ValueError("buffer counts must be non-negative")
        if self.capacity is not None and (counts > self.capacity).any():
            raise ValueError("buffer counts exceed capacity")

    @property
    def k_stas(self) -> int:
        return int(self.counts.shape[0])

    def all_empty(self) -> bool:
        return bool((self.counts == 0).all())


def arrivals(state: BufferState, rate_fps: float, dt_s: float, rng: np.random.Generator) -> BufferState:
    """Add Poisson(rate * dt) packets per station independently, clip at capacity."""
    if rate_fps < 0 or dt_s < 0:
        raise ValueError("rate and step duration must be non-negative")
    fresh = rng.poisson(rate_fps * dt_s, size=state.k_stas)
    counts = state.counts + fresh
    if state.capacity is not None:
        counts = np.minimum(counts, state.capacity)
    return BufferState(counts=counts, capacity=state.capacity)


def depart(state: BufferState, packets: np.ndarray) -> BufferState:
    """Remove transmitted packets; raising on overdraw signals a scheduler bug."""
    packets = np.asarray(packets, dtype=np.int64)
    if packets.shape != state.counts.shape:
        raise DepartureError("packet vector shape does not match buffers")
    if (packets < 0).any():
        raise DepartureError("packet counts must be non-negative")
    if (packets > state.counts).any():
        bad = np.flatnonzero(packets > state.counts).tolist()
        raise DepartureError(f"stations {bad} asked to send more than buffered")
    return BufferState(counts=state.counts - packets, capacity=state.capacity)
