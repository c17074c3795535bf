"""Reference schedulers: SINR-driven SUS grouping and a buffer-depth heuristic.

All three ignore at least one ingredient of the joint problem on purpose: the
SINR-based variants pick users as if every buffer were infinitely deep, and
the fixed-RA variants never search over RU combinations. They exist as
comparison points for the learned scheduler and the exact solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor, log2

import numpy as np

from . import phy
from .ru import AllocationCube, RuId, mimo_group_limit

__all__ = [
    "SusParams",
    "sus_select",
    "ru_mean_channel",
    "sinr_sched_searched_ra",
    "sinr_sched_fixed_ra",
    "fixed_ra_level",
    "buffer_sched_fixed_ra",
]


@dataclass(frozen=True)
class SusParams:
    """Semiorthogonality threshold for greedy user grouping."""

    alpha: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


def ru_mean_channel(csi: np.ndarray, ru: RuId, layout) -> np.ndarray:
    """Per-station channel vector for one RU: complex mean over its tones, flattened."""
    sub = layout.sub_array(ru)
    mean = csi[sub].mean(axis=0)  # (K, N_R, N_T)
    return mean.reshape(mean.shape[0], -1)


def sus_select(channels: np.ndarray, group_limit: int, params: SusParams,
               candidates=None) -> list[int]:
    """Greedy semiorthogonal user selection.

    Picks the max-norm candidate, then repeatedly drops candidates whose
    normalised projection onto the picked subspace reaches alpha and picks the
    one with the largest residual norm, until the group limit or no candidate
    survives. Returns row indices into ``channels``.
    """
    if group_limit < 1:
        raise ValueError("group_limit must be >= 1")
    h = np.asarray(channels, dtype=complex)
    pool = list(range(h.shape[0])) if candidates is None else list(candidates)
    pool = [k for k in pool if np.linalg.norm(h[k]) > 0]
    chosen: list[int] = []
    basis: list[np.ndarray] = []
    while pool and len(chosen) < group_limit:
        residuals = {}
        for k in pool:
            r = h[k].copy()
            for b in basis:
                r -= np.vdot(b, r) * b
            residuals[k] = r
        best = max(pool, key=lambda k: (np.linalg.norm(residuals[k]), -k))
        r = residuals[best]
        norm = np.linalg.norm(r)
        if norm == 0:
            break
        chosen.append(best)
        basis.append(r / norm)
        pool = [
            k for k in pool
            if k != best and np.sqrt(sum(abs(np.vdot(b, h[k])) ** 2 for b in basis))
            < params.alpha * np.linalg.norm(h[k])
        ]
    return chosen


def _fill_goal_with_sus(world, goal, params: SusParams) -> AllocationCube:
    """SUS on every RU of the combination, big RUs first, no station reuse."""
    k_stas = len(world.buffers)
    cube = AllocationCube(world.layout, k_stas)
    taken: set[int] = set()
    order = sorted(goal, key=lambda ru: (-world.layout.tones[ru], world.layout.position(ru)))
    for ru in order:
        limit = mimo_group_limit(ru.level, world.n_rx, world.n_tx, world.layout)
        vectors = ru_mean_channel(world.csi, ru, world.layout)
        pool = [k for k in range(k_stas) if k not in taken]
        for k in sus_select(vectors, limit, params, candidates=pool):
            cube.assign(ru, k)
            taken.add(k)
    return cube


def _saturated_score(world, cube: AllocationCube) -> float:
    """Sum of OFDM rates, i.e. throughput potential with unlimited buffers."""
    gamma = phy.sinr(world.csi, cube, world.layout, world.tx_power_w, world.noise_power_w)
    return float(phy.ofdm_rates(cube, gamma, world.layout, world.mcs,
                                world.phy.tau_symbol_s).sum())


def sinr_sched_searched_ra(world, params: SusParams = SusParams()) -> AllocationCube:
    """Exhaustive goal search with SUS user selection, scored buffer-blind.

    Every RU combination in the goal table is filled with SUS groups and
    scored by its saturated rate sum; buffers are ignored entirely, which is
    exactly this scheduler's weakness under unsaturated traffic.
    """
    best_cube = None
    best_score = -1.0
    for goal in world.goal_table:
        cube = _fill_goal_with_sus(world, goal, params)
        score = _saturated_score(world, cube)
        if score > best_score:
            best_score = score
            best_cube = cube
    return best_cube


def fixed_ra_level(k_stas: int, n_rx: int, n_tx: int, top_level: int) -> int:
    """RU level used by the fixed-allocation baselines: min(L-2, log2(K*N_R/N_T))."""
    if min(k_stas, n_rx, n_tx, top_level) < 1:
        raise ValueError("all arguments must be >= 1")
    return min(top_level - 2, floor(log2(k_stas * n_rx / n_tx)))


def _fixed_ra_rus(world) -> list[RuId]:
    level = fixed_ra_level(len(world.buffers), world.n_rx, world.n_tx, world.layout.top_level)
    return list(world.layout.rus_at_level(level))


def sinr_sched_fixed_ra(world, params: SusParams = SusParams()) -> AllocationCube:
    """SUS user selection on the fixed RU combination (no search over goals)."""
    k_stas = len(world.buffers)
    cube = AllocationCube(world.layout, k_stas)
    taken: set[int] = set()
    for ru in _fixed_ra_rus(world):
        limit = mimo_group_limit(ru.level, world.n_rx, world.n_tx, world.layout)
        vectors = ru_mean_channel(world.csi, ru, world.layout)
        pool = [k for k in range(k_stas) if k not in taken]
        for k in sus_select(vectors, limit, params, candidates=pool):
            cube.assign(ru, k)
            taken.add(k)
    return cube


def buffer_sched_fixed_ra(world, ascending: bool = True) -> AllocationCube:
    """Fill the fixed RU combination by buffer depth, round-robin across RUs.

    Stations are ordered by buffer count (ties by index) and dealt one per RU
    in turn until every RU reaches its group limit. Empty-buffer stations are
    skipped: scheduling them could only waste spatial streams.
    """
    k_stas = len(world.buffers)
    cube = AllocationCube(world.layout, k_stas)
    rus = _fixed_ra_rus(world)
    limits = {ru: mimo_group_limit(ru.level, world.n_rx, world.n_tx, world.layout) for ru in rus}
    counts = {ru: 0 for ru in rus}
    key = (lambda k: (world.buffers[k], k)) if ascending else (lambda k: (-world.buffers[k], k))
    queue = sorted((k for k in range(k_stas) if world.buffers[k] > 0), key=key)
    ru_cycle = 0
    for k in queue:
        placed = False
        for _ in range(len(rus)):
            ru = rus[ru_cycle % len(rus)]
            ru_cycle += 1
            if counts[ru] < limits[ru]:
                cube.assign(ru, k)
                counts[ru] += 1
                placed = True
                break
        if not placed:
            break
    return cube
