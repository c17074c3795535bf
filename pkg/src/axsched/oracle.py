"""Exact one-step scheduler: exhaustive search over goals and user subsets.

Only feasible for toy instances, but on those it is the ground truth: it
enumerates every RU combination in the goal table crossed with every
assignment of stations to that combination's RUs that respects the unique-RU
and group-size rules, evaluates each candidate through the same link model
the other schedulers use, and keeps the best. Per-RU rate evaluations are
memoised within a call since many candidates share groups, and the
packet/airtime arithmetic is batched per goal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import phy
from .ru import AllocationCube, mimo_group_limit

__all__ = ["OracleLimits", "OracleTooLargeError", "OracleResult", "optimal_step"]


class OracleTooLargeError(Exception):
    """Instance exceeds the exhaustive-search guard rails."""


@dataclass(frozen=True)
class OracleLimits:
    max_stas: int = 5
    max_rx: int = 4
    max_cubes: int = 2_000_000


@dataclass(frozen=True)
class OracleResult:
    cube: AllocationCube
    packets: np.ndarray
    value: float            # best achievable step throughput, bits/s
    enumerated: int         # candidate assignments actually evaluated


def optimal_step(world, limits: OracleLimits = OracleLimits()) -> OracleResult:
    """Best allocation and packet vector for the current state.

    Ties keep the first candidate in enumeration order, so results are
    deterministic. Raises OracleTooLargeError if the instance is above the
    station/antenna guards or the projected candidate count exceeds the cap.
    """
    k_stas = len(world.buffers)
    if k_stas > limits.max_stas or world.n_rx > limits.max_rx:
        raise OracleTooLargeError(
            f"instance K={k_stas}, N_R={world.n_rx} exceeds guard "
            f"(K<={limits.max_stas}, N_R<={limits.max_rx})"
        )
    projected = sum((len(goal) + 1) ** k_stas for goal in world.goal_table)
    if projected > limits.max_cubes:
        raise OracleTooLargeError(
            f"{projected} candidate assignments exceed the cap {limits.max_cubes}"
        )

    layout = world.layout
    timing = world.phy
    overhead = timing.overhead_for(k_stas)
    buffers = np.asarray(world.buffers)
    rate_cache: dict = {}

    def group_rates(ru, stas: tuple[int, ...]) -> np.ndarray:
        key = (ru, stas)
        if key not in rate_cache:
            cube = AllocationCube(layout, k_stas)
            for k in stas:
                cube.assign(ru, k)
            gamma = phy.sinr(world.csi, cube, layout, world.tx_power_w, world.noise_power_w)
            rate_cache[key] = phy.ofdm_rates(cube, gamma, layout, world.mcs, timing.tau_symbol_s)
        return rate_cache[key]

    best_value = -1.0
    best_assignment = None
    enumerated = 0

    for goal in world.goal_table:
        d = len(goal)
        limit = [mimo_group_limit(ru.level, world.n_rx, world.n_tx, layout) for ru in goal]
        valid: list[tuple[int, ...]] = []
        for assignment in itertools.product(range(d + 1), repeat=k_stas):
            counts = [0] * d
            ok = True
            for slot in assignment:
                if slot < d:
                    counts[slot] += 1
                    if counts[slot] > limit[slot]:
                        ok = False
                        break
            if ok:
                valid.append(assignment)
        if not valid:
            continue
        enumerated += len(valid)
        rates = np.zeros((len(valid), k_stas))
        for i, assignment in enumerate(valid):
            for slot, ru in enumerate(goal):
                stas = tuple(k for k in range(k_stas) if assignment[k] == slot)
                if stas:
                    rates[i] += group_rates(ru, stas)
        # batched packet search and airtime-shared value, same arithmetic as phy
        cap = np.zeros_like(rates, dtype=np.int64)
        usable = rates > 0
        cap[usable] = np.floor(rates[usable] * timing.tau_ppdu_s / timing.q_bits).astype(np.int64)
        packets = np.minimum(buffers[None, :], cap)
        active = packets > 0
        tx_time = np.zeros_like(rates)
        tx_time[active] = timing.q_bits * packets[active] / rates[active]
        frame = np.where(active, tx_time + overhead[None, :], 0.0).max(axis=1)
        values = np.where(frame > 0, timing.q_bits * packets.sum(axis=1) / np.maximum(frame, 1e-300), 0.0)
        pick = int(np.argmax(values))
        if values[pick] > best_value:
            best_value = float(values[pick])
            best_assignment = (goal, valid[pick])

    goal, assignment = best_assignment
    cube = AllocationCube(layout, k_stas)
    for k, slot in enumerate(assignment):
        if slot < len(goal):
            cube.assign(goal[slot], k)
    # report the winner through the standard evaluation path so values are
    # bit-identical with what any scheduler comparison computes
    final = phy.evaluate_allocation(
        world.csi, cube, buffers, layout, world.mcs,
        world.tx_power_w, world.noise_power_w, timing,
    )
    return OracleResult(cube=cube, packets=final.packets, value=final.total_rate,
                        enumerated=enumerated)
