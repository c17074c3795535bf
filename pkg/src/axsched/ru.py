"""OFDMA resource-unit plan for a 20 MHz channel.

The band is modelled as q = 9 basic 26-tone units sitting on a 256-subcarrier
grid. Wider RUs merge adjacent units: four 52-tone RUs, two 106-tone RUs (the
centre unit belongs to neither half) and one full-band 242-tone RU. The
106/242-tone RUs pick up their extra tones from the guard region next to
their units, so every RU owns exactly its nominal tone count and any two RUs
covering disjoint units also occupy disjoint subcarriers.

A "goal" is a combination of RUs that tiles all nine units without overlap.
The 20 MHz table has 26 such combinations (each half of the band partitions
in 5 ways, plus the single full-band RU).

The layout is a data table: a wider-band plan can be registered in
``_LAYOUT_BUILDERS`` without touching the logic below (only 20 MHz ships
validated).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "RuId",
    "RuLayout",
    "GoalTable",
    "AllocationCube",
    "ValidationReport",
    "make_layout",
    "coverage_vector",
    "enumerate_goals",
    "mimo_group_limit",
    "validate_allocation",
    "format_layout",
    "format_goal_table",
]


@dataclass(frozen=True, order=True)
class RuId:
    """Resource unit at a given tree level and index within that level."""

    level: int
    index: int

    def __repr__(self) -> str:
        return f"RU({self.level},{self.index})"


@dataclass(frozen=True)
class RuLayout:
    """Static description of the RU tree for one bandwidth preset.

    ``coverage`` maps each RU to the set of 26-tone unit indices it overlaps,
    ``subcarriers`` to the concrete subcarrier indices it occupies.
    """

    name: str
    top_level: int
    num_units: int
    num_subcarriers: int
    coverage: dict[RuId, frozenset[int]]
    tones: dict[RuId, int]
    subcarriers: dict[RuId, tuple[int, ...]]
    su_only_levels: frozenset[int]

    @cached_property
    def all_rus(self) -> tuple[RuId, ...]:
        return tuple(sorted(self.coverage))

    @cached_property
    def _positions(self) -> dict[RuId, int]:
        return {ru: i for i, ru in enumerate(self.all_rus)}

    @cached_property
    def _sub_arrays(self) -> dict[RuId, np.ndarray]:
        return {ru: np.asarray(sub) for ru, sub in self.subcarriers.items()}

    def sub_array(self, ru: RuId) -> np.ndarray:
        """Subcarrier indices of ``ru`` as a cached integer array."""
        return self._sub_arrays[ru]

    @property
    def num_rus(self) -> int:
        return len(self.coverage)

    def rus_at_level(self, level: int) -> tuple[RuId, ...]:
        return tuple(ru for ru in self.all_rus if ru.level == level)

    def is_valid(self, ru: RuId) -> bool:
        return ru in self.coverage

    def position(self, ru: RuId) -> int:
        """Stable row index of ``ru`` in allocation matrices."""
        try:
            return self._positions[ru]
        except KeyError:
            raise ValueError(f"unknown RU {ru!r} for layout {self.name}") from None

    def su_only(self, level: int) -> bool:
        return level in self.su_only_levels

    def check(self) -> None:
        """Raise if the table violates its own structural rules."""
        units = frozenset(range(self.num_units))
        for level in range(self.top_level + 1):
            rus = self.rus_at_level(level)
            seen: set[int] = set()
            for ru in rus:
                cov = self.coverage[ru]
                if cov & seen:
                    raise ValueError(f"overlapping coverage at level {level}")
                seen |= cov
        top = RuId(0, 0)
        if self.coverage[top] != units:
            raise ValueError("level-0 RU must cover every unit")
        for i in range(self.num_units):
            if self.coverage[RuId(self.top_level, i)] != frozenset({i}):
                raise ValueError("leaf RUs must cover exactly their own unit")
        for ru, sub in self.subcarriers.items():
            if len(sub) != self.tones[ru]:
                raise ValueError(f"{ru!r}: tone count does not match subcarrier set")
            if len(set(sub)) != len(sub) or max(sub) >= self.num_subcarriers:
                raise ValueError(f"{ru!r}: bad subcarrier indices")


def _build_20mhz() -> RuLayout:
    # 9 unit blocks of 26 subcarriers at indices 11..244; 106/242-tone RUs
    # absorb extra tones from the adjacent guard indices.
    unit_block = {n: tuple(range(11 + 26 * n, 11 + 26 * (n + 1))) for n in range(9)}
    coverage: dict[RuId, frozenset[int]] = {}
    tones: dict[RuId, int] = {}
    subcarriers: dict[RuId, tuple[int, ...]] = {}

    def add(level: int, index: int, units: tuple[int, ...], extra: tuple[int, ...] = ()):
        ru = RuId(level, index)
        coverage[ru] = frozenset(units)
        sub = tuple(sorted(extra + sum((unit_block[u] for u in units), ())))
        subcarriers[ru] = sub
        tones[ru] = len(sub)

    add(0, 0, tuple(range(9)), extra=(7, 8, 9, 10, 245, 246, 247, 248))
    add(1, 0, (0, 1, 2, 3), extra=(9, 10))
    add(1, 1, (5, 6, 7, 8), extra=(245, 246))
    add(2, 0, (0, 1))
    add(2, 1, (2, 3))
    add(2, 2, (5, 6))
    add(2, 3, (7, 8))
    for n in range(9):
        add(3, n, (n,))

    layout = RuLayout(
        name="20MHz",
        top_level=3,
        num_units=9,
        num_subcarriers=256,
        coverage=coverage,
        tones=tones,
        subcarriers=subcarriers,
        su_only_levels=frozenset({2, 3}),
    )
    layout.check()
    return layout


_LAYOUT_BUILDERS = {20: _build_20mhz}


def make_layout(bandwidth_mhz: int = 20) -> RuLayout:
    try:
        return _LAYOUT_BUILDERS[int(bandwidth_mhz)]()
    except KeyError:
        raise ValueError(
            f"no RU layout registered for {bandwidth_mhz} MHz (available: "
            f"{sorted(_LAYOUT_BUILDERS)})"
        ) from None


def coverage_vector(ru: RuId, layout: RuLayout) -> np.ndarray:
    """Binary vector over the layout's 26-tone units; 1 where ``ru`` overlaps."""
    if not layout.is_valid(ru):
        raise ValueError(f"unknown RU {ru!r} for layout {layout.name}")
    vec = np.zeros(layout.num_units, dtype=np.uint8)
    vec[sorted(layout.coverage[ru])] = 1
    return vec


def mimo_group_limit(level: int, n_rx: int, n_tx: int, layout: RuLayout | None = None) -> int:
    """Maximum number of stations that may share one RU at ``level``.

    26/52-tone RUs are single-user; wider RUs admit floor(n_rx / n_tx)
    spatially multiplexed stations.
    """
    if n_tx < 1 or n_rx < n_tx:
        raise ValueError(f"need n_rx >= n_tx >= 1, got n_rx={n_rx}, n_tx={n_tx}")
    su_levels = layout.su_only_levels if layout is not None else frozenset({2, 3})
    if level in su_levels:
        return 1
    return n_rx // n_tx


@dataclass(frozen=True)
class GoalTable:
    """Ordered list of valid full-band RU combinations."""

    goals: tuple[tuple[RuId, ...], ...]

    def __len__(self) -> int:
        return len(self.goals)

    def __iter__(self):
        return iter(self.goals)

    def __getitem__(self, i: int) -> tuple[RuId, ...]:
        return self.goals[i]

    def index_of(self, combo) -> int:
        """Index of a combination, ignoring RU order. Raises ValueError if absent."""
        want = frozenset(combo)
        for i, goal in enumerate(self.goals):
            if frozenset(goal) == want:
                return i
        raise ValueError(f"combination {sorted(want)} is not in the goal table")

    def contains(self, combo) -> bool:
        try:
            self.index_of(combo)
            return True
        except ValueError:
            return False


def enumerate_goals(layout: RuLayout) -> GoalTable:
    """All combinations of pairwise-disjoint RUs that cover every unit.

    Deterministic order: RUs inside a goal are listed in frequency order, and
    goals are sorted by their level sequence (descending) then index sequence,
    so the all-26-tone combination comes first and the full-band RU last.
    """
    all_units = frozenset(range(layout.num_units))
    by_unit: dict[int, list[RuId]] = {n: [] for n in range(layout.num_units)}
    for ru in layout.all_rus:
        for n in layout.coverage[ru]:
            by_unit[n].append(ru)

    found: list[tuple[RuId, ...]] = []

    def extend(covered: frozenset[int], chosen: list[RuId]) -> None:
        if covered == all_units:
            found.append(tuple(sorted(chosen, key=lambda r: min(layout.coverage[r]))))
            return
        n = min(all_units - covered)
        for ru in by_unit[n]:
            cov = layout.coverage[ru]
            if cov & covered:
                continue
            chosen.append(ru)
            extend(covered | cov, chosen)
            chosen.pop()

    extend(frozenset(), [])
    found.sort(key=lambda g: (tuple(-ru.level for ru in g), tuple(ru.index for ru in g)))
    return GoalTable(goals=tuple(found))


class AllocationCube:
    """Binary RU-by-station assignment x[ru, k] for one scheduling step."""

    def __init__(self, layout: RuLayout, k_stas: int):
        if k_stas < 1:
            raise ValueError("need at least one station")
        self.layout = layout
        self.k_stas = k_stas
        self._x = np.zeros((layout.num_rus, k_stas), dtype=np.uint8)

    @classmethod
    def from_assignments(cls, layout: RuLayout, k_stas: int, assignments) -> "AllocationCube":
        """Build from a mapping RuId -> iterable of station indices."""
        cube = cls(layout, k_stas)
        for ru, stas in assignments.items():
            for k in stas:
                cube.assign(ru, k)
        return cube

    def assign(self, ru: RuId, sta: int) -> None:
        if not 0 <= sta < self.k_stas:
            raise ValueError(f"station {sta} out of range 0..{self.k_stas - 1}")
        self._x[self.layout.position(ru), sta] = 1

    def entry(self, ru: RuId, sta: int) -> int:
        return int(self._x[self.layout.position(ru), sta])

    def stas_on(self, ru: RuId) -> list[int]:
        return [int(k) for k in np.flatnonzero(self._x[self.layout.position(ru)])]

    def used_rus(self) -> list[RuId]:
        rows = np.flatnonzero(self._x.any(axis=1))
        return [self.layout.all_rus[int(r)] for r in rows]

    def rus_of(self, sta: int) -> list[RuId]:
        rows = np.flatnonzero(self._x[:, sta])
        return [self.layout.all_rus[int(r)] for r in rows]

    def scheduled_stas(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self._x.any(axis=0))]

    def copy(self) -> "AllocationCube":
        dup = AllocationCube(self.layout, self.k_stas)
        dup._x[:] = self._x
        return dup

    @property
    def matrix(self) -> np.ndarray:
        return self._x

    def __eq__(self, other) -> bool:
        if not isinstance(other, AllocationCube):
            return NotImplemented
        return self.layout is other.layout and np.array_equal(self._x, other._x)


@dataclass(frozen=True)
class ValidationReport:
    """Per-constraint outcome of an allocation check."""

    frequency_ok: bool      # no two used RUs overlap in the spectrum
    unique_sta_ok: bool     # every station sits on at most one RU
    group_size_ok: bool     # per-RU station count within the MIMO limit
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.frequency_ok and self.unique_sta_ok and self.group_size_ok


def validate_allocation(cube: AllocationCube, layout: RuLayout, n_rx: int, n_tx: int) -> ValidationReport:
    """Check the three structural scheduling constraints, reporting all hits."""
    if cube.layout is not layout and cube.layout.name != layout.name:
        raise ValueError("allocation cube was built for a different layout")
    violations: list[str] = []

    used = cube.used_rus()
    unit_hits = np.zeros(layout.num_units, dtype=np.int64)
    for ru in used:
        unit_hits += coverage_vector(ru, layout)
    frequency_ok = bool((unit_hits <= 1).all())
    if not frequency_ok:
        bad = np.flatnonzero(unit_hits > 1).tolist()
        violations.append(f"units {bad} covered by more than one scheduled RU")

    per_sta = cube.matrix.sum(axis=0)
    unique_sta_ok = bool((per_sta <= 1).all())
    if not unique_sta_ok:
        bad = np.flatnonzero(per_sta > 1).tolist()
        violations.append(f"stations {bad} assigned to multiple RUs")

    group_size_ok = True
    for ru in used:
        limit = mimo_group_limit(ru.level, n_rx, n_tx, layout)
        count = len(cube.stas_on(ru))
        if count > limit:
            group_size_ok = False
            violations.append(f"{ru!r} carries {count} stations, limit {limit}")

    return ValidationReport(
        frequency_ok=frequency_ok,
        unique_sta_ok=unique_sta_ok,
        group_size_ok=group_size_ok,
        violations=tuple(violations),
    )


def _ranges(indices) -> str:
    """Compress sorted ints to 'a-b,c' notation for the dump format."""
    out = []
    run_start = prev = None
    for i in indices:
        if run_start is None:
            run_start = prev = i
            continue
        if i == prev + 1:
            prev = i
            continue
        out.append(f"{run_start}-{prev}" if prev > run_start else f"{run_start}")
        run_start = prev = i
    if run_start is not None:
        out.append(f"{run_start}-{prev}" if prev > run_start else f"{run_start}")
    return ",".join(out)


def format_layout(layout: RuLayout) -> str:
    """Human- and machine-readable dump of the RU table.

    Schema: one header block, then one ``ru`` line per resource unit with
    level, index, tone count, covered units and subcarrier ranges.
    """
    lines = [
        f"# resource-unit layout {layout.name}",
        f"units {layout.num_units}",
        f"subcarriers {layout.num_subcarriers}",
        f"levels {layout.top_level + 1}",
        f"su-only-levels {','.join(str(l) for l in sorted(layout.su_only_levels))}",
    ]
    for ru in layout.all_rus:
        units = ",".join(str(u) for u in sorted(layout.coverage[ru]))
        lines.append(
            f"ru {ru.level} {ru.index} tones={layout.tones[ru]} "
            f"units={units} subcarriers={_ranges(layout.subcarriers[ru])}"
        )
    return "\n".join(lines) + "\n"


def format_goal_table(table: GoalTable, layout: RuLayout) -> str:
    """Dump of the goal table, one ``goal <index> = RU(l,i)+...`` line each."""
    lines = [f"# goal table for layout {layout.name} ({len(table)} combinations)"]
    for i, goal in enumerate(table):
        lines.append(f"goal {i} = " + "+".join(repr(ru) for ru in goal))
    return "\n".join(lines) + "\n"
