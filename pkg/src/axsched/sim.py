"""Experiment runtime: seeded worlds, episode loops, CSV metrics, checkpoints.

A Simulation owns the station drop, per-step block-fading CSI, the traffic
buffers and the derived timing/power constants for one replication. Every
source of randomness is a child stream of the master seed, so a (config,
seed) pair reproduces runs byte for byte. Each executed allocation is checked
against the structural scheduling constraints before it touches the buffers;
a violation is a scheduler bug and stops the run.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import agents, baselines, channel, oracle, phy, traffic
from .config import ScenarioConfig
from .nn import CheckpointError, load_checkpoint, save_checkpoint
from .ru import GoalTable, RuLayout, enumerate_goals, make_layout, validate_allocation

__all__ = [
    "WorldState",
    "Simulation",
    "SchedulerViolationError",
    "IncompatibleCheckpointError",
    "MetricsRow",
    "CSV_COLUMNS",
    "run",
    "evaluate",
    "EvalResult",
    "bench_scaling",
    "BENCH_COLUMNS",
]


class SchedulerViolationError(Exception):
    """A scheduler emitted an allocation that breaks the structural constraints."""


class IncompatibleCheckpointError(Exception):
    """Checkpoint network dimensions do not match the scenario."""


@dataclass
class WorldState:
    """Read view of the environment a scheduler decides on."""

    csi: np.ndarray
    buffers: np.ndarray
    layout: RuLayout
    goal_table: GoalTable
    mcs: phy.McsTable
    n_rx: int
    n_tx: int
    tx_power_w: float
    noise_power_w: float
    phy: phy.PhyParams


@dataclass
class StepRecord:
    eval: phy.AllocationEval
    dt_s: float


class Simulation:
    """One replication's world: drop, fading process, traffic, bookkeeping."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        cfg.validate()
        self.cfg = cfg
        self.layout = make_layout(cfg.bandwidth_mhz)
        self.goal_table = enumerate_goals(self.layout)
        self.mcs = phy.McsTable(cfg.mcs_rows) if cfg.mcs_rows else phy.default_mcs_table()
        self.phy = phy.PhyParams(
            tau_symbol_s=cfg.tau_symbol_s,
            q_bits=cfg.q_bytes * 8,
            tau_ppdu_s=cfg.tau_ppdu_s,
            overhead_s=cfg.overhead_s,
        )
        self._entropy = cfg.seed if seed is None else seed
        root = np.random.SeedSequence(self._entropy)
        drop_ss, agent_ss = root.spawn(2)
        self.agent_rng = np.random.default_rng(agent_ss)
        self._episode_idx = -1
        self._rng_chan = None
        self._rng_traffic = None

        distances = channel.drop_stations(
            cfg.k_stas, np.random.default_rng(drop_ss), cfg.dist_min_m, cfg.dist_max_m
        )
        bandwidth_hz = cfg.bandwidth_mhz * 1e6
        self.chan = channel.ChannelParams(
            sta_distances_m=tuple(distances),
            num_taps=cfg.num_taps,
            last_tap_atten_db=cfg.last_tap_atten_db,
            pathloss_exponent=cfg.pathloss_exponent,
            ref_loss_db=cfg.ref_loss_db,
            tx_power_w=channel.dbm_to_watts(cfg.tx_power_dbm),
            noise_power_w=channel.noise_power_w(
                cfg.noise_figure_db, bandwidth_hz, self.layout.num_subcarriers
            ),
        )
        self.arrival_rate = (
            cfg.arrival_rate_fps if cfg.rate_is_per_sta else cfg.arrival_rate_fps / cfg.k_stas
        )
        self.max_steps = cfg.max_steps
        self.validation_failures = 0
        self.steps_executed = 0
        self._csi: np.ndarray | None = None
        self._buffers: traffic.BufferState | None = None

    def seek(self, episode_idx: int) -> None:
        """Position the episode counter so the next new_episode() replays
        episode ``episode_idx`` of this seed's world sequence."""
        self._episode_idx = episode_idx - 1

    def new_episode(self) -> None:
        # per-episode child streams: episode i sees the same world realisation
        # for any scheduler and any path taken through earlier episodes
        self._episode_idx += 1
        episode_ss = np.random.SeedSequence(self._entropy, spawn_key=(1, self._episode_idx))
        chan_ss, traffic_ss = episode_ss.spawn(2)
        self._rng_chan = np.random.default_rng(chan_ss)
        self._rng_traffic = np.random.default_rng(traffic_ss)
        capacity = self.cfg.buffer_capacity if self.cfg.buffer_capacity > 0 else None
        counts = self._rng_traffic.poisson(self.cfg.initial_buffer_mean, size=self.cfg.k_stas)
        if capacity is not None:
            counts = np.minimum(counts, capacity)
        self._buffers = traffic.BufferState(counts=counts, capacity=capacity)
        self._redraw_csi()

    def _redraw_csi(self) -> None:
        self._csi = channel.sample_csi(
            self.chan, self.layout.num_subcarriers, self.cfg.n_rx, self.cfg.n_tx, self._rng_chan
        )

    def world(self) -> WorldState:
        if self._csi is None:
            raise RuntimeError("call new_episode() before world()")
        return WorldState(
            csi=self._csi,
            buffers=self._buffers.counts,
            layout=self.layout,
            goal_table=self.goal_table,
            mcs=self.mcs,
            n_rx=self.cfg.n_rx,
            n_tx=self.cfg.n_tx,
            tx_power_w=self.chan.tx_power_w,
            noise_power_w=self.chan.noise_power_w,
            phy=self.phy,
        )

    def is_terminal(self) -> bool:
        return self._buffers.all_empty()

    def execute(self, cube) -> phy.AllocationEval:
        """Validate, evaluate and apply one allocation; advance traffic and fading."""
        report = validate_allocation(cube, self.layout, self.cfg.n_rx, self.cfg.n_tx)
        if not report.ok:
            self.validation_failures += 1
            raise SchedulerViolationError("; ".join(report.violations))
        result = phy.evaluate_allocation(
            self._csi, cube, self._buffers.counts, self.layout, self.mcs,
            self.chan.tx_power_w, self.chan.noise_power_w, self.phy,
        )
        self._buffers = traffic.depart(self._buffers, result.packets)
        dt = result.airtime_s + self.cfg.protocol_gap_s
        self._buffers = traffic.arrivals(self._buffers, self.arrival_rate, dt, self._rng_traffic)
        self._redraw_csi()
        self.steps_executed += 1
        return result


CSV_COLUMNS = (
    "episode",
    "steps",
    "mean_throughput_mbps",
    "packets_delivered",
    "mean_epsilon",
    "master_loss",
    "sub_loss",
    "wall_clock_ms",
)


@dataclass(frozen=True)
class MetricsRow:
    episode: int
    steps: int
    mean_throughput_mbps: float
    packets_delivered: int
    mean_epsilon: float
    master_loss: float
    sub_loss: float
    wall_clock_ms: float

    def as_csv(self) -> list[str]:
        return [
            str(self.episode),
            str(self.steps),
            f"{self.mean_throughput_mbps:.6f}",
            str(self.packets_delivered),
            f"{self.mean_epsilon:.6f}",
            f"{self.master_loss:.6e}",
            f"{self.sub_loss:.6e}",
            f"{self.wall_clock_ms:.3f}",
        ]


def _metrics_row(episode: int, m: agents.EpisodeMetrics, wall_ms: float) -> MetricsRow:
    return MetricsRow(
        episode=episode,
        steps=m.steps,
        mean_throughput_mbps=m.mean_step_throughput_bps / 1e6,
        packets_delivered=m.packets_delivered,
        mean_epsilon=m.epsilon,
        master_loss=m.master_loss,
        sub_loss=m.sub_loss,
        wall_clock_ms=wall_ms,
    )


def _open_csv(path):
    fh = open(path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    return fh, writer


def baseline_fn(cfg: ScenarioConfig):
    """Scheduler callable world -> AllocationCube for the non-learning choices."""
    if cfg.scheduler == "sinr_searched":
        params = baselines.SusParams(alpha=cfg.sus_alpha)
        return lambda world: baselines.sinr_sched_searched_ra(world, params)
    if cfg.scheduler == "sinr_fixed":
        params = baselines.SusParams(alpha=cfg.sus_alpha)
        return lambda world: baselines.sinr_sched_fixed_ra(world, params)
    if cfg.scheduler == "buffer_fixed":
        return lambda world: baselines.buffer_sched_fixed_ra(world, cfg.buffer_order_ascending)
    if cfg.scheduler == "oracle":
        limits = oracle.OracleLimits(cfg.oracle_max_stas, cfg.oracle_max_rx, cfg.oracle_max_cubes)
        return lambda world: oracle.optimal_step(world, limits).cube
    raise ValueError(f"no baseline scheduler named {cfg.scheduler!r}")


def run_policy_episode(sim: Simulation, decide) -> agents.EpisodeMetrics:
    """One episode driven by a stateless scheduler callable."""
    sim.new_episode()
    steps = 0
    tput = 0.0
    packets = 0
    for _ in range(sim.max_steps):
        if sim.is_terminal():
            break
        result = sim.execute(decide(sim.world()))
        steps += 1
        tput += result.total_rate
        packets += int(result.packets.sum())
    return agents.EpisodeMetrics(
        steps=steps,
        mean_step_throughput_bps=tput / steps if steps else 0.0,
        packets_delivered=packets,
        epsilon=0.0,
        master_loss=0.0,
        sub_loss=0.0,
    )


def _scenario_scaling(cfg: ScenarioConfig) -> agents.FeatureScaling:
    return agents.FeatureScaling(
        db_min=cfg.feat_db_min,
        db_max=cfg.feat_db_max,
        buffer_divisor=cfg.buffer_divisor,
        buffer_cap=cfg.buffer_cap,
    )


def _agent_config(cfg: ScenarioConfig) -> agents.AgentConfig:
    return agents.AgentConfig(
        branch_hidden=cfg.branch_hidden,
        fusion_hidden=cfg.fusion_hidden,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        gamma=cfg.gamma,
        replay_capacity=cfg.replay_capacity,
        eps_start=cfg.eps_start,
        eps_end=cfg.eps_end,
        eps_decay_fraction=cfg.eps_decay_fraction,
        target_sync=cfg.target_sync,
        reward_scale=cfg.reward_scale,
        epoch_batches=cfg.epoch_batches,
    )


def build_agents(cfg: ScenarioConfig, sim: Simulation) -> agents.DhqnBundle:
    return agents.build_dhqn(
        cfg.k_stas, sim.layout, sim.goal_table, _agent_config(cfg),
        sim.agent_rng, _scenario_scaling(cfg),
    )


def run(cfg: ScenarioConfig, metrics_name: str = "metrics.csv") -> str:
    """Train or replay the configured scheduler; returns the metrics CSV path.

    One row per episode. The wall-clock column stays 0.0 unless
    ``metrics.wall_clock = true``, keeping default CSVs reproducible.
    """
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, metrics_name)
    sim = Simulation(cfg)
    fh, writer = _open_csv(csv_path)
    try:
        if cfg.scheduler == "dhqn":
            bundle = build_agents(cfg, sim)
            for episode in range(cfg.episodes):
                t0 = time.perf_counter()
                metrics = agents.train_episode(
                    sim, bundle, episode, cfg.episodes, sim.agent_rng, train=True
                )
                wall = (time.perf_counter() - t0) * 1e3 if cfg.wall_clock_metrics else 0.0
                writer.writerow(_metrics_row(episode, metrics, wall).as_csv())
            save_checkpoint(os.path.join(cfg.output_dir, cfg.checkpoint_name),
                            agents.checkpoint_nets(bundle))
        else:
            decide = baseline_fn(cfg)
            for episode in range(cfg.episodes):
                t0 = time.perf_counter()
                metrics = run_policy_episode(sim, decide)
                wall = (time.perf_counter() - t0) * 1e3 if cfg.wall_clock_metrics else 0.0
                writer.writerow(_metrics_row(episode, metrics, wall).as_csv())
    finally:
        fh.close()
    return csv_path


@dataclass(frozen=True)
class EvalResult:
    mean_throughput_mbps: float
    ci_low_mbps: float
    ci_high_mbps: float
    degenerate_ci: bool
    replication_means: tuple[float, ...]
    csv_path: str


def _greedy_replication(cfg: ScenarioConfig, rep_seed: int) -> tuple[list[agents.EpisodeMetrics], float]:
    sim = Simulation(cfg, seed=rep_seed)
    bundle = build_agents(cfg, sim)
    nets = load_checkpoint(os.path.join(cfg.output_dir, cfg.checkpoint_name))
    try:
        agents.restore_nets(bundle, nets)
    except ValueError as exc:
        raise IncompatibleCheckpointError(str(exc)) from exc
    rows = [
        agents.train_episode(sim, bundle, e, cfg.episodes, sim.agent_rng, train=False)
        for e in range(cfg.episodes)
    ]
    mean = float(np.mean([m.mean_step_throughput_bps for m in rows])) if rows else 0.0
    return rows, mean


def _worker_eval(args) -> tuple[list[agents.EpisodeMetrics], float]:
    cfg, rep_seed = args
    return _greedy_replication(cfg, rep_seed)


def evaluate(cfg: ScenarioConfig, checkpoint_path: str | None = None,
             metrics_name: str = "eval_metrics.csv") -> EvalResult:
    """Greedy-policy evaluation of a trained checkpoint over replications.

    Replication seeds derive deterministically from the master seed. The
    confidence interval is a 95% t-interval over replication means; with a
    single replication it is flagged degenerate.
    """
    if checkpoint_path is not None:
        cfg = replace(
            cfg,
            output_dir=os.path.dirname(checkpoint_path) or ".",
            checkpoint_name=os.path.basename(checkpoint_path),
        )
    ckpt = os.path.join(cfg.output_dir, cfg.checkpoint_name)
    if not os.path.exists(ckpt):
        raise CheckpointError(f"no checkpoint at {ckpt}")
    rep_seeds = [int(s.generate_state(1)[0]) for s in
                 np.random.SeedSequence(cfg.seed).spawn(cfg.replications)]
    jobs = [(cfg, s) for s in rep_seeds]
    if cfg.parallel and cfg.replications > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_worker_eval, jobs))
    else:
        results = [_worker_eval(j) for j in jobs]

    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, metrics_name)
    fh, writer = _open_csv(csv_path)
    try:
        episode = 0
        for rows, _ in results:
            for m in rows:
                writer.writerow(_metrics_row(episode, m, 0.0).as_csv())
                episode += 1
    finally:
        fh.close()

    means = np.array([mean for _, mean in results]) / 1e6
    grand = float(means.mean())
    if len(means) < 2:
        return EvalResult(grand, float("nan"), float("nan"), True, tuple(means), csv_path)
    from scipy import stats

    half = float(stats.t.ppf(0.975, len(means) - 1) * means.std(ddof=1) / np.sqrt(len(means)))
    return EvalResult(grand, grand - half, grand + half, False, tuple(means), csv_path)


BENCH_COLUMNS = ("k_stas", "scheduler", "median_step_ms", "samples")


def bench_scaling(cfg: ScenarioConfig, k_grid, samples: int = 20, warmup: int = 3,
                  metrics_name: str = "bench.csv") -> list[dict]:
    """Median per-step decision latency for the learned policy and the RA search.

    Measures decision time only (greedy, no learning); warm-up steps are
    discarded. Emits one CSV row per (K, scheduler); no scaling exponent is
    asserted, the table is for offline fitting.
    """
    rows = []
    for k in k_grid:
        for name in ("dhqn", "sinr_searched"):
            case = replace(cfg, k_stas=int(k), scheduler=name)
            sim = Simulation(case)
            sim.new_episode()
            if name == "dhqn":
                bundle = build_agents(case, sim)

                def decide(world):
                    out_cube = None
                    rng = sim.agent_rng
                    scaling, acfg = bundle.scaling, bundle.config
                    m_csi, m_buf = agents.featurize_master(world, scaling)
                    goal_idx = bundle.master.select_goal(m_csi, m_buf, 0.0, rng)
                    out_cube = _assemble_goal(bundle, world, goal_idx, rng, scaling, acfg)
                    return out_cube
            else:
                decide = baseline_fn(case)
            times = []
            for i in range(samples + warmup):
                if sim.is_terminal():
                    sim.new_episode()
                world = sim.world()
                t0 = time.perf_counter()
                cube = decide(world)
                elapsed = (time.perf_counter() - t0) * 1e3
                if i >= warmup:
                    times.append(elapsed)
                sim.execute(cube)
            rows.append({
                "k_stas": int(k),
                "scheduler": name,
                "median_step_ms": float(np.median(times)),
                "samples": len(times),
            })
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, metrics_name)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in BENCH_COLUMNS])
    return rows


def _assemble_goal(bundle, world, goal_idx, rng, scaling, acfg):
    """Greedy cube assembly for one chosen goal (no learning, no exploration)."""
    from .ru import AllocationCube

    cube = AllocationCube(world.layout, len(world.buffers))
    banned: set[int] = set()
    for ru in world.goal_table[goal_idx]:
        picked, _, _ = agents.select_users(
            bundle.subs[ru.level], world, ru, 0.0, rng, scaling, acfg,
            banned=frozenset(banned), train=False,
        )
        for k in picked:
            cube.assign(ru, k)
        banned.update(picked)
    return cube
