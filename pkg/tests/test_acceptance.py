"""Acceptance suite: one test per release criterion, one printed verdict each.

The heavyweight learning checks (9 and 10) train the hierarchical scheduler
from scratch at desk scale; their scenario knobs live in the fixtures below
and are deliberately small. Run with ``pytest tests/test_acceptance.py -s``
to watch the verdict lines appear.
"""

import itertools
import os
import time

import numpy as np
import pytest

from axsched import agents, baselines, oracle, phy, sim
from axsched.cli import main
from axsched.config import ScenarioConfig
from axsched.nn import TwoBranchMlp
from axsched.ru import (
    AllocationCube,
    RuId,
    enumerate_goals,
    make_layout,
    mimo_group_limit,
    validate_allocation,
)

from conftest import GOALS, LAYOUT, make_world

Q_BITS = 12000


def _verdict(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num:02d} {name}: {status} {detail}".rstrip())
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# ------------------------------------------------------------ 1: goal space


def test_criterion_01_goal_space():
    t0 = time.perf_counter()
    layout = make_layout(20)
    goals = enumerate_goals(layout)
    elapsed = time.perf_counter() - t0
    ok = len(goals) == 26 and elapsed < 1.0
    for goal in goals:
        cube = AllocationCube(layout, len(goal))
        for i, ru in enumerate(goal):
            cube.assign(ru, i)
        ok = ok and validate_allocation(cube, layout, 8, 1).frequency_ok
    ok = ok and goals.contains([RuId(2, 0), RuId(2, 1), RuId(3, 4), RuId(1, 1)])
    _verdict(1, "goal-space-count", ok, f"({len(goals)} goals in {elapsed * 1e3:.0f} ms)")


# ------------------------------------------------------------ 2: action space


def test_criterion_02_action_space_arithmetic():
    unreduced = agents.unreduced_action_space_size(20, 4)
    reduced = agents.reduced_action_space_size(20)
    ok = unreduced == 6195 and reduced == 21
    _verdict(2, "action-space-arithmetic", ok, f"(unreduced {unreduced}, reduced {reduced})")


# ------------------------------------------------------------ 3: ZF nulling


def test_criterion_03_zf_cross_gain():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 5))
        h = rng.standard_normal((m, 8)) + 1j * rng.standard_normal((m, 8))
        w = phy.zf_beamformers(h)
        for k in range(m):
            for j in range(m):
                if j != k:
                    worst = max(worst, abs(np.vdot(w[k], h[j])) / np.linalg.norm(h[j]))
    _verdict(3, "zf-cross-gain", worst < 1e-9, f"(max {worst:.2e})")


# ------------------------------------------------------------ 4: orthogonal residuals


def test_criterion_04_residual_orthogonality():
    rng = np.random.default_rng(77)
    worst = 0.0
    exact_round_one = True
    for trial in range(60):
        n_tx = 1 if trial % 2 == 0 else 2
        k = int(rng.integers(3, 6))
        shape = (LAYOUT.num_subcarriers, k, 8, n_tx)
        csi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * 1e-6
        world = make_world(csi, rng.integers(1, 20, k), 8, n_tx)
        ru = LAYOUT.all_rus[int(rng.integers(LAYOUT.num_rus))]
        state = agents.make_sub_state(world.csi, ru, LAYOUT, world.buffers)
        exact_round_one &= bool(np.array_equal(state.g, world.csi[LAYOUT.sub_array(ru)]))
        raw = state.g.copy()
        picked = []
        order = rng.permutation(k)[: int(rng.integers(1, min(4, k) + 1))]
        for sta in order:
            picked.append(state.g[:, sta].copy())
            state = agents.gram_schmidt_update(state, int(sta))
            for kk in range(k):
                ref = np.linalg.norm(raw[:, kk])
                res = state.g[:, kk]
                for old in picked:
                    inner = np.abs(np.einsum("brt,bru->btu", np.conj(old), res)).max()
                    per_sub = np.sqrt((np.abs(old) ** 2).sum(axis=(1, 2))).max()
                    worst = max(worst, inner / (per_sub * ref + 1e-300))
    ok = worst < 1e-10 and exact_round_one
    _verdict(4, "residual-orthogonality", ok,
             f"(max residual {worst:.2e}, round-1 exact: {exact_round_one})")


# ------------------------------------------------------------ helpers for 5 and 8


def _random_scaled_world(rng, k, n_rx, n_tx=1):
    shape = (LAYOUT.num_subcarriers, k, n_rx, n_tx)
    amp = 10 ** rng.uniform(-7, -5.2, size=(1, k, 1, 1))
    csi = amp * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    buffers = rng.integers(0, 25, size=k)
    return make_world(csi, buffers, n_rx, n_tx)


def _random_valid_cube(rng, world):
    goal = world.goal_table[int(rng.integers(len(world.goal_table)))]
    cube = AllocationCube(world.layout, len(world.buffers))
    pool = list(rng.permutation(len(world.buffers)))
    for ru in goal:
        limit = mimo_group_limit(ru.level, world.n_rx, world.n_tx, world.layout)
        take = int(rng.integers(0, limit + 1))
        for _ in range(min(take, len(pool))):
            cube.assign(ru, int(pool.pop()))
    return cube


# ------------------------------------------------------------ 5: throughput identity


def test_criterion_05_throughput_identity():
    rng = np.random.default_rng(55)
    worst = 0.0
    checked = 0
    for _ in range(1000):
        world = _random_scaled_world(rng, int(rng.integers(2, 6)), 4)
        cube = _random_valid_cube(rng, world)
        assert validate_allocation(cube, world.layout, world.n_rx, world.n_tx).ok
        result = phy.evaluate_allocation(
            world.csi, cube, world.buffers, world.layout, world.mcs,
            world.tx_power_w, world.noise_power_w, world.phy,
        )
        if result.airtime_s > 0:
            lhs = result.total_rate * result.airtime_s
            rhs = Q_BITS * result.packets.sum()
            worst = max(worst, abs(lhs - rhs) / rhs)
            checked += 1
    ok = worst < 1e-9 and checked > 500
    _verdict(5, "throughput-identity", ok, f"(max rel err {worst:.2e} over {checked} active)")


# ------------------------------------------------------------ 6: packet search


def test_criterion_06_packet_search_bruteforce():
    rng = np.random.default_rng(66)
    tau = 4.848e-3
    mismatches = 0
    for _ in range(1000):
        rate = float(rng.uniform(0, 5e7)) if rng.random() > 0.1 else 0.0
        b = int(rng.integers(0, 60))
        got = int(phy.packet_search(np.array([rate]), np.array([b]), Q_BITS, tau)[0])
        best = 0
        for p in range(b, -1, -1):
            if p == 0 or (rate > 0 and Q_BITS * p / rate <= tau):
                best = p
                break
        if got != best:
            mismatches += 1
        assert got <= b
        if got > 0:
            assert Q_BITS * got / rate <= tau
    _verdict(6, "packet-search-bruteforce", mismatches == 0, f"({mismatches} mismatches)")


# ------------------------------------------------------------ 7: gradient check


def test_criterion_07_gradient_check():
    rng = np.random.default_rng(707)
    eps = 1e-5
    worst = 0.0
    probes = 0
    for _ in range(50):
        dims = (int(rng.integers(2, 6)), int(rng.integers(2, 5)), int(rng.integers(2, 6)))
        net = TwoBranchMlp.create(dims[0], dims[1], dims[2],
                                  branch_hidden=(int(rng.integers(3, 7)),),
                                  fusion_hidden=(int(rng.integers(4, 9)),), rng=rng)
        batch = int(rng.integers(2, 7))
        csi = rng.standard_normal((batch, dims[0]))
        buf = rng.standard_normal((batch, dims[1]))
        actions = rng.integers(0, dims[2], batch)
        targets = rng.standard_normal(batch)

        def loss_and_pattern():
            # rectifier on/off pattern identifies the linear region; central
            # differences only estimate the derivative inside one region
            q, cache = net._forward_cached(csi, buf)
            pattern = tuple(
                (layer > 0).tobytes()
                for key in ("csi", "buf", "fusion")
                for layer in (cache[key][1:-1] if key == "fusion" else cache[key][1:])
            )
            picked = q[np.arange(batch), actions]
            return float(((picked - targets) ** 2).mean()), pattern

        _, grads = net.flat_gradients(csi, buf, actions, targets)
        for param, grad in zip(net.parameters(), grads):
            flat_p, flat_g = param.ravel(), grad.ravel()
            for i in rng.integers(0, flat_p.size, size=min(4, flat_p.size)):
                orig = flat_p[i]
                flat_p[i] = orig + eps
                up, pat_up = loss_and_pattern()
                flat_p[i] = orig - eps
                down, pat_down = loss_and_pattern()
                flat_p[i] = orig
                if pat_up != pat_down:
                    continue  # kink inside the probe interval: FD is not a derivative
                fd = (up - down) / (2 * eps)
                denom = max(abs(fd), abs(flat_g[i]), 1e-8)
                worst = max(worst, abs(fd - flat_g[i]) / denom)
                probes += 1
    ok = worst < 1e-4 and probes > 1000
    _verdict(7, "gradient-check", ok, f"(max rel err {worst:.2e} over {probes} probes)")


# ------------------------------------------------------------ 8: oracle dominance


def _greedy_dhqn_value(bundle, world, rng):
    """One greedy decision on a bare world, evaluated through the link model."""
    m_csi, m_buf = agents.featurize_master(world, bundle.scaling)
    goal_idx = bundle.master.select_goal(m_csi, m_buf, 0.0, rng)
    cube = AllocationCube(world.layout, len(world.buffers))
    banned = set()
    for ru in world.goal_table[goal_idx]:
        picked, _, _ = agents.select_users(
            bundle.subs[ru.level], world, ru, 0.0, rng, bundle.scaling, bundle.config,
            banned=frozenset(banned), train=False,
        )
        for k in picked:
            cube.assign(ru, k)
        banned.update(picked)
    return phy.evaluate_allocation(
        world.csi, cube, world.buffers, world.layout, world.mcs,
        world.tx_power_w, world.noise_power_w, world.phy,
    ).total_rate


def test_criterion_08_oracle_dominance():
    rng = np.random.default_rng(88)
    bundle = agents.build_dhqn(3, LAYOUT, GOALS, agents.AgentConfig(), rng)
    strict = 0
    violations = 0
    for _ in range(200):
        world = _random_scaled_world(rng, 3, 2, 1)
        best = oracle.optimal_step(world).value
        rivals = {
            "sinr_searched": baselines.sinr_sched_searched_ra(world),
            "sinr_fixed": baselines.sinr_sched_fixed_ra(world),
            "buffer_fixed": baselines.buffer_sched_fixed_ra(world),
        }
        values = {
            name: phy.evaluate_allocation(
                world.csi, cube, world.buffers, world.layout, world.mcs,
                world.tx_power_w, world.noise_power_w, world.phy,
            ).total_rate
            for name, cube in rivals.items()
        }
        values["dhqn"] = _greedy_dhqn_value(bundle, world, rng)
        for value in values.values():
            if best < value - 1e-9 * max(1.0, value):
                violations += 1
            if best > value + 1e-6:
                strict += 1
    ok = violations == 0 and strict >= 1
    _verdict(8, "oracle-dominance", ok, f"({violations} violations, {strict} strict wins)")


# ------------------------------------------------------------ 9: learning sanity


TINY = dict(
    k_stas=3, n_rx=2, n_tx=1, max_steps=8, output_dir="unused",
    arrival_rate_fps=200.0, initial_buffer_mean=12.0,
    branch_hidden=(32,), fusion_hidden=(64,), replay_capacity=5000,
    batch_size=16, buffer_divisor=10.0, reward_scale=1e8,
    learning_rate=1.0, gamma=0.5, epoch_batches=2,
)


def _train_then_eval(cfg: ScenarioConfig, eval_episodes: int):
    """Train on the scenario, then run the greedy policy on fresh episodes."""
    s = sim.Simulation(cfg)
    bundle = sim.build_agents(cfg, s)
    for e in range(cfg.episodes):
        agents.train_episode(s, bundle, e, cfg.episodes, s.agent_rng, train=True)
    means = [
        agents.train_episode(s, bundle, cfg.episodes + e, cfg.episodes, s.agent_rng, train=False)
        .mean_step_throughput_bps
        for e in range(eval_episodes)
    ]
    return float(np.mean(means)), s.validation_failures


def _policy_reference(cfg: ScenarioConfig, decide, eval_episodes: int):
    """Run a fixed policy on the same post-training evaluation worlds."""
    s = sim.Simulation(cfg)
    s.seek(cfg.episodes)
    means = [
        sim.run_policy_episode(s, decide).mean_step_throughput_bps
        for _ in range(eval_episodes)
    ]
    return float(np.mean(means)), s.validation_failures


def test_criterion_09_learning_sanity():
    t0 = time.perf_counter()
    episodes, eval_episodes = 2000, 30
    dhqn_means, oracle_means = [], []
    for seed in (1, 2, 3, 4, 5):
        cfg = ScenarioConfig(episodes=episodes, seed=seed, **TINY)
        d, fail_a = _train_then_eval(cfg, eval_episodes)
        o, fail_b = _policy_reference(cfg, lambda w: oracle.optimal_step(w).cube, eval_episodes)
        assert fail_a == 0 and fail_b == 0
        dhqn_means.append(d)
        oracle_means.append(o)
    ratio = float(np.mean(dhqn_means) / np.mean(oracle_means))
    elapsed = time.perf_counter() - t0
    per_seed = ", ".join(f"{d / o:.3f}" for d, o in zip(dhqn_means, oracle_means))
    _verdict(9, "learning-sanity", ratio >= 0.9,
             f"(ratio {ratio:.3f} of oracle; per-seed [{per_seed}]; {elapsed / 60:.1f} min)")


# ------------------------------------------------------------ 10: traffic trend


TREND = dict(
    k_stas=6, n_rx=4, n_tx=2, max_steps=10, output_dir="unused",
    initial_buffer_mean=12.0,
    branch_hidden=(32,), fusion_hidden=(64,), replay_capacity=5000,
    batch_size=16, buffer_divisor=10.0, buffer_cap=4.0, reward_scale=1e8,
    learning_rate=0.3, gamma=0.5, epoch_batches=2,
)


def test_criterion_10_traffic_trend():
    t0 = time.perf_counter()
    episodes, eval_episodes = 600, 25
    summary = {}
    for lam in (200.0, 1e4):
        dhqn_means, base_means = [], []
        for seed in (1, 2, 3, 4, 5):
            cfg = ScenarioConfig(episodes=episodes, seed=seed, arrival_rate_fps=lam, **TREND)
            d, fail_a = _train_then_eval(cfg, eval_episodes)
            b, fail_b = _policy_reference(cfg, baselines.sinr_sched_searched_ra, eval_episodes)
            assert fail_a == 0 and fail_b == 0
            dhqn_means.append(d)
            base_means.append(b)
        summary[lam] = (float(np.mean(dhqn_means)), float(np.mean(base_means)))
    elapsed = time.perf_counter() - t0
    unsat_d, unsat_b = summary[200.0]
    sat_d, sat_b = summary[1e4]
    ok = unsat_d >= unsat_b and sat_d >= 0.9 * sat_b
    _verdict(
        10, "unsaturated-traffic-trend", ok,
        f"(200 f/s: {unsat_d / 1e6:.1f} vs {unsat_b / 1e6:.1f} Mbit/s; "
        f"1e4 f/s: {sat_d / 1e6:.1f} vs {sat_b / 1e6:.1f} Mbit/s; {elapsed / 60:.1f} min)",
    )


# ------------------------------------------------------------ 11: constraint hygiene


def test_criterion_11_every_allocation_valid():
    # execute() validates every cube before applying it and raises on any
    # violation, so completing runs for every scheduler proves zero hits.
    failures = 0
    for scheduler in ("dhqn", "sinr_searched", "sinr_fixed", "buffer_fixed", "oracle"):
        cfg = ScenarioConfig(
            k_stas=3, n_rx=2, n_tx=1, episodes=4, max_steps=6, seed=31,
            scheduler=scheduler, output_dir="unused", initial_buffer_mean=10.0,
            branch_hidden=(16,), fusion_hidden=(32,),
        )
        s = sim.Simulation(cfg)
        if scheduler == "dhqn":
            bundle = sim.build_agents(cfg, s)
            for e in range(cfg.episodes):
                agents.train_episode(s, bundle, e, cfg.episodes, s.agent_rng, train=True)
        else:
            decide = sim.baseline_fn(cfg)
            for _ in range(cfg.episodes):
                sim.run_policy_episode(s, decide)
        failures += s.validation_failures
    _verdict(11, "allocation-validity", failures == 0, f"({failures} violations)")


# ------------------------------------------------------------ 12: determinism


def test_criterion_12_byte_identical_runs(tmp_path):
    text = "\n".join([
        "sim.k_stas = 3", "sim.n_rx = 2", "sim.n_tx = 1",
        "sim.episodes = 3", "sim.max_steps = 4", "sim.seed = 9",
        "sim.replications = 2",
        "agent.branch_hidden = 16", "agent.fusion_hidden = 32",
    ]) + "\n"
    cfg_file = tmp_path / "det.cfg"
    identical = True
    outputs = {}
    for tag in ("a", "b"):
        out_dir = tmp_path / tag
        cfg_file.write_text(text + f"sim.output_dir = {out_dir}\n")
        assert main(["train", "--config", str(cfg_file)]) == 0
        assert main(["evaluate", "--config", str(cfg_file)]) == 0
        outputs[tag] = (
            (out_dir / "metrics.csv").read_bytes(),
            (out_dir / "eval_metrics.csv").read_bytes(),
            (out_dir / "dhqn_checkpoint.bin").read_bytes(),
        )
    identical = outputs["a"] == outputs["b"]
    _verdict(12, "determinism", identical, "(train CSV, eval CSV and checkpoint byte-identical)")
