"""Hierarchical Q-scheduler: a goal-picking master plus per-RU-size sub-agents.

One master network chooses an RU combination (a goal) for the whole band; one
sub-agent per RU level then fills each RU of that combination by picking
stations one decision round at a time, with an explicit break action that
stops early and can leave an RU empty. After every pick the remaining
stations' channels are replaced by their components orthogonal to the picked
station's channel, so later rounds see exactly the spatial directions that
are still free. Sub-agents are rewarded with the per-round throughput delta
of their own RU; the master is rewarded with the executed step throughput.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import phy
from .nn import ReplayBuffer, Transition, TwoBranchMlp
from .ru import AllocationCube, RuId, mimo_group_limit

__all__ = [
    "DegenerateSelectionError",
    "FeatureScaling",
    "EpsilonSchedule",
    "AgentConfig",
    "SubState",
    "MasterAgent",
    "SubAgent",
    "DhqnBundle",
    "make_sub_state",
    "gram_schmidt_update",
    "featurize_master",
    "featurize_sub",
    "epsilon_greedy",
    "select_users",
    "run_step",
    "train_episode",
    "build_dhqn",
    "checkpoint_nets",
    "restore_nets",
    "unreduced_action_space_size",
    "reduced_action_space_size",
]


class DegenerateSelectionError(Exception):
    """The picked station's residual channel is numerically zero on this RU."""


def unreduced_action_space_size(k_stas: int, max_streams: int) -> int:
    """Size of the one-shot user-subset action space: sum_i C(K, i), i=1..max."""
    return sum(comb(k_stas, i) for i in range(1, max_streams + 1))


def reduced_action_space_size(k_stas: int) -> int:
    """Per-round action space after the sequential redesign: K stations + break."""
    return k_stas + 1


@dataclass(frozen=True)
class FeatureScaling:
    """Input normalisation for the Q-networks."""

    db_min: float = -30.0
    db_max: float = 40.0
    buffer_divisor: float = 50.0
    buffer_cap: float = 20.0

    def db_to_unit(self, value_db) -> np.ndarray:
        clipped = np.clip(value_db, self.db_min, self.db_max)
        return 2.0 * (clipped - self.db_min) / (self.db_max - self.db_min) - 1.0

    def buffers_to_unit(self, counts) -> np.ndarray:
        return np.minimum(np.asarray(counts, dtype=float) / self.buffer_divisor, self.buffer_cap)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay over the first decay_fraction of episodes, then flat."""

    start: float = 1.0
    end: float = 0.1
    decay_fraction: float = 0.8

    def value(self, episode: int, total_episodes: int) -> float:
        horizon = max(1, int(round(self.decay_fraction * total_episodes)))
        frac = min(1.0, episode / horizon)
        return self.start - (self.start - self.end) * frac


@dataclass(frozen=True)
class AgentConfig:
    branch_hidden: tuple[int, ...] = (64,)
    fusion_hidden: tuple[int, ...] = (128, 64)
    learning_rate: float = 1e-3
    batch_size: int = 32
    gamma: float = 0.9
    replay_capacity: int = 10000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_fraction: float = 0.8
    target_sync: int = 0        # 0 disables the frozen target copy
    reward_scale: float = 1e7   # bits/s per unit of reward fed to the nets
    epoch_batches: int = 0      # extra per-episode replay passes over every agent


def _snr_db(mean_gain, p_tone: float, noise_w: float) -> np.ndarray:
    power = np.maximum(np.asarray(mean_gain) * p_tone, 1e-300)
    return 10.0 * np.log10(power / noise_w)


def featurize_master(world, scaling: FeatureScaling):
    """Per station: mean gain per 106-tone half and full band (dB), plus buffers."""
    layout = world.layout
    regions = list(layout.rus_at_level(1)) + [RuId(0, 0)]
    gains = []
    for ru in regions:
        sub = layout.sub_array(ru)
        mean_gain = (np.abs(world.csi[sub]) ** 2).sum(axis=(2, 3)).mean(axis=0)
        p_tone = world.tx_power_w / layout.tones[ru]
        gains.append(scaling.db_to_unit(_snr_db(mean_gain, p_tone, world.noise_power_w)))
    csi_vec = np.concatenate(gains)
    buf_vec = scaling.buffers_to_unit(world.buffers)
    return csi_vec, buf_vec


@dataclass
class SubState:
    """Sub-agent view of one RU: residual channels, buffers, picks so far."""

    ru: RuId
    g: np.ndarray                 # (n_sub, K, N_R, N_T)
    buffers: np.ndarray
    selected: tuple[int, ...]
    raw_power: np.ndarray         # per-station total |h|^2 on the RU at round 1


def make_sub_state(csi: np.ndarray, ru: RuId, layout, buffers: np.ndarray) -> SubState:
    sub = layout.sub_array(ru)
    g = csi[sub].copy()
    raw_power = (np.abs(g) ** 2).sum(axis=(0, 2, 3))
    return SubState(ru=ru, g=g, buffers=np.asarray(buffers), selected=(), raw_power=raw_power)


def gram_schmidt_update(state: SubState, selected_sta: int, rel_tol: float = 1e-24) -> SubState:
    """Project every station's residual channel off the picked station's.

    The picked station's current residual spans the directions it will occupy;
    all stations (including itself) lose those components per subcarrier, so
    the surviving residuals stay orthogonal to everything already picked.
    """
    if selected_sta in state.selected:
        raise ValueError(f"station {selected_sta} was already picked on {state.ru!r}")
    picked = state.g[:, selected_sta]  # (B, N_R, N_T)
    resid_power = float((np.abs(picked) ** 2).sum())
    if resid_power <= rel_tol * float(state.raw_power[selected_sta]) or resid_power == 0.0:
        raise DegenerateSelectionError(
            f"station {selected_sta} has no usable channel left on {state.ru!r}"
        )

    n_tx = picked.shape[-1]
    basis: list[np.ndarray] = []
    for j in range(n_tx):
        col = picked[:, :, j].copy()
        col_ref = (np.abs(col) ** 2).sum(axis=1)
        for b in basis:
            coef = np.einsum("br,br->b", np.conj(b), col)
            col -= coef[:, None] * b
        norm2 = (np.abs(col) ** 2).sum(axis=1)
        ok = norm2 > rel_tol * np.maximum(col_ref, 1e-300)
        unit = np.where(ok[:, None], col / np.sqrt(np.maximum(norm2, 1e-300))[:, None], 0.0)
        basis.append(unit)

    g = state.g.copy()
    for b in basis:
        coef = np.einsum("br,bkrt->bkt", np.conj(b), g)
        g -= b[:, None, :, None] * coef[:, :, None, :]
    return SubState(
        ru=state.ru,
        g=g,
        buffers=state.buffers,
        selected=state.selected + (selected_sta,),
        raw_power=state.raw_power,
    )


def featurize_sub(
    state: SubState,
    layout,
    tx_power_w: float,
    noise_power_w: float,
    scaling: FeatureScaling,
    round_idx: int,
    max_rounds: int,
    banned: frozenset = frozenset(),
):
    """Residual channel strength (dB) and buffers per station, plus the round index.

    Unavailable stations (picked here or taken by another RU this step) are
    floored to the minimum channel feature, zero buffer, and masked out of the
    action set. The final mask entry is the always-legal break action.
    """
    k_stas = state.g.shape[1]
    unavailable = set(state.selected) | set(banned)
    p_tone = tx_power_w / layout.tones[state.ru]
    mean_gain = (np.abs(state.g) ** 2).sum(axis=(2, 3)).mean(axis=0)
    csi_vec = scaling.db_to_unit(_snr_db(mean_gain, p_tone, noise_power_w))
    buf_vec = np.empty(k_stas + 1)
    buf_vec[:k_stas] = scaling.buffers_to_unit(state.buffers)
    mask = np.ones(k_stas + 1, dtype=bool)
    for k in unavailable:
        csi_vec[k] = -1.0
        buf_vec[k] = 0.0
        mask[k] = False
    buf_vec[k_stas] = round_idx / max(max_rounds, 1)
    return csi_vec, buf_vec, mask


def epsilon_greedy(q_values: np.ndarray, mask: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform over legal actions with prob epsilon, else masked argmax (first max wins)."""
    if epsilon > 0 and rng.random() < epsilon:
        legal = np.flatnonzero(mask)
        return int(legal[rng.integers(len(legal))])
    masked = np.where(mask, q_values, -np.inf)
    return int(np.argmax(masked))


class _QAgent:
    """Shared wrapper: network, optional frozen target, replay, schedule."""

    def __init__(self, net: TwoBranchMlp, replay: ReplayBuffer, schedule: EpsilonSchedule, target_sync: int = 0):
        self.net = net
        self.replay = replay
        self.schedule = schedule
        self.target_sync = target_sync
        self.target = net.copy() if target_sync > 0 else None
        self._updates = 0

    def _bootstrap_net(self) -> TwoBranchMlp:
        return self.target if self.target is not None else self.net

    def train_batch(self, batch: list[Transition], gamma: float, learning_rate: float) -> float:
        s_csi = np.stack([t.state[0] for t in batch])
        s_buf = np.stack([t.state[1] for t in batch])
        actions = np.array([t.action for t in batch], dtype=np.int64)
        rewards = np.array([t.reward for t in batch])
        n_csi = np.stack([t.next_state[0] for t in batch])
        n_buf = np.stack([t.next_state[1] for t in batch])
        terminal = np.array([t.terminal for t in batch], dtype=bool)
        q_next = self._bootstrap_net().forward(n_csi, n_buf)
        for i, t in enumerate(batch):
            mask = t.next_state[2]
            if mask is not None:
                q_next[i, ~mask] = -np.inf
        best_next = q_next.max(axis=1)
        y = rewards + gamma * np.where(terminal, 0.0, best_next)
        loss = self.net.sgd_step(s_csi, s_buf, actions, y, learning_rate)
        self._updates += 1
        if self.target is not None and self._updates % self.target_sync == 0:
            self.target.load_from(self.net)
        return loss

    def maybe_train(self, batch_size: int, gamma: float, learning_rate: float, rng) -> float | None:
        if len(self.replay) < batch_size:
            return None
        return self.train_batch(self.replay.sample(batch_size, rng), gamma, learning_rate)


class MasterAgent(_QAgent):
    """Picks one goal (RU combination) per scheduling step."""

    def select_goal(self, csi_vec, buf_vec, epsilon: float, rng) -> int:
        q = self.net.forward(csi_vec, buf_vec)
        return epsilon_greedy(q, np.ones(len(q), dtype=bool), epsilon, rng)


class SubAgent(_QAgent):
    """Per-RU-level user selector; one instance is shared by all RUs of its level."""

    def __init__(self, level: int, net, replay, schedule, target_sync: int = 0):
        super().__init__(net, replay, schedule, target_sync)
        self.level = level

    def select_action(self, csi_vec, buf_vec, mask, epsilon: float, rng) -> int:
        q = self.net.forward(csi_vec, buf_vec)
        return epsilon_greedy(q, mask, epsilon, rng)


@dataclass
class DhqnBundle:
    master: MasterAgent
    subs: dict[int, SubAgent]
    scaling: FeatureScaling
    config: AgentConfig


def build_dhqn(k_stas: int, layout, goal_table, config: AgentConfig, rng,
               scaling: FeatureScaling | None = None) -> DhqnBundle:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    scaling = scaling or FeatureScaling()
    schedule = EpsilonSchedule(config.eps_start, config.eps_end, config.eps_decay_fraction)
    regions = len(layout.rus_at_level(1)) + 1
    master_net = TwoBranchMlp.create(
        regions * k_stas, k_stas, len(goal_table),
        config.branch_hidden, config.fusion_hidden, rng,
    )
    master = MasterAgent(master_net, ReplayBuffer(config.replay_capacity), schedule, config.target_sync)
    subs = {}
    for level in range(layout.top_level + 1):
        net = TwoBranchMlp.create(
            k_stas, k_stas + 1, k_stas + 1,
            config.branch_hidden, config.fusion_hidden, rng,
        )
        subs[level] = SubAgent(level, net, ReplayBuffer(config.replay_capacity),
                               EpsilonSchedule(config.eps_start, config.eps_end, config.eps_decay_fraction),
                               config.target_sync)
    return DhqnBundle(master=master, subs=subs, scaling=scaling, config=config)


def _ru_reward(world, ru: RuId, stas: list[int]) -> float:
    """Throughput of this RU in isolation with the given co-scheduled set."""
    cube = AllocationCube(world.layout, len(world.buffers))
    for k in stas:
        cube.assign(ru, k)
    result = phy.evaluate_allocation(
        world.csi, cube, world.buffers, world.layout, world.mcs,
        world.tx_power_w, world.noise_power_w, world.phy,
    )
    return result.total_rate


def select_users(
    sub_agent: SubAgent,
    world,
    ru: RuId,
    epsilon: float,
    rng,
    scaling: FeatureScaling,
    config: AgentConfig,
    banned: frozenset = frozenset(),
    train: bool = True,
):
    """Sequential user selection on one RU with a break option.

    Runs up to the RU's MIMO group limit of decision rounds; each pick is
    rewarded with the throughput delta it causes on this RU alone, and the
    residual-channel state is re-orthogonalised before the next round.
    Returns the picked stations, the per-round SGD losses, and the per-round
    RU throughputs (the last one is the RU's final value).
    """
    k_stas = len(world.buffers)
    max_rounds = mimo_group_limit(ru.level, world.n_rx, world.n_tx, world.layout)
    state = make_sub_state(world.csi, ru, world.layout, world.buffers)
    picked: list[int] = []
    losses: list[float] = []
    rewards: list[float] = []
    r_prev = 0.0
    feats = featurize_sub(
        state, world.layout, world.tx_power_w, world.noise_power_w,
        scaling, 0, max_rounds, banned,
    )
    for round_idx in range(max_rounds):
        csi_vec, buf_vec, mask = feats
        action = sub_agent.select_action(csi_vec, buf_vec, mask, epsilon, rng)
        if action == k_stas:  # break: stop without scheduling another station
            break
        try:
            next_state = gram_schmidt_update(state, action)
        except DegenerateSelectionError:
            break
        picked.append(action)
        r_now = _ru_reward(world, ru, picked)
        rewards.append(r_now)
        feats = featurize_sub(
            next_state, world.layout, world.tx_power_w, world.noise_power_w,
            scaling, round_idx + 1, max_rounds, banned,
        )
        sub_agent.replay.push(Transition(
            state=(csi_vec, buf_vec, mask),
            action=action,
            reward=(r_now - r_prev) / config.reward_scale,
            next_state=feats,
            terminal=round_idx == max_rounds - 1,
        ))
        if train:
            loss = sub_agent.maybe_train(config.batch_size, config.gamma, config.learning_rate, rng)
            if loss is not None:
                losses.append(loss)
        r_prev = r_now
        state = next_state
    return picked, losses, rewards


@dataclass
class StepOutcome:
    cube: AllocationCube
    goal_index: int
    eval: phy.AllocationEval
    epsilon: float
    master_loss: float | None
    sub_losses: list[float]
    next_master_feats: tuple = None


def run_step(
    dhqn: DhqnBundle,
    sim,
    episode_idx: int,
    total_episodes: int,
    rng,
    train: bool = True,
    is_last_step: bool = False,
    master_feats=None,
) -> StepOutcome:
    """One scheduling step: pick a goal, fill its RUs, execute, learn.

    Stations already placed on an earlier RU of the goal are banned from later
    RUs, so the assembled cube honours the one-RU-per-station rule by
    construction. The master transition is stored after the world advances.
    ``master_feats`` may carry the previous step's post-advance featurisation.
    """
    world = sim.world()
    scaling, config = dhqn.scaling, dhqn.config
    eps_master = dhqn.master.schedule.value(episode_idx, total_episodes) if train else 0.0
    m_csi, m_buf = master_feats if master_feats is not None else featurize_master(world, scaling)
    goal_idx = dhqn.master.select_goal(m_csi, m_buf, eps_master, rng)

    cube = AllocationCube(world.layout, len(world.buffers))
    banned: set[int] = set()
    sub_losses: list[float] = []
    for ru in world.goal_table[goal_idx]:
        agent = dhqn.subs[ru.level]
        eps_sub = agent.schedule.value(episode_idx, total_episodes) if train else 0.0
        picked, losses, _ = select_users(
            agent, world, ru, eps_sub, rng, scaling, config,
            banned=frozenset(banned), train=train,
        )
        for k in picked:
            cube.assign(ru, k)
        banned.update(picked)
        sub_losses.extend(losses)

    step_eval = sim.execute(cube)
    next_world = sim.world()
    n_csi, n_buf = featurize_master(next_world, scaling)
    terminal = is_last_step or bool((next_world.buffers == 0).all())
    dhqn.master.replay.push(Transition(
        state=(m_csi, m_buf, None),
        action=goal_idx,
        reward=step_eval.total_rate / config.reward_scale,
        next_state=(n_csi, n_buf, None),
        terminal=terminal,
    ))
    master_loss = None
    if train:
        master_loss = dhqn.master.maybe_train(config.batch_size, config.gamma, config.learning_rate, rng)
    return StepOutcome(
        cube=cube,
        goal_index=goal_idx,
        eval=step_eval,
        epsilon=eps_master,
        master_loss=master_loss,
        sub_losses=sub_losses,
        next_master_feats=(n_csi, n_buf),
    )


@dataclass
class EpisodeMetrics:
    steps: int
    mean_step_throughput_bps: float
    packets_delivered: int
    epsilon: float
    master_loss: float
    sub_loss: float


def train_epoch(dhqn: DhqnBundle, rng) -> None:
    """One replay pass over every agent, independent of which RUs were active.

    Keeps rarely-activated RU levels (whose goals are exploring infrequently)
    from starving between their own decision rounds.
    """
    config = dhqn.config
    dhqn.master.maybe_train(config.batch_size, config.gamma, config.learning_rate, rng)
    for level in sorted(dhqn.subs):
        dhqn.subs[level].maybe_train(config.batch_size, config.gamma, config.learning_rate, rng)


def train_episode(sim, dhqn: DhqnBundle, episode_idx: int, total_episodes: int, rng,
                  train: bool = True) -> EpisodeMetrics:
    """Run one episode to termination (empty buffers or the step cap)."""
    sim.new_episode()
    steps = 0
    tput_sum = 0.0
    packets = 0
    epsilon = dhqn.master.schedule.value(episode_idx, total_episodes) if train else 0.0
    master_losses: list[float] = []
    sub_losses: list[float] = []
    feats = None
    for t in range(sim.max_steps):
        if sim.is_terminal():
            break
        out = run_step(dhqn, sim, episode_idx, total_episodes, rng,
                       train=train, is_last_step=t == sim.max_steps - 1,
                       master_feats=feats)
        feats = out.next_master_feats
        steps += 1
        tput_sum += out.eval.total_rate
        packets += int(out.eval.packets.sum())
        if out.master_loss is not None:
            master_losses.append(out.master_loss)
        sub_losses.extend(out.sub_losses)
    if train:
        for _ in range(dhqn.config.epoch_batches):
            train_epoch(dhqn, rng)
    return EpisodeMetrics(
        steps=steps,
        mean_step_throughput_bps=tput_sum / steps if steps else 0.0,
        packets_delivered=packets,
        epsilon=epsilon,
        master_loss=float(np.mean(master_losses)) if master_losses else 0.0,
        sub_loss=float(np.mean(sub_losses)) if sub_losses else 0.0,
    )


def checkpoint_nets(dhqn: DhqnBundle) -> dict:
    nets = {"master": dhqn.master.net}
    for level, agent in sorted(dhqn.subs.items()):
        nets[f"sub{level}"] = agent.net
    return nets


def restore_nets(dhqn: DhqnBundle, nets: dict) -> None:
    """Load checkpointed weights into an existing bundle; dims must match."""
    expected = checkpoint_nets(dhqn)
    for name, net in expected.items():
        if name not in nets:
            raise ValueError(f"checkpoint is missing network {name!r}")
        net.load_from(nets[name])
