"""Scenario configuration: flat ``key = value`` text with dotted sections.

Grammar: one ``section.key = value`` pair per line; blank lines and lines
starting with ``#`` are ignored; whitespace around keys and values is
stripped; a key may appear at most once. Every key has a default, so an empty
file is a valid scenario. Environment variables prefixed ``AXSCHED_``
override file values for CI runs: dots become double underscores and the name
is upper-cased, e.g. ``AXSCHED_SIM__K_STAS=12`` overrides ``sim.k_stas``.

MCS override rows use numbered keys ``phy.mcs.0 = <threshold_db> <bits> <rate>``,
``phy.mcs.1 = ...`` and so on; rates accept fractions like ``5/6``. If any row
is present the whole table is replaced.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "load_config", "format_config", "SCHEDULERS"]

ENV_PREFIX = "AXSCHED_"
SCHEDULERS = ("dhqn", "sinr_searched", "sinr_fixed", "buffer_fixed", "oracle")


class ConfigError(Exception):
    """Unusable scenario configuration."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_fraction(text: str) -> float:
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


@dataclass(frozen=True)
class ScenarioConfig:
    """All experiment knobs; defaults describe a small 6-station drop."""

    # sim.*
    k_stas: int = 6
    n_rx: int = 4
    n_tx: int = 2
    bandwidth_mhz: int = 20
    episodes: int = 200
    max_steps: int = 64
    scheduler: str = "dhqn"
    seed: int = 1
    output_dir: str = "out"
    replications: int = 5
    parallel: bool = False
    checkpoint_name: str = "dhqn_checkpoint.bin"

    # traffic.*
    arrival_rate_fps: float = 200.0
    rate_is_per_sta: bool = True
    buffer_capacity: int = 0            # 0 means unlimited
    initial_buffer_mean: float = 25.0
    protocol_gap_s: float = 0.0

    # phy.*
    q_bytes: int = 1500
    tau_ppdu_s: float = 4.848e-3
    tau_symbol_s: float = 13.6e-6
    overhead_s: float = 100e-6
    mcs_rows: tuple[tuple[float, int, float], ...] = ()

    # chan.*
    num_taps: int = 8
    last_tap_atten_db: float = 15.0
    pathloss_exponent: float = 3.5
    ref_loss_db: float = 40.0
    tx_power_dbm: float = 15.0
    noise_figure_db: float = 7.0
    dist_min_m: float = 20.0
    dist_max_m: float = 100.0

    # agent.*
    branch_hidden: tuple[int, ...] = (64,)
    fusion_hidden: tuple[int, ...] = (128, 64)
    learning_rate: float = 1e-3
    batch_size: int = 32
    gamma: float = 0.9
    replay_capacity: int = 10000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_fraction: float = 0.8
    target_sync: int = 0
    reward_scale: float = 1e7
    epoch_batches: int = 0
    buffer_divisor: float = 50.0
    buffer_cap: float = 20.0
    feat_db_min: float = -30.0
    feat_db_max: float = 40.0

    # baseline.*
    sus_alpha: float = 0.3
    buffer_order_ascending: bool = True

    # oracle.*
    oracle_max_stas: int = 5
    oracle_max_rx: int = 4
    oracle_max_cubes: int = 2_000_000

    # metrics.*
    wall_clock_metrics: bool = False

    def validate(self) -> None:
        if self.k_stas < 1:
            raise ConfigError("sim.k_stas must be >= 1")
        if self.n_tx < 1 or self.n_rx < self.n_tx:
            raise ConfigError("need sim.n_rx >= sim.n_tx >= 1")
        if self.bandwidth_mhz != 20:
            raise ConfigError("only the 20 MHz layout is registered")
        if self.episodes < 0 or self.max_steps < 0:
            raise ConfigError("sim.episodes and sim.max_steps must be >= 0")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"sim.scheduler must be one of {SCHEDULERS}")
        if self.replications < 1:
            raise ConfigError("sim.replications must be >= 1")
        for name in ("arrival_rate_fps", "initial_buffer_mean", "protocol_gap_s"):
            if getattr(self, name) < 0:
                raise ConfigError(f"traffic value {name} must be >= 0")
        for name in ("q_bytes", "tau_ppdu_s", "tau_symbol_s", "tx_power_dbm",
                     "learning_rate", "batch_size", "gamma", "replay_capacity",
                     "reward_scale", "buffer_divisor", "num_taps",
                     "dist_min_m", "dist_max_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.overhead_s < 0:
            raise ConfigError("phy.overhead_s must be >= 0")
        if self.dist_max_m < self.dist_min_m:
            raise ConfigError("chan.dist_max_m must be >= chan.dist_min_m")
        if not 0.0 < self.sus_alpha < 1.0:
            raise ConfigError("baseline.sus_alpha must lie in (0, 1)")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= agent.eps_end <= agent.eps_start <= 1")
        if self.scheduler == "oracle":
            if self.k_stas > self.oracle_max_stas or self.n_rx > self.oracle_max_rx:
                raise ConfigError(
                    f"oracle scheduler is capped at K<={self.oracle_max_stas}, "
                    f"N_R<={self.oracle_max_rx}; got K={self.k_stas}, N_R={self.n_rx}"
                )


# config key -> (dataclass field, parser)
_KEYS = {
    "sim.k_stas": ("k_stas", int),
    "sim.n_rx": ("n_rx", int),
    "sim.n_tx": ("n_tx", int),
    "sim.bandwidth_mhz": ("bandwidth_mhz", int),
    "sim.episodes": ("episodes", int),
    "sim.max_steps": ("max_steps", int),
    "sim.scheduler": ("scheduler", str),
    "sim.seed": ("seed", int),
    "sim.output_dir": ("output_dir", str),
    "sim.replications": ("replications", int),
    "sim.parallel": ("parallel", _parse_bool),
    "sim.checkpoint_name": ("checkpoint_name", str),
    "traffic.arrival_rate_fps": ("arrival_rate_fps", float),
    "traffic.rate_is_per_sta": ("rate_is_per_sta", _parse_bool),
    "traffic.buffer_capacity": ("buffer_capacity", int),
    "traffic.initial_buffer_mean": ("initial_buffer_mean", float),
    "traffic.protocol_gap_s": ("protocol_gap_s", float),
    "phy.q_bytes": ("q_bytes", int),
    "phy.tau_ppdu_s": ("tau_ppdu_s", float),
    "phy.tau_symbol_s": ("tau_symbol_s", float),
    "phy.overhead_s": ("overhead_s", float),
    "chan.num_taps": ("num_taps", int),
    "chan.last_tap_atten_db": ("last_tap_atten_db", float),
    "chan.pathloss_exponent": ("pathloss_exponent", float),
    "chan.ref_loss_db": ("ref_loss_db", float),
    "chan.tx_power_dbm": ("tx_power_dbm", float),
    "chan.noise_figure_db": ("noise_figure_db", float),
    "chan.dist_min_m": ("dist_min_m", float),
    "chan.dist_max_m": ("dist_max_m", float),
    "agent.branch_hidden": ("branch_hidden", _parse_int_tuple),
    "agent.fusion_hidden": ("fusion_hidden", _parse_int_tuple),
    "agent.learning_rate": ("learning_rate", float),
    "agent.batch_size": ("batch_size", int),
    "agent.gamma": ("gamma", float),
    "agent.replay_capacity": ("replay_capacity", int),
    "agent.eps_start": ("eps_start", float),
    "agent.eps_end": ("eps_end", float),
    "agent.eps_decay_fraction": ("eps_decay_fraction", float),
    "agent.target_sync": ("target_sync", int),
    "agent.reward_scale": ("reward_scale", float),
    "agent.epoch_batches": ("epoch_batches", int),
    "agent.buffer_divisor": ("buffer_divisor", float),
    "agent.buffer_cap": ("buffer_cap", float),
    "agent.feat_db_min": ("feat_db_min", float),
    "agent.feat_db_max": ("feat_db_max", float),
    "baseline.sus_alpha": ("sus_alpha", float),
    "baseline.buffer_order_ascending": ("buffer_order_ascending", _parse_bool),
    "oracle.max_stas": ("oracle_max_stas", int),
    "oracle.max_rx": ("oracle_max_rx", int),
    "oracle.max_cubes": ("oracle_max_cubes", int),
    "metrics.wall_clock": ("wall_clock_metrics", _parse_bool),
}


def _parse_pairs(text: str, source: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def _env_overrides() -> dict[str, str]:
    out = {}
    for name, value in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        out[key] = value
    return out


def _apply(pairs: dict[str, str]) -> ScenarioConfig:
    values: dict = {}
    mcs_rows: dict[int, tuple[float, int, float]] = {}
    for key, text in pairs.items():
        if key.startswith("phy.mcs."):
            try:
                row_idx = int(key.rsplit(".", 1)[1])
                parts = text.split()
                if len(parts) != 3:
                    raise ValueError("expected '<threshold_db> <bits> <rate>'")
                mcs_rows[row_idx] = (float(parts[0]), int(parts[1]), _parse_fraction(parts[2]))
            except ValueError as exc:
                raise ConfigError(f"bad MCS row {key!r}: {exc}") from exc
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        field_name, parser = _KEYS[key]
        try:
            values[field_name] = parser(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    if mcs_rows:
        if sorted(mcs_rows) != list(range(len(mcs_rows))):
            raise ConfigError("phy.mcs.* rows must be numbered 0..n-1 without gaps")
        values["mcs_rows"] = tuple(mcs_rows[i] for i in range(len(mcs_rows)))
    cfg = ScenarioConfig(**values)
    cfg.validate()
    return cfg


def parse_config(text: str, source: str = "<config>", use_env: bool = True) -> ScenarioConfig:
    pairs = _parse_pairs(text, source)
    if use_env:
        pairs.update(_env_overrides())
    return _apply(pairs)


def load_config(path, use_env: bool = True) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {path}: {exc}") from exc
    return parse_config(text, source=str(path), use_env=use_env)


def format_config(cfg: ScenarioConfig) -> str:
    """Normalised dump, one line per key in table order."""
    by_field = {f: k for k, (f, _) in _KEYS.items()}
    lines = []
    for f in fields(cfg):
        if f.name == "mcs_rows":
            for i, (thr, bits, rate) in enumerate(cfg.mcs_rows):
                lines.append(f"phy.mcs.{i} = {thr:g} {bits} {rate:g}")
            continue
        key = by_field[f.name]
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
