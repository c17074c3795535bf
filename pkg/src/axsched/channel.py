"""Uplink channel generator: tapped-delay Rayleigh fading plus log-distance path loss.

Small-scale fading is a num_taps-tap delay line with exponentially decaying
tap powers normalised to unit total, transformed to the 256-subcarrier grid
with a DFT, so neighbouring subcarriers stay correlated while distant ones
decorrelate. Large-scale attenuation follows a log-distance law. The result
is a per-step block-fading CSI tensor of shape (S, K, N_R, N_T).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelParams",
    "drop_stations",
    "tap_powers",
    "pathloss_gain",
    "sample_csi",
    "noise_power_w",
    "dbm_to_watts",
    "dump_csi",
    "load_csi",
]

_CSI_MAGIC = b"AXCS"
_CSI_VERSION = 1


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def noise_power_w(noise_figure_db: float, bandwidth_hz: float, num_subcarriers: int) -> float:
    """Per-subcarrier thermal noise power: -174 dBm/Hz + NF over one subcarrier."""
    sub_hz = bandwidth_hz / num_subcarriers
    return dbm_to_watts(-174.0 + noise_figure_db + 10.0 * np.log10(sub_hz))


@dataclass(frozen=True)
class ChannelParams:
    """Everything needed to draw one CSI realisation for a fixed station drop."""

    sta_distances_m: tuple[float, ...]
    num_taps: int = 8
    last_tap_atten_db: float = 15.0
    pathloss_exponent: float = 3.5
    ref_loss_db: float = 40.0
    tx_power_w: float = dbm_to_watts(15.0)
    noise_power_w: float = noise_power_w(7.0, 20e6, 256)

    def __post_init__(self):
        if self.num_taps < 1:
            raise ValueError("num_taps must be >= 1")
        if self.tx_power_w <= 0 or self.noise_power_w <= 0:
            raise ValueError("powers must be positive")
        if any(d <= 0 for d in self.sta_distances_m):
            raise ValueError("distances must be positive")

    @property
    def k_stas(self) -> int:
        return len(self.sta_distances_m)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def drop_stations(k_count: int, rng, low_m: float = 20.0, high_m: float = 100.0) -> np.ndarray:
    """Uniform i.i.d. station distances in [low_m, high_m] metres."""
    if k_count < 1:
        raise ValueError("k_count must be >= 1")
    return _as_rng(rng).uniform(low_m, high_m, size=k_count)


def tap_powers(num_taps: int, last_tap_atten_db: float) -> np.ndarray:
    """Exponential tap power profile, unit total; last tap sits last_tap_atten_db down."""
    if num_taps == 1:
        return np.ones(1)
    atten = 10.0 ** (-last_tap_atten_db / 10.0)
    profile = atten ** (np.arange(num_taps) / (num_taps - 1))
    return profile / profile.sum()


def pathloss_gain(distance_m, exponent: float, ref_loss_db: float) -> np.ndarray:
    """Linear power gain of the log-distance path-loss law (ref at 1 m)."""
    d = np.asarray(distance_m, dtype=float)
    loss_db = ref_loss_db + 10.0 * exponent * np.log10(d)
    return 10.0 ** (-loss_db / 10.0)


def sample_csi(params: ChannelParams, num_subcarriers: int, n_rx: int, n_tx: int, rng) -> np.ndarray:
    """One block-fading CSI draw, shape (S, K, N_R, N_T), complex128.

    Per station and antenna pair: num_taps complex-Gaussian taps with the
    exponential power profile, DFT across the S-point grid, scaled by the
    square root of the station's path-loss gain.
    """
    gen = _as_rng(rng)
    k = params.k_stas
    powers = tap_powers(params.num_taps, params.last_tap_atten_db)
    shape = (k, n_rx, n_tx, params.num_taps)
    taps = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
    taps *= np.sqrt(powers / 2.0)
    freq = np.fft.fft(taps, n=num_subcarriers, axis=-1)  # (K, N_R, N_T, S)
    gains = pathloss_gain(params.sta_distances_m, params.pathloss_exponent, params.ref_loss_db)
    freq *= np.sqrt(gains)[:, None, None, None]
    return np.ascontiguousarray(freq.transpose(3, 0, 1, 2))


def dump_csi(path, csi: np.ndarray) -> None:
    """Write a CSI tensor as complex64.

    Binary format, little-endian: magic ``AXCS``, u32 version, four u32 dims
    (S, K, N_R, N_T), then S*K*N_R*N_T complex64 values (float32 re/im pairs)
    in row-major order.
    """
    arr = np.ascontiguousarray(csi, dtype=np.dtype("<c8"))
    if arr.ndim != 4:
        raise ValueError("expected a (S, K, N_R, N_T) tensor")
    with open(path, "wb") as fh:
        fh.write(_CSI_MAGIC)
        fh.write(struct.pack("<I", _CSI_VERSION))
        fh.write(struct.pack("<4I", *arr.shape))
        fh.write(arr.tobytes())


def load_csi(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CSI_MAGIC:
            raise ValueError(f"not a CSI dump (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CSI_VERSION:
            raise ValueError(f"unsupported CSI dump version {version}")
        dims = struct.unpack("<4I", fh.read(16))
        count = int(np.prod(dims))
        data = np.frombuffer(fh.read(count * 8), dtype=np.dtype("<c8"), count=count)
    return data.reshape(dims)
