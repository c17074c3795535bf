"""Link-level machinery: ZF receive combining, SINR, MCS mapping and throughput.

The receive side uses zero-forcing combiners per subcarrier: each scheduled
station's combiner is confined to the orthogonal complement of every
co-scheduled station's channel columns, so residual cross-interference is at
numerical noise level. SINR then drives a threshold MCS table, per-RU OFDM
rates, a packet-count search under the PPDU airtime cap, and the
airtime-shared throughput split in which the slowest active transmission sets
the frame duration for everyone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ru import AllocationCube, RuId, RuLayout

__all__ = [
    "SingularChannelError",
    "McsTable",
    "default_mcs_table",
    "PhyParams",
    "ThroughputResult",
    "AllocationEval",
    "zf_beamformers",
    "sinr",
    "mcs_lookup",
    "ofdm_rate",
    "ofdm_rates",
    "packet_search",
    "throughput",
    "evaluate_allocation",
]


class SingularChannelError(Exception):
    """Stacked channel columns are rank deficient; ZF separation impossible."""


_ALLOWED_BITS = {1, 2, 4, 6, 8, 10}
_ALLOWED_RATES = {1 / 2, 2 / 3, 3 / 4, 5 / 6}

# MCS0..11 style ladder: SINR threshold (dB) -> (bits/symbol, code rate).
_DEFAULT_MCS_ROWS = (
    (-1.0, 1, 1 / 2),
    (2.0, 2, 1 / 2),
    (5.0, 2, 3 / 4),
    (8.0, 4, 1 / 2),
    (11.0, 4, 3 / 4),
    (15.0, 6, 2 / 3),
    (18.0, 6, 3 / 4),
    (20.0, 6, 5 / 6),
    (24.0, 8, 3 / 4),
    (26.0, 8, 5 / 6),
    (29.0, 10, 3 / 4),
    (31.0, 10, 5 / 6),
)


@dataclass(frozen=True)
class McsTable:
    """Threshold table mapping linear SINR to (bits per symbol, code rate)."""

    rows: tuple[tuple[float, int, float], ...]

    def __post_init__(self):
        if not self.rows:
            raise ValueError("MCS table needs at least one row")
        thresholds = [r[0] for r in self.rows]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("MCS thresholds must be strictly increasing")
        for _, m, c in self.rows:
            if m not in _ALLOWED_BITS:
                raise ValueError(f"unsupported bits/symbol {m}")
            if not any(abs(c - a) < 1e-12 for a in _ALLOWED_RATES):
                raise ValueError(f"unsupported code rate {c}")

    @cached_property
    def _thr_lin(self) -> np.ndarray:
        return 10.0 ** (np.array([r[0] for r in self.rows]) / 10.0)

    @cached_property
    def _bits(self) -> np.ndarray:
        return np.array([0] + [r[1] for r in self.rows], dtype=float)

    @cached_property
    def _rates(self) -> np.ndarray:
        return np.array([0.0] + [r[2] for r in self.rows])

    def lookup(self, gamma_linear: float) -> tuple[int, float]:
        """Highest row whose threshold is <= gamma; (0, 0) below the ladder."""
        if gamma_linear < 0:
            raise ValueError("SINR must be non-negative")
        idx = int(np.searchsorted(self._thr_lin, gamma_linear, side="right"))
        return int(self._bits[idx]), float(self._rates[idx])

    def lookup_array(self, gamma_linear: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.searchsorted(self._thr_lin, gamma_linear, side="right")
        return self._bits[idx], self._rates[idx]


def default_mcs_table() -> McsTable:
    return McsTable(rows=_DEFAULT_MCS_ROWS)


def mcs_lookup(gamma_linear: float, table: McsTable) -> tuple[int, float]:
    return table.lookup(gamma_linear)


@dataclass(frozen=True)
class PhyParams:
    """Timing and framing constants of the uplink data exchange."""

    tau_symbol_s: float = 13.6e-6       # 12.8 us OFDM symbol + 0.8 us GI
    q_bits: int = 12000                 # 1500-byte packets
    tau_ppdu_s: float = 4.848e-3        # airtime cap of one uplink PPDU
    overhead_s: float = 100e-6          # trigger/SIFS/ACK abstraction, per STA

    def overhead_for(self, k_stas: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.overhead_s, dtype=float), (k_stas,))


def _phase_fix(vec: np.ndarray) -> np.ndarray:
    """Rotate batched vectors (..., N) so their largest entry is real positive."""
    idx = np.argmax(np.abs(vec), axis=-1)
    lead = np.take_along_axis(vec, idx[..., None], axis=-1)[..., 0]
    phase = lead / np.maximum(np.abs(lead), 1e-300)
    return vec * np.conj(phase)[..., None]


def zf_beamformers(channels, rel_tol: float = 1e-11) -> np.ndarray:
    """Unit-norm ZF receive combiners for co-scheduled stations.

    ``channels`` is (M, N_R) for single-antenna stations, (M, N_R, N_T), or a
    subcarrier batch (B, M, N_R, N_T). Returns combiners with matching batch
    shape, (.., M, N_R); w_k annihilates every other station's columns. For a
    lone station this is the matched filter h/||h||.

    Raises SingularChannelError when the stacked columns are rank deficient
    (including more streams than receive antennas).
    """
    h = np.asarray(channels, dtype=complex)
    squeeze_batch = False
    if h.ndim == 2:
        h = h[:, :, None]
    if h.ndim == 3:
        h = h[None]
        squeeze_batch = True
    if h.ndim != 4:
        raise ValueError("channels must have 2, 3 or 4 dimensions")
    batch, m_stas, n_rx, n_tx = h.shape
    if m_stas * n_tx > n_rx:
        raise SingularChannelError(
            f"{m_stas} stations x {n_tx} antennas exceed {n_rx} receive antennas"
        )

    if m_stas == 1 and n_tx == 1:
        # lone single-antenna station: matched filter, no decompositions needed
        vec = h[:, 0, :, 0]
        norm = np.linalg.norm(vec, axis=-1)
        if np.any(norm == 0):
            raise SingularChannelError("station channel is zero")
        w = vec / norm[:, None]
        return w[:, None, :][0] if squeeze_batch else w[:, None, :]

    stack = h.transpose(0, 2, 1, 3).reshape(batch, n_rx, m_stas * n_tx)
    if n_tx == 1:
        # one batched SVD: rank check and pseudo-inverse rows in a single pass.
        # The min-norm row nulling all other stations points along the
        # projection of the own channel onto the interference complement.
        u, s, vh = np.linalg.svd(stack, full_matrices=False)
        if np.any(s[:, -1] <= rel_tol * s[:, 0]):
            raise SingularChannelError("stacked channel matrix is rank deficient")
        pinv = np.conj(vh.transpose(0, 2, 1)) @ (np.conj(u.transpose(0, 2, 1)) / s[:, :, None])
        norm = np.linalg.norm(pinv, axis=-1)
        w = np.conj(pinv) / norm[:, :, None]
        return w[0] if squeeze_batch else w

    sv = np.linalg.svd(stack, compute_uv=False)
    if np.any(sv[:, -1] <= rel_tol * sv[:, 0]):
        raise SingularChannelError("stacked channel matrix is rank deficient")

    w = np.empty((batch, m_stas, n_rx), dtype=complex)
    for k in range(m_stas):
        if m_stas == 1:
            residual = h[:, 0]
        else:
            others = [m for m in range(m_stas) if m != k]
            interf = h[:, others].transpose(0, 2, 1, 3).reshape(batch, n_rx, -1)
            q, _ = np.linalg.qr(interf)
            residual = h[:, k] - q @ (np.conj(q.transpose(0, 2, 1)) @ h[:, k])
        if n_tx == 1:
            vec = residual[..., 0]
            norm = np.linalg.norm(vec, axis=-1)
            if np.any(norm <= rel_tol * np.linalg.norm(h[:, k, :, 0], axis=-1)):
                raise SingularChannelError("station channel lies in the interference span")
            w[:, k] = vec / norm[:, None]
        else:
            u, s, _ = np.linalg.svd(residual)
            if np.any(s[:, 0] <= rel_tol * np.linalg.norm(h[:, k], axis=(-2, -1))):
                raise SingularChannelError("station channel lies in the interference span")
            w[:, k] = _phase_fix(u[..., 0])
    return w[0] if squeeze_batch else w


def sinr(
    csi: np.ndarray,
    cube: AllocationCube,
    layout: RuLayout,
    tx_power_w: float,
    noise_power_w: float,
) -> np.ndarray:
    """Per-subcarrier, per-station linear SINR after ZF combining.

    Zero for unscheduled (subcarrier, station) pairs. Each station's transmit
    power is split evenly over its RU's tones; interference sums only over
    stations sharing the same RU, since distinct RUs never share subcarriers.
    A rank-deficient co-scheduled group degrades to zero SINR for that RU.
    """
    num_sub, k_stas = csi.shape[0], csi.shape[1]
    out = np.zeros((num_sub, k_stas))
    for ru in cube.used_rus():
        stas = cube.stas_on(ru)
        sub = layout.sub_array(ru)
        h = csi[np.ix_(sub, stas)]  # (B, M, N_R, N_T)
        p_tone = tx_power_w / layout.tones[ru]
        try:
            w = zf_beamformers(h)
        except SingularChannelError:
            continue
        cross = np.abs(np.einsum("bkr,bmrt->bkmt", np.conj(w), h)) ** 2
        cross = cross.sum(axis=-1)  # (B, M, M): power of w_k against station m
        own = np.einsum("bkk->bk", cross)
        interference = p_tone * (cross.sum(axis=2) - own)
        gamma = p_tone * own / (interference + noise_power_w)
        out[np.ix_(sub, np.asarray(stas))] = gamma
    return out


def ofdm_rate(
    cube: AllocationCube,
    sinr_matrix: np.ndarray,
    ru: RuId,
    sta: int,
    layout: RuLayout,
    table: McsTable,
    tau_symbol_s: float,
) -> float:
    """Station's OFDM rate on one RU: sum over its tones of m*c/tau. 0 if unscheduled."""
    if not cube.entry(ru, sta):
        return 0.0
    sub = layout.sub_array(ru)
    bits, rates = table.lookup_array(sinr_matrix[sub, sta])
    return float((bits * rates).sum() / tau_symbol_s)


def ofdm_rates(
    cube: AllocationCube,
    sinr_matrix: np.ndarray,
    layout: RuLayout,
    table: McsTable,
    tau_symbol_s: float,
) -> np.ndarray:
    """Per-station OFDM rate vector (each station occupies at most one RU)."""
    rates = np.zeros(cube.k_stas)
    for ru in cube.used_rus():
        stas = cube.stas_on(ru)
        sub = layout.sub_array(ru)
        bits, code = table.lookup_array(sinr_matrix[np.ix_(sub, stas)])
        rates[stas] = (bits * code).sum(axis=0) / tau_symbol_s
    return rates


def packet_search(
    rates: np.ndarray,
    buffers: np.ndarray,
    q_bits: int,
    tau_ppdu_s: float,
) -> np.ndarray:
    """Largest feasible packet count per station: min(buffer, PPDU airtime cap).

    ``rates`` are the per-station OFDM rates from ofdm_rates; stations with no
    usable rate send nothing.
    """
    rates = np.asarray(rates, dtype=float)
    buffers = np.asarray(buffers)
    cap = np.zeros(rates.shape, dtype=np.int64)
    usable = rates > 0
    cap[usable] = np.floor(rates[usable] * tau_ppdu_s / q_bits).astype(np.int64)
    return np.minimum(buffers, cap).astype(np.int64)


@dataclass(frozen=True)
class ThroughputResult:
    sta_rates: np.ndarray   # bits/s per station
    total: float            # bits/s
    airtime_s: float        # frame duration set by the slowest active station


def throughput(
    rates: np.ndarray,
    packets: np.ndarray,
    q_bits: int,
    overhead_s,
) -> ThroughputResult:
    """Airtime-shared station throughputs.

    Each active station's payload q_bits * p is divided by the frame duration,
    which is the maximum of (transmit time + overhead) over stations actually
    sending packets. Stations with zero packets contribute nothing and do not
    stretch the frame; with no active station, all rates are zero.
    """
    rates = np.asarray(rates, dtype=float)
    packets = np.asarray(packets)
    k = rates.shape[0]
    overhead = np.broadcast_to(np.asarray(overhead_s, dtype=float), (k,))
    active = packets > 0
    sta_rates = np.zeros(k)
    if not active.any():
        return ThroughputResult(sta_rates=sta_rates, total=0.0, airtime_s=0.0)
    tx_time = q_bits * packets[active] / rates[active]
    airtime = float((tx_time + overhead[active]).max())
    sta_rates[active] = q_bits * packets[active] / airtime
    return ThroughputResult(sta_rates=sta_rates, total=float(sta_rates.sum()), airtime_s=airtime)


@dataclass(frozen=True)
class AllocationEval:
    """Full per-step link evaluation for one allocation."""

    gamma: np.ndarray
    rates: np.ndarray
    packets: np.ndarray
    sta_rates: np.ndarray
    total_rate: float
    airtime_s: float


def evaluate_allocation(
    csi: np.ndarray,
    cube: AllocationCube,
    buffers: np.ndarray,
    layout: RuLayout,
    table: McsTable,
    tx_power_w: float,
    noise_power_w: float,
    phy: PhyParams,
) -> AllocationEval:
    """SINR -> rates -> packet counts -> airtime-shared throughput, in one call."""
    gamma = sinr(csi, cube, layout, tx_power_w, noise_power_w)
    rates = ofdm_rates(cube, gamma, layout, table, phy.tau_symbol_s)
    packets = packet_search(rates, buffers, phy.q_bits, phy.tau_ppdu_s)
    result = throughput(rates, packets, phy.q_bits, phy.overhead_for(cube.k_stas))
    return AllocationEval(
        gamma=gamma,
        rates=rates,
        packets=packets,
        sta_rates=result.sta_rates,
        total_rate=result.total,
        airtime_s=result.airtime_s,
    )
