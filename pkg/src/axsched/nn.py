"""Minimal Q-network substrate: two-branch MLP, plain SGD, FIFO replay memory.

The network feeds channel features and buffer features through separate
rectifier branches, concatenates them and runs a fusion stack whose linear
output is one Q-value per action. Updates follow the summed-squared-error
loss J = mean_j (y_j - Q(s_j, a_j))^2 with the step theta -= (lr/|B|) dJ/dtheta,
computed by exact backpropagation in float64.
"""

from __future__ import annotations

import struct
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TwoBranchMlp",
    "ReplayBuffer",
    "Transition",
    "EmptyBufferError",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]

_CKPT_MAGIC = b"AXQN"
_CKPT_VERSION = 1

# state / next_state are (csi_features, buf_features, valid_action_mask | None)
Transition = namedtuple("Transition", "state action reward next_state terminal")


class EmptyBufferError(Exception):
    """Sampling from a replay memory that holds no transitions."""


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint file."""


def _relu(x):
    return np.maximum(x, 0.0)


def _init_layers(dims, rng, out_scale=1.0):
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        scale = np.sqrt(2.0 / fan_in)
        if i == len(dims) - 2:
            scale *= out_scale
        w = rng.standard_normal((fan_out, fan_in)) * scale
        b = np.zeros(fan_out)
        layers.append([w, b])
    return layers


class TwoBranchMlp:
    """MLP with separate channel/buffer branches merged into a fusion stack."""

    def __init__(self, csi_layers, buf_layers, fusion_layers):
        self.csi_layers = csi_layers
        self.buf_layers = buf_layers
        self.fusion_layers = fusion_layers
        fusion_in = self.fusion_layers[0][0].shape[1]
        branch_out = self.csi_layers[-1][0].shape[0] + self.buf_layers[-1][0].shape[0]
        if fusion_in != branch_out:
            raise ValueError("fusion input dim must equal the sum of branch output dims")

    @classmethod
    def create(
        cls,
        csi_dim: int,
        buf_dim: int,
        n_actions: int,
        branch_hidden=(64,),
        fusion_hidden=(128, 64),
        rng=None,
    ) -> "TwoBranchMlp":
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        csi = _init_layers((csi_dim, *branch_hidden), rng)
        buf = _init_layers((buf_dim, *branch_hidden), rng)
        fusion_in = branch_hidden[-1] * 2
        # Small output scale keeps initial Q-values near zero.
        fusion = _init_layers((fusion_in, *fusion_hidden, n_actions), rng, out_scale=1e-2)
        return cls(csi, buf, fusion)

    @property
    def csi_dim(self) -> int:
        return self.csi_layers[0][0].shape[1]

    @property
    def buf_dim(self) -> int:
        return self.buf_layers[0][0].shape[1]

    @property
    def n_actions(self) -> int:
        return self.fusion_layers[-1][0].shape[0]

    def _forward_cached(self, csi, buf):
        cache = {"csi": [csi], "buf": [buf], "fusion": []}
        x = csi
        for w, b in self.csi_layers:
            x = _relu(x @ w.T + b)
            cache["csi"].append(x)
        y = buf
        for w, b in self.buf_layers:
            y = _relu(y @ w.T + b)
            cache["buf"].append(y)
        z = np.concatenate([x, y], axis=1)
        cache["fusion"].append(z)
        last = len(self.fusion_layers) - 1
        for i, (w, b) in enumerate(self.fusion_layers):
            z = z @ w.T + b
            if i != last:
                z = _relu(z)
            cache["fusion"].append(z)
        return z, cache

    def forward(self, csi_features, buf_features) -> np.ndarray:
        """Q-values for one state (1D inputs) or a batch (2D inputs)."""
        csi = np.asarray(csi_features, dtype=float)
        buf = np.asarray(buf_features, dtype=float)
        single = csi.ndim == 1
        if single:
            csi, buf = csi[None], buf[None]
        if csi.shape[1] != self.csi_dim or buf.shape[1] != self.buf_dim:
            raise ValueError(
                f"feature dims ({csi.shape[1]}, {buf.shape[1]}) do not match the "
                f"network ({self.csi_dim}, {self.buf_dim})"
            )
        q, _ = self._forward_cached(csi, buf)
        return q[0] if single else q

    def gradients(self, csi_batch, buf_batch, actions, targets):
        """Loss and exact dJ/dtheta for J = mean((target - Q[action])^2)."""
        csi = np.atleast_2d(np.asarray(csi_batch, dtype=float))
        buf = np.atleast_2d(np.asarray(buf_batch, dtype=float))
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=float)
        n = csi.shape[0]
        q, cache = self._forward_cached(csi, buf)
        picked = q[np.arange(n), actions]
        err = picked - targets
        loss = float((err**2).mean())

        dq = np.zeros_like(q)
        dq[np.arange(n), actions] = 2.0 * err / n

        grads = {"csi": [], "buf": [], "fusion": []}
        delta = dq
        for i in range(len(self.fusion_layers) - 1, -1, -1):
            w, _ = self.fusion_layers[i]
            inp = cache["fusion"][i]
            if i != len(self.fusion_layers) - 1:
                delta = delta * (cache["fusion"][i + 1] > 0)
            grads["fusion"].insert(0, (delta.T @ inp, delta.sum(axis=0)))
            delta = delta @ w
        csi_out = self.csi_layers[-1][0].shape[0]
        d_csi, d_buf = delta[:, :csi_out], delta[:, csi_out:]
        for name, layers, d in (("csi", self.csi_layers, d_csi), ("buf", self.buf_layers, d_buf)):
            delta = d
            for i in range(len(layers) - 1, -1, -1):
                w, _ = layers[i]
                delta = delta * (cache[name][i + 1] > 0)
                grads[name].insert(0, (delta.T @ cache[name][i], delta.sum(axis=0)))
                delta = delta @ w
        return loss, grads

    def sgd_step(self, csi_batch, buf_batch, actions, targets, learning_rate: float) -> float:
        """One update theta -= (lr/|B|) dJ/dtheta; returns the pre-update loss."""
        n = np.atleast_2d(np.asarray(csi_batch)).shape[0]
        loss, grads = self.gradients(csi_batch, buf_batch, actions, targets)
        step = learning_rate / n
        for name, layers in (("csi", self.csi_layers), ("buf", self.buf_layers), ("fusion", self.fusion_layers)):
            for (w, b), (gw, gb) in zip(layers, grads[name]):
                w -= step * gw
                b -= step * gb
        return loss

    def parameters(self):
        """All weight/bias arrays, in a stable order (live references)."""
        out = []
        for layers in (self.csi_layers, self.buf_layers, self.fusion_layers):
            for w, b in layers:
                out.extend([w, b])
        return out

    def flat_gradients(self, csi_batch, buf_batch, actions, targets):
        """gradients() rearranged to match parameters() ordering."""
        loss, grads = self.gradients(csi_batch, buf_batch, actions, targets)
        out = []
        for name in ("csi", "buf", "fusion"):
            for gw, gb in grads[name]:
                out.extend([gw, gb])
        return loss, out

    def copy(self) -> "TwoBranchMlp":
        dup = [[(w.copy(), b.copy()) for w, b in layers] for layers in
               (self.csi_layers, self.buf_layers, self.fusion_layers)]
        return TwoBranchMlp(*[[[w, b] for w, b in layers] for layers in dup])

    def load_from(self, other: "TwoBranchMlp") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            if mine.shape != theirs.shape:
                raise ValueError("network shapes differ")
            mine[:] = theirs


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._pos] = transition
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform with replacement; deterministic given the generator state."""
        if not self._items:
            raise EmptyBufferError("replay memory is empty")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


def _write_section(fh, layers):
    fh.write(struct.pack("<I", len(layers)))
    for w, _ in layers:
        fh.write(struct.pack("<II", *w.shape))
    for w, b in layers:
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_section(fh):
    (n_layers,) = struct.unpack("<I", fh.read(4))
    shapes = [struct.unpack("<II", fh.read(8)) for _ in range(n_layers)]
    layers = []
    for out_dim, in_dim in shapes:
        w = np.frombuffer(fh.read(out_dim * in_dim * 8), dtype="<f8").reshape(out_dim, in_dim).copy()
        b = np.frombuffer(fh.read(out_dim * 8), dtype="<f8").copy()
        layers.append([w, b])
    return layers


def save_checkpoint(path, nets: dict) -> None:
    """Serialise named networks.

    Little-endian binary: magic ``AXQN``, u32 version, u32 network count; per
    network a u16-length UTF-8 name, then three sections (channel branch,
    buffer branch, fusion), each a u32 layer count, (out, in) u32 pairs, and
    the row-major float64 weight matrix plus bias vector per layer.
    """
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(nets)))
        for name, net in nets.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            for layers in (net.csi_layers, net.buf_layers, net.fusion_layers):
                _write_section(fh, layers)


def load_checkpoint(path) -> dict:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _CKPT_MAGIC:
                raise CheckpointError(f"bad checkpoint magic {magic!r}")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _CKPT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            (count,) = struct.unpack("<I", fh.read(4))
            nets = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<H", fh.read(2))
                name = fh.read(name_len).decode("utf-8")
                sections = [_read_section(fh) for _ in range(3)]
                nets[name] = TwoBranchMlp(*sections)
            return nets
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
