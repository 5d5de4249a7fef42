"""Synthetic skeleton motion, MSEQ files, MPJPE and the zero-velocity baseline.

All coordinates are millimeters. Datasets hold full sequences of
``t_hist + t_fut`` frames; ``history``/``future`` are views into them.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import ShapeError

MSEQ_MAGIC = b"MSEQ"
MSEQ_VERSION = 1
_HEADER = struct.Struct("<4s6I")


class MSEQFormatError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte offset {offset}: {message}")
        self.offset = offset


@dataclass
class MotionDataset:
    sequences: np.ndarray  # (n, t_hist + t_fut, J, C)
    t_hist: int

    def __post_init__(self):
        self.sequences = np.ascontiguousarray(self.sequences, dtype=np.float64)
        if self.sequences.ndim != 4:
            raise ShapeError(f"sequences must be (n, T, J, C), got {self.sequences.shape}")
        if not 1 <= self.t_hist <= self.sequences.shape[1]:
            raise ShapeError(f"t_hist={self.t_hist} out of range for {self.sequences.shape[1]} frames")
        if not np.all(np.isfinite(self.sequences)):
            raise ValueError("motion samples must be finite")

    def __len__(self):
        return self.sequences.shape[0]

    @property
    def t_fut(self) -> int:
        return self.sequences.shape[1] - self.t_hist

    @property
    def joints(self) -> int:
        return self.sequences.shape[2]

    @property
    def channels(self) -> int:
        return self.sequences.shape[3]

    @property
    def history(self) -> np.ndarray:
        return self.sequences[:, : self.t_hist]

    @property
    def future(self) -> np.ndarray:
        return self.sequences[:, self.t_hist:]

    def subset(self, index) -> "MotionDataset":
        return MotionDataset(self.sequences[index], self.t_hist)


@dataclass(frozen=True)
class SyntheticConfig:
    family: str = "sinusoidal"  # sinusoidal | ballistic | mixed
    joints: int = 7
    channels: int = 3
    t_hist: int = 10
    t_fut: int = 10
    amplitude: tuple[float, float] = (50.0, 300.0)  # mm
    frequency: tuple[float, float] = (0.01, 0.05)  # cycles per frame
    root_speed: tuple[float, float] = (0.0, 10.0)  # mm per frame
    bone_offset: float = 300.0  # mm, half-width of the rest-pose spread
    noise_std: float = 0.0
    seed: int = 0

    def validate(self):
        if self.family not in ("sinusoidal", "ballistic", "mixed"):
            raise ValueError(f"unknown motion family {self.family!r}")
        for name in ("amplitude", "frequency", "root_speed"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"invalid {name} range ({lo}, {hi})")
        if self.joints < 1 or self.channels < 1 or self.t_hist < 1 or self.t_fut < 1:
            raise ValueError("joints, channels, t_hist and t_fut must be positive")
        if self.noise_std < 0 or self.bone_offset < 0:
            raise ValueError("noise_std and bone_offset must be non-negative")


def _sample(cfg: SyntheticConfig, index: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, index])
    J, C = cfg.joints, cfg.channels
    t = np.arange(cfg.t_hist + cfg.t_fut, dtype=np.float64)[:, None, None]
    family = cfg.family
    if family == "mixed":
        family = ("sinusoidal", "ballistic")[int(rng.integers(2))]
    rest = rng.uniform(-cfg.bone_offset, cfg.bone_offset, size=(J, C))
    direction = rng.normal(size=C)
    direction /= np.linalg.norm(direction) or 1.0
    root_velocity = rng.uniform(*cfg.root_speed) * direction
    if family == "sinusoidal":
        amp = rng.uniform(*cfg.amplitude, size=(J, C))
        freq = rng.uniform(*cfg.frequency, size=(J, 1))
        phase = rng.uniform(0.0, 2 * np.pi, size=(J, C))
        motion = amp * np.sin(2 * np.pi * freq * t + phase)
    else:
        # per-joint parabolic arcs sharing one downward acceleration
        v0 = rng.uniform(-1, 1, size=(J, C)) * cfg.amplitude[1] / (cfg.t_hist + cfg.t_fut)
        accel = np.zeros(C)
        accel[-1] = -rng.uniform(0.5, 2.0)
        motion = v0 * t + 0.5 * accel * t * t
    seq = rest + root_velocity * t + motion
    if cfg.noise_std > 0:
        seq = seq + rng.normal(scale=cfg.noise_std, size=seq.shape)
    return seq


def gen_synthetic(cfg: SyntheticConfig, n: int, start: int = 0) -> MotionDataset:
    """``n`` samples with indices ``start .. start+n-1``; sample i depends only on (cfg, i)."""
    cfg.validate()
    if n < 1:
        raise ValueError("n must be at least 1")
    seqs = np.stack([_sample(cfg, start + i) for i in range(n)])
    return MotionDataset(seqs, cfg.t_hist)


def mpjpe(pred, gt, mode: str = "average"):
    """Mean per-joint position error.

    ``pred``/``gt`` are (..., T_f, J, 3). ``per-frame`` returns one value
    per predicted frame (averaged over joints and any leading sample axes);
    ``average`` returns the mean over frames.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.ndim < 3 or pred.shape[-1] != 3:
        raise ShapeError(f"expected (..., T_f, J, 3), got {pred.shape}")
    dist = np.sqrt(((pred - gt) ** 2).sum(axis=-1))
    per_frame = dist.reshape(-1, *dist.shape[-2:]).mean(axis=(0, 2))
    if mode == "per-frame":
        return per_frame
    if mode == "average":
        return float(per_frame.mean())
    raise ValueError(f"unknown mpjpe mode {mode!r}")


def zero_velocity(history, t_fut: int) -> np.ndarray:
    """Repeat the last observed pose ``t_fut`` times."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim < 3 or history.shape[-3] < 1:
        raise ShapeError(f"history must be (..., T_h, J, C) with T_h >= 1, got {history.shape}")
    last = history[..., -1:, :, :]
    return np.repeat(last, t_fut, axis=-3)


def iter_batches(n: int, batch_size: int, seed: int, epochs: int | None = None):
    """Yield index arrays; each epoch is a fresh seeded permutation of ``range(n)``."""
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = np.random.default_rng([seed, epoch]).permutation(n)
        for i in range(0, n, batch_size):
            yield order[i: i + batch_size]
        epoch += 1


def save_mseq(dataset: MotionDataset, path):
    n, T, J, C = dataset.sequences.shape
    header = _HEADER.pack(MSEQ_MAGIC, MSEQ_VERSION, n, dataset.t_hist, T - dataset.t_hist, J, C)
    body = dataset.sequences.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + body)


def load_mseq(path) -> MotionDataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MSEQ_MAGIC:
        raise MSEQFormatError(0, f"bad magic {raw[:4]!r}, expected {MSEQ_MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise MSEQFormatError(len(raw), "truncated header")
    _, version, n, t_hist, t_fut, J, C = _HEADER.unpack_from(raw)
    if version != MSEQ_VERSION:
        raise MSEQFormatError(4, f"unsupported version {version}")
    if t_hist < 1:
        raise MSEQFormatError(12, "T_h must be at least 1")
    count = n * (t_hist + t_fut) * J * C
    expected = _HEADER.size + 4 * count
    if len(raw) != expected:
        offset = min(len(raw), expected)
        raise MSEQFormatError(offset, f"file has {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    seqs = values.astype(np.float64).reshape(n, t_hist + t_fut, J, C)
    return MotionDataset(seqs, t_hist)
