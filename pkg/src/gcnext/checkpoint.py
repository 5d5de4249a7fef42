"""UGCK checkpoints: a named float64 tensor archive followed by the run config text.

Layout (little-endian)::

    "UGCK" | u32 version | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | u32 extents[rank] | f64 values
    u32 config length | UTF-8 config text

The config text starts with a ``# mode: <mode>`` comment so the architecture
can be rebuilt before the tensors are loaded.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Adam, StepSchedule
from .config import RunConfig, parse_config_text
from .model import GCNext, build_model

MAGIC = b"UGCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"byte offset {offset}: {message}")
        self.offset = offset


def write_archive(tensors: dict[str, np.ndarray], text: str) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        value = np.asarray(value, dtype="<f8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value).tobytes())
    body = text.encode("utf-8")
    out.append(struct.pack("<I", len(body)) + body)
    return b"".join(out)


def read_archive(raw: bytes) -> tuple[dict[str, np.ndarray], str]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError(pos, f"truncated while reading {what}")
        chunk = raw[pos: pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointFormatError(0, "bad magic, expected b'UGCK'")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointFormatError(4, f"unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2, "name length"))
        name = take(n, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(8 * size, f"values of {name}"), dtype="<f8")
        tensors[name] = data.astype(np.float64).reshape(shape)
    (n,) = struct.unpack("<I", take(4, "config length"))
    text = take(n, "config text").decode("utf-8")
    if pos != len(raw):
        raise CheckpointFormatError(pos, "trailing bytes after config text")
    return tensors, text


def model_tensors(model: GCNext, optimizer: Adam | None = None) -> dict[str, np.ndarray]:
    tensors = {name: p.value for name, p in model.named_parameters().items()}
    if optimizer is not None:
        tensors["adam.t"] = np.array(float(optimizer.t))
        for name in optimizer.m:
            tensors[f"adam.m.{name}"] = optimizer.m[name]
            tensors[f"adam.v.{name}"] = optimizer.v[name]
    return tensors


def save_checkpoint(model: GCNext, path, optimizer: Adam | None = None):
    cfg = model.config or RunConfig()
    text = f"# mode: {model.mode}\n" + cfg.to_text()
    Path(path).write_bytes(write_archive(model_tensors(model, optimizer), text))


def load_checkpoint(path) -> tuple[GCNext, Adam | None]:
    tensors, text = read_archive(Path(path).read_bytes())
    first = text.splitlines()[0] if text else ""
    mode = first.split(":", 1)[1].strip() if first.startswith("# mode:") else "scratch"
    cfg = parse_config_text(text)
    model = build_model(cfg, np.random.default_rng(0), refine=mode == "refine")
    named = model.named_parameters()
    missing = set(named) - set(tensors)
    if missing:
        raise CheckpointFormatError(0, f"checkpoint lacks tensors {sorted(missing)[:3]}")
    for name, p in named.items():
        if tensors[name].shape != p.value.shape:
            raise CheckpointFormatError(0, f"{name}: shape {tensors[name].shape} != {p.value.shape}")
        p.value[...] = tensors[name]
    optimizer = None
    if "adam.t" in tensors:
        optimizer = Adam(model.trainable_parameters(),
                         StepSchedule(cfg.lr_start, cfg.lr_drop_to, cfg.lr_drop_at),
                         clip_norm=cfg.clip_norm)
        optimizer.t = int(tensors["adam.t"])
        for name in list(optimizer.m):
            optimizer.m[name] = tensors[f"adam.m.{name}"].copy()
            optimizer.v[name] = tensors[f"adam.v.{name}"].copy()
    return model, optimizer
