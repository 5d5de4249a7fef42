"""Run configuration: plain-text ``key = value`` files with ``#`` comments.

Absent keys take the toy-preset defaults below.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .unigc import KIND_ORDER

MODELS = ("gcnext", "static", "all-avg", "all-sum")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


@dataclass
class RunConfig:
    # network
    model: str = "gcnext"
    layers: int = 8
    options: tuple[str, ...] = ("st", "sc", "s", "c")
    tied: bool = False
    static_kind: str = "sc"
    static_tied: bool = True
    residual: bool = True
    hidden: int = 64
    pooling: str = "joints"
    tau: float = 1.0
    anneal: bool = False
    freeze_base: bool = True
    # data
    t_hist: int = 10
    t_fut: int = 10
    joints: int = 7
    channels: int = 3
    family: str = "sinusoidal"
    noise_std: float = 0.0
    n_train: int = 4096
    n_val: int = 512
    train_data: str = ""
    val_data: str = ""
    # optimization
    lr_start: float = 6e-4
    lr_drop_to: float = 5e-6
    lr_drop_at: int = 4400
    batch_size: int = 32
    iterations: int = 5000
    clip_norm: float | None = None
    eval_every: int = 250
    seed: int = 0

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.t_hist + self.t_fut, self.joints, self.channels)

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}", key=key)

        if self.model not in MODELS:
            bad("model", f"expected one of {MODELS}, got {self.model!r}")
        if not self.options:
            bad("options", "option set must not be empty")
        for k in self.options:
            if k not in KIND_ORDER:
                bad("options", f"unknown kind {k!r}")
        if len(set(self.options)) != len(self.options):
            bad("options", "duplicate kinds")
        if self.model == "gcnext" and len(self.options) < 2:
            bad("options", "the selector needs at least two options")
        if self.static_kind not in KIND_ORDER:
            bad("static_kind", f"unknown kind {self.static_kind!r}")
        if self.pooling not in ("joints", "all"):
            bad("pooling", "expected joints or all")
        if self.family not in ("sinusoidal", "ballistic", "mixed"):
            bad("family", f"unknown family {self.family!r}")
        for key in ("layers", "hidden", "t_hist", "t_fut", "joints", "channels",
                    "batch_size", "eval_every", "n_train", "n_val"):
            if getattr(self, key) < (0 if key == "layers" else 1):
                bad(key, "out of range")
        if self.iterations < 0 or self.lr_drop_at < 0:
            bad("iterations", "must be non-negative")
        if self.tau <= 0:
            bad("tau", "temperature must be positive")
        if self.lr_start < 0 or self.lr_drop_to < 0:
            bad("lr_start", "learning rates must be non-negative")
        if self.noise_std < 0:
            bad("noise_std", "must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            bad("clip_norm", "must be positive or none")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ",".join(value)
            elif value is None:
                text = "none"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, text: str):
    kind = _TYPES[key]
    if kind == "bool":
        low = text.lower()
        if low in ("true", "on", "yes", "1"):
            return True
        if low in ("false", "off", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "float | None":
        return None if text.lower() == "none" else float(text)
    if kind == "tuple[str, ...]":
        return tuple(s.strip() for s in text.split(",") if s.strip())
    return text


def parse_config_text(text: str) -> RunConfig:
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})", lineno, key) from None
        lines[key] = lineno
    cfg = RunConfig(**values)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc), lines.get(exc.key), exc.key) from None


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())
