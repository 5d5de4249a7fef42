"""Training loop, evaluation and routing statistics."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, StepSchedule, Tape
from .config import RunConfig
from .data import MotionDataset, iter_batches, mpjpe
from .model import GCNext

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def fit_coord_scale(dataset: MotionDataset) -> float:
    """RMS displacement from the last observed pose; fixes the network's input units."""
    last = dataset.history[:, -1:]
    rms = float(np.sqrt(np.mean((dataset.sequences - last) ** 2)))
    return rms if rms > 0 and math.isfinite(rms) else 1.0


def temperature(cfg: RunConfig, iteration: int) -> float:
    if not cfg.anneal or cfg.iterations <= 1:
        return cfg.tau
    frac = min(iteration / (cfg.iterations - 1), 1.0)
    return 5.0 * (0.5 / 5.0) ** frac


def evaluate(model: GCNext, dataset: MotionDataset) -> np.ndarray:
    """Per-frame validation MPJPE (mm) with inference-mode routing."""
    return mpjpe(model.predict(dataset.history), dataset.future, mode="per-frame")


@dataclass
class MetricsLog:
    t_fut: int
    rows: list[tuple] = field(default_factory=list)

    @property
    def header(self) -> list[str]:
        return (["iteration", "train_loss"]
                + [f"val_mpjpe_f{k + 1}" for k in range(self.t_fut)] + ["val_mpjpe_avg"])

    def add(self, iteration: int, loss: float, per_frame: np.ndarray):
        self.rows.append((iteration, loss, *per_frame.tolist(), float(per_frame.mean())))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    @property
    def final_val(self) -> float:
        return self.rows[-1][-1]


def train_loop(model: GCNext, train: MotionDataset, val: MotionDataset | None, cfg: RunConfig,
               optimizer: Adam | None = None, set_scale: bool = True) -> tuple[GCNext, MetricsLog]:
    """Minimize MPJPE on ``train``; log (iteration, loss, per-frame val MPJPE) every ``eval_every``."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    if set_scale and model.mode != "refine":
        model.coord_scale.value[...] = fit_coord_scale(train)
    params = model.trainable_parameters()
    if optimizer is None:
        optimizer = Adam(params, StepSchedule(cfg.lr_start, cfg.lr_drop_to, cfg.lr_drop_at),
                         clip_norm=cfg.clip_norm)
    model.optimizer = optimizer
    noise_rng = np.random.default_rng([cfg.seed, 1])
    batches = iter_batches(len(train), cfg.batch_size, cfg.seed)
    metrics = MetricsLog(model.t_fut)
    history, future = train.history, train.future
    loss_value = float("nan")
    for it in range(cfg.iterations):
        idx = next(batches)
        for layer in model.layers:
            if layer.selector is not None:
                layer.selector.tau = temperature(cfg, it)
        tape = Tape()
        pred = model.forward(tape, history[idx], noise_rng)
        loss = tape.mpjpe_loss(pred, future[idx])
        loss_value = float(loss.value)
        if not math.isfinite(loss_value):
            raise TrainingDiverged(f"non-finite loss {loss_value} at iteration {it}")
        tape.backward(loss, params)
        optimizer.step(it)
        if val is not None and ((it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations):
            per_frame = evaluate(model, val)
            metrics.add(it + 1, loss_value, per_frame)
            log.info("iter %d loss %.3f val %.3f", it + 1, loss_value, per_frame.mean())
    if val is not None and not metrics.rows:
        metrics.add(0, loss_value, evaluate(model, val))
    return model, metrics


def batch_loss(model: GCNext, dataset: MotionDataset, seed: int = 0) -> float:
    """Training-mode MPJPE over the whole dataset with a fixed noise seed."""
    tape = Tape()
    pred = model.forward(tape, dataset.history, np.random.default_rng(seed))
    return float(tape.mpjpe_loss(pred, dataset.future).value)


def policy_stats(model: GCNext, dataset: MotionDataset) -> np.ndarray:
    """(L, N) table: fraction of samples routed to each candidate at inference."""
    _, routes = model.predict(dataset.history, return_routes=True)
    n_opt = max((layer.n_options for layer in model.layers), default=0)
    table = np.zeros((len(model.layers), n_opt))
    for l in range(len(model.layers)):
        counts = np.bincount(routes[:, l], minlength=n_opt)
        table[l] = counts / max(len(routes), 1)
    return table
