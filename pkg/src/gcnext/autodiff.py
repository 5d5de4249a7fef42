"""Tape-based reverse-mode differentiation, Adam, and a finite-difference checker.

Every op is registered in ``OPS`` under its kind name. A forward rule
returns the output value together with a closure mapping the upstream
gradient to one gradient per input (``None`` for inputs that do not need
one). ``Tape.backward`` replays the recorded entries in reverse order and
accumulates gradients additively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import unigc
from .tensor import ShapeError, as_tensor, parse_subscripts


class UnsupportedOperationError(KeyError):
    pass


class NumericError(ArithmeticError):
    pass


class Node:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = as_tensor(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.value.shape})"


class Parameter(Node):
    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        super().__init__(value, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.value)

    def freeze(self):
        self.trainable = False
        self.requires_grad = False

    def unfreeze(self):
        self.trainable = True
        self.requires_grad = True

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


@dataclass
class Entry:
    kind: str
    inputs: tuple
    output: Node
    rule: Callable = field(repr=False)


# ---------------------------------------------------------------------------
# numeric kernels shared by the tape ops and the tape-free inference path


def layer_norm_value(x, gamma, beta, eps):
    axes = tuple(range(x.ndim - gamma.ndim, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, axes)


def affine_value(x, w, b):
    return x @ w.T + b


def softmax_value(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def graph_conv_value(x, blocks, spec):
    stacked = np.broadcast_to(blocks, (spec.d, spec.g, spec.g)) if spec.tied else blocks
    return unigc.from_blocks(unigc.apply_blocks(stacked, unigc.to_blocks(x, spec)), spec)


def one_hot(index, n):
    out = np.zeros(np.shape(index) + (n,))
    np.put_along_axis(out, np.asarray(index)[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------------------
# op registry

OPS: dict[str, Callable] = {}


def op(name):
    def register(fn):
        OPS[name] = fn
        return fn
    return register


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


@op("add")
def _add(a, b):
    _same_shape("add", a, b)
    return a + b, lambda g: (g, g)


@op("elemwise_mul")
def _mul(a, b):
    _same_shape("elemwise_mul", a, b)
    return a * b, lambda g: (g * b, g * a)


@op("scale")
def _scale(x, alpha: float):
    return alpha * x, lambda g: (alpha * g,)


@op("reshape")
def _reshape(x, shape):
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape), lambda g: (g.reshape(x.shape),)


@op("matmul")
def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible {a.shape} @ {b.shape}")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


@op("contract")
def _contract(a, b, subscripts: str):
    ia, ib, out = parse_subscripts(subscripts)
    if len(ia) != a.ndim or len(ib) != b.ndim:
        raise ShapeError(f"{subscripts!r} does not match ranks {a.ndim}, {b.ndim}")
    for letter in set(ia) & set(ib):
        if a.shape[ia.index(letter)] != b.shape[ib.index(letter)]:
            raise ShapeError(f"paired axis {letter!r} extent mismatch")
    for idx, other in ((ia, ib), (ib, ia)):
        if set(idx) - set(other) - set(out):
            raise ValueError(f"{subscripts!r}: an index summed within one operand is not differentiable here")
    value = np.einsum(f"{ia},{ib}->{out}", a, b)

    def rule(g):
        return (np.einsum(f"{out},{ib}->{ia}", g, b), np.einsum(f"{out},{ia}->{ib}", g, a))
    return value, rule


@op("sum")
def _sum(x):
    return np.array(x.sum()), lambda g: (np.full(x.shape, float(g)),)


@op("mean")
def _mean(x, axes):
    axes = tuple(a % x.ndim for a in axes)
    n = math.prod(x.shape[a] for a in axes)
    value = x.mean(axis=axes)

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape) / n,)
    return value, rule


@op("relu")
def _relu(x):
    pos = x > 0
    return np.where(pos, x, 0.0), lambda g: (g * pos,)


@op("affine")
def _affine(x, w, b):
    if w.ndim != 2 or x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine: x {x.shape}, w {w.shape}, b {b.shape}")

    def rule(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        return g @ w, g2.T @ x2, g2.sum(axis=0)
    return affine_value(x, w, b), rule


@op("layer_norm")
def _layer_norm(x, gamma, beta, eps: float = 1e-5):
    if gamma.shape != beta.shape or x.shape[x.ndim - gamma.ndim:] != gamma.shape:
        raise ShapeError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    value, (xhat, inv, axes) = layer_norm_value(x, gamma, beta, eps)
    lead = tuple(range(x.ndim - gamma.ndim))

    def rule(g):
        gx = g * gamma
        dx = inv * (gx - gx.mean(axis=axes, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=axes, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return value, rule


def _softmax_backward(y, g):
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


@op("softmax")
def _softmax(z):
    y = softmax_value(z)
    return y, lambda g: (_softmax_backward(y, g),)


@op("gumbel_softmax_st")
def _gumbel_softmax_st(logits, noise, tau: float, hard: bool):
    """Noise is an explicit input so the tape keeps the exact draw."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if logits.shape[-1] < 2:
        raise ValueError("need at least two options")
    _same_shape("gumbel_softmax_st", logits, noise)
    soft = softmax_value((logits + noise) / tau)
    value = one_hot(soft.argmax(axis=-1), soft.shape[-1]) if hard else soft

    def rule(g):
        return _softmax_backward(soft, g) / tau, None
    return value, rule


@op("weighted_sum")
def _weighted_sum(v, *ys):
    if v.ndim != 2 or v.shape[1] != len(ys):
        raise ShapeError(f"weighted_sum: weights {v.shape} for {len(ys)} terms")
    for y in ys:
        if y.shape != ys[0].shape or y.shape[0] != v.shape[0]:
            raise ShapeError("weighted_sum: term shapes disagree")
    expand = (slice(None),) + (None,) * (ys[0].ndim - 1)
    value = np.zeros_like(ys[0])
    for i, y in enumerate(ys):
        value += v[:, i][expand] * y

    def rule(g):
        gv = np.stack([(g * y).reshape(len(g), -1).sum(axis=1) for y in ys], axis=1)
        return (gv,) + tuple(v[:, i][expand] * g for i in range(len(ys)))
    return value, rule


@op("graph_conv")
def _graph_conv(x, blocks, spec: unigc.GraphConvSpec):
    if blocks.shape != spec.block_shape or x.shape[-3:] != spec.dims:
        raise ShapeError(f"graph_conv: x {x.shape}, blocks {blocks.shape} for {spec.name}")
    xb = unigc.to_blocks(x, spec)
    stacked = np.broadcast_to(blocks, (spec.d, spec.g, spec.g)) if spec.tied else blocks
    value = unigc.from_blocks(unigc.apply_blocks(stacked, xb), spec)

    def rule(g):
        gb = unigc.to_blocks(g, spec)
        gx = unigc.from_blocks(unigc.apply_blocks(stacked.transpose(0, 2, 1), gb), spec)
        g2 = gb.reshape(-1, spec.d, spec.g)
        x2 = xb.reshape(-1, spec.d, spec.g)
        ga = np.matmul(g2.transpose(1, 2, 0), x2.transpose(1, 0, 2))
        return gx, (ga.sum(axis=0) if spec.tied else ga)
    return value, rule


@op("mse_loss")
def _mse(pred, target):
    _same_shape("mse_loss", pred, target)
    r = pred - target
    return np.array((r * r).mean()), lambda g: (2.0 * float(g) * r / r.size, None)


@op("mpjpe_loss")
def _mpjpe(pred, target):
    """Mean Euclidean distance over the last axis."""
    _same_shape("mpjpe_loss", pred, target)
    r = pred - target
    dist = np.sqrt((r * r).sum(axis=-1, keepdims=True))
    n = dist.size

    def rule(g):
        safe = np.where(dist > 0, dist, 1.0)
        return float(g) * np.where(dist > 0, r / safe, 0.0) / n, None
    return np.array(dist.mean()), rule


# ---------------------------------------------------------------------------


class Tape:
    def __init__(self):
        self.entries: list[Entry] = []

    def record(self, kind: str, *inputs, **attrs) -> Node:
        try:
            forward = OPS[kind]
        except KeyError:
            raise UnsupportedOperationError(f"unsupported operation {kind!r}") from None
        nodes = tuple(i if isinstance(i, Node) else Node(i) for i in inputs)
        value, rule = forward(*(n.value for n in nodes), **attrs)
        out = Node(value, requires_grad=any(n.requires_grad for n in nodes))
        if out.requires_grad:
            self.entries.append(Entry(kind, nodes, out, rule))
        return out

    def __getattr__(self, kind):
        if kind in OPS:
            return lambda *inputs, **attrs: self.record(kind, *inputs, **attrs)
        raise AttributeError(kind)

    def backward(self, loss: Node, params=()):
        if loss.value.size != 1 or loss.value.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        for p in params:
            p.zero_grad()
        for entry in self.entries:
            for n in entry.inputs:
                if isinstance(n, Parameter):
                    n.zero_grad()
                elif n.requires_grad:
                    n.grad = None
            entry.output.grad = None
        loss.grad = np.ones_like(loss.value)
        for entry in reversed(self.entries):
            g = entry.output.grad
            if g is None:
                continue
            for n, gi in zip(entry.inputs, entry.rule(g)):
                if gi is None or not n.requires_grad:
                    continue
                gi = np.asarray(gi).reshape(n.value.shape)
                n.grad = gi.copy() if n.grad is None else n.grad + gi


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.gumbel(size=shape)


def gumbel_softmax_st(tape: Tape, logits, tau: float, rng: np.random.Generator, hard: bool = True) -> Node:
    logits = logits if isinstance(logits, Node) else Node(logits)
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tape.gumbel_softmax_st(logits, sample_gumbel(rng, logits.shape), tau=tau, hard=hard)


def finite_diff_check(fn: Callable[[Tape], Node], params, h: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` builds the loss on a fresh tape and must be deterministic (draw
    any noise from a generator it seeds itself).
    """
    params = list(params)
    tape = Tape()
    loss = fn(tape)
    tape.backward(loss, params)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = float(fn(Tape()).value)
            flat[k] = orig - h
            down = float(fn(Tape()).value)
            flat[k] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[k]
            if not (math.isfinite(numeric) and math.isfinite(a)):
                raise NumericError(f"non-finite gradient for {p.name}[{k}]")
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


@dataclass(frozen=True)
class StepSchedule:
    """Piecewise-constant learning rate: ``start`` until ``drop_at``, then ``drop_to``."""

    start: float = 6e-4
    drop_to: float = 5e-6
    drop_at: int = 75_000

    def __call__(self, iteration: int) -> float:
        return self.start if iteration < self.drop_at else self.drop_to


class Adam:
    def __init__(self, params, schedule: StepSchedule | Callable[[int], float] = StepSchedule(),
                 betas=(0.9, 0.999), eps=1e-8, clip_norm: float | None = None):
        self.params = list(params)
        self.schedule = schedule
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, iteration: int):
        lr = self.schedule(iteration)
        self.t += 1
        live = [p for p in self.params if p.trainable]
        scale = 1.0
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in live))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p in live:
            g = p.grad * scale
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
