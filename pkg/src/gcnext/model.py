"""GCNext: per-sample, per-layer selection among candidate graph convolutions.

Every model here is a stack of :class:`Layer` objects behind a shared
prediction head. A layer aggregates its candidate branches in one of three
ways:

* ``select``: a selector routes each sample to one branch (GCNext);
* ``avg`` / ``sum``: fixed uniform aggregation over all branches (ablations);
* a single branch with ``sum`` is a plain static GCN layer.

In refine mode a layer also carries the frozen graph convolution of a
preexisting static layer, and one option is the null branch (``None``).
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Node,
    Parameter,
    Tape,
    affine_value,
    gumbel_softmax_st,
    graph_conv_value,
    layer_norm_value,
)
from .config import RunConfig
from .tensor import ShapeError
from .unigc import AdjacencyStore, GraphConvSpec, make_spec

LN_EPS = 1e-5


class GraphConv:
    def __init__(self, spec: GraphConvSpec, name: str, rng: np.random.Generator | None = None):
        self.spec = spec
        if rng is None:
            blocks = np.zeros(spec.block_shape)
        else:
            s = 1.0 / math.sqrt(spec.g)
            blocks = rng.uniform(-s, s, size=spec.block_shape)
        self.adj = Parameter(blocks, name)

    @property
    def store(self) -> AdjacencyStore:
        return AdjacencyStore(self.spec, self.adj.value)

    def forward(self, tape: Tape, x: Node) -> Node:
        return tape.graph_conv(x, self.adj, spec=self.spec)

    def value(self, x: np.ndarray) -> np.ndarray:
        return graph_conv_value(x, self.adj.value, self.spec)

    def parameters(self):
        return [self.adj]


class Selector:
    """Average pooling followed by a one-hidden-layer relu MLP producing N logits."""

    def __init__(self, dims, n_options: int, hidden: int, pooling: str, name: str,
                 rng: np.random.Generator, tau: float = 1.0):
        T, J, C = dims
        self.pooling = pooling
        self.axes = (-2,) if pooling == "joints" else (-3, -2)
        features = T * C if pooling == "joints" else C
        self.tau = tau
        self.w1 = Parameter(rng.uniform(-1, 1, (hidden, features)) / math.sqrt(features), f"{name}.w1")
        self.b1 = Parameter(np.zeros(hidden), f"{name}.b1")
        self.w2 = Parameter(rng.uniform(-1, 1, (n_options, hidden)) / math.sqrt(hidden), f"{name}.w2")
        self.b2 = Parameter(np.zeros(n_options), f"{name}.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def logits(self, tape: Tape, x: Node) -> Node:
        pooled = tape.mean(x, axes=self.axes)
        flat = tape.reshape(pooled, shape=(x.shape[0], math.prod(pooled.shape[1:])))
        hidden = tape.relu(tape.affine(flat, self.w1, self.b1))
        return tape.affine(hidden, self.w2, self.b2)

    def logits_value(self, x: np.ndarray) -> np.ndarray:
        flat = x.mean(axis=self.axes).reshape(len(x), -1)
        hidden = affine_value(flat, self.w1.value, self.b1.value)
        hidden = np.where(hidden > 0, hidden, 0.0)
        return affine_value(hidden, self.w2.value, self.b2.value)

    def route(self, tape: Tape, x: Node, rng: np.random.Generator, hard: bool = True) -> Node:
        return gumbel_softmax_st(tape, self.logits(tape, x), self.tau, rng, hard=hard)


class Layer:
    def __init__(self, candidates: list[GraphConv | None], name: str, channels: int, frame_shape,
                 selector: Selector | None = None, aggregate: str = "select",
                 residual: bool = True, base: "Layer | None" = None):
        if aggregate == "select" and selector is None:
            raise ValueError("select aggregation needs a selector")
        if aggregate not in ("select", "avg", "sum"):
            raise ValueError(f"unknown aggregate {aggregate!r}")
        self.candidates = candidates
        self.selector = selector
        self.aggregate = aggregate
        self.residual = residual
        self.base = base
        if base is not None:
            # refine: update and norm are the preexisting layer's
            self.update_w, self.update_b = base.update_w, base.update_b
            self.gamma, self.beta = base.gamma, base.beta
            self.residual = base.residual
        else:
            self.update_w = Parameter(np.eye(channels), f"{name}.update.w")
            self.update_b = Parameter(np.zeros(channels), f"{name}.update.b")
            self.gamma = Parameter(np.ones(frame_shape), f"{name}.norm.gamma")
            self.beta = Parameter(np.zeros(frame_shape), f"{name}.norm.beta")
        self.branch_evals = np.zeros(len(candidates), dtype=np.int64)
        self.last_choice: np.ndarray | None = None

    @property
    def n_options(self) -> int:
        return len(self.candidates)

    def own_parameters(self):
        ps = [c.adj for c in self.candidates if c is not None]
        if self.selector is not None:
            ps += self.selector.parameters()
        if self.base is None:
            ps += [self.update_w, self.update_b, self.gamma, self.beta]
        return ps

    def _fixed_weights(self, batch: int) -> np.ndarray:
        w = 1.0 / self.n_options if self.aggregate == "avg" else 1.0
        return np.full((batch, self.n_options), w)

    def forward(self, tape: Tape, x: Node, rng: np.random.Generator, hard: bool = True) -> Node:
        """Training-mode forward: every branch is evaluated so the router gets gradients."""
        batch = x.shape[0]
        if self.aggregate == "select":
            v = self.selector.route(tape, x, rng, hard=hard)
            self.last_choice = v.value.argmax(axis=1)
        else:
            v = Node(self._fixed_weights(batch))
        ys = []
        for i, cand in enumerate(self.candidates):
            if cand is None:
                ys.append(Node(np.zeros(x.shape)))
            else:
                ys.append(cand.forward(tape, x))
                self.branch_evals[i] += batch
        if self.n_options == 1 and self.aggregate == "sum":
            z = ys[0]
        else:
            z = tape.weighted_sum(v, *ys)
        if self.base is not None:
            z = tape.add(self.base.candidates[0].forward(tape, x), z)
        z = tape.affine(z, self.update_w, self.update_b)
        if self.residual:
            z = tape.add(x, z)
        return tape.layer_norm(z, self.gamma, self.beta, eps=LN_EPS)

    def infer(self, x: np.ndarray) -> np.ndarray:
        """Inference forward: routed samples evaluate only their chosen branch."""
        batch = len(x)
        if self.aggregate == "select":
            choice = self.selector.logits_value(x).argmax(axis=1)
            self.last_choice = choice
            z = np.zeros(x.shape)
            for i in np.unique(choice):
                cand = self.candidates[i]
                if cand is None:
                    continue
                idx = np.flatnonzero(choice == i)
                z[idx] = cand.value(x[idx])
                self.branch_evals[i] += len(idx)
        else:
            w = self._fixed_weights(batch)
            ys = [np.zeros(x.shape) if c is None else c.value(x) for c in self.candidates]
            for i, c in enumerate(self.candidates):
                if c is not None:
                    self.branch_evals[i] += batch
            if self.n_options == 1 and self.aggregate == "sum":
                z = ys[0]
            else:
                z = np.zeros(x.shape)
                for i, y in enumerate(ys):
                    z += w[:, i][:, None, None, None] * y
        if self.base is not None:
            z = self.base.candidates[0].value(x) + z
        z = affine_value(z, self.update_w.value, self.update_b.value)
        if self.residual:
            z = x + z
        return layer_norm_value(z, self.gamma.value, self.beta.value, LN_EPS)[0]


class GCNext:
    """Layer stack with the replicate-pad / global-residual prediction head.

    The history is padded to ``t_hist + t_fut`` frames by repeating the last
    observed pose, expressed relative to that pose and divided by
    ``coord_scale``. The last ``t_fut`` output frames, rescaled and shifted
    back by the last pose, are the prediction.
    """

    def __init__(self, layers: list[Layer], t_hist: int, t_fut: int, joints: int, channels: int,
                 mode: str = "scratch", base: "GCNext | None" = None, config: RunConfig | None = None):
        self.layers = layers
        self.t_hist, self.t_fut = t_hist, t_fut
        self.joints, self.channels = joints, channels
        self.mode = mode
        self.base = base
        self.config = config
        self.coord_scale = Parameter(np.array(1.0), "coord_scale", trainable=False)
        if base is not None:
            self.coord_scale = base.coord_scale
        sel = np.zeros((self.T, t_fut))
        sel[t_hist + np.arange(t_fut), np.arange(t_fut)] = 1.0
        self._take_future = sel

    @property
    def T(self) -> int:
        return self.t_hist + self.t_fut

    @property
    def dims(self):
        return (self.T, self.joints, self.channels)

    def parameters(self) -> list[Parameter]:
        ps = [self.coord_scale]
        if self.base is not None:
            ps += [p for p in self.base.parameters() if p is not self.coord_scale]
        for layer in self.layers:
            ps += layer.own_parameters()
        return ps

    def named_parameters(self) -> dict[str, Parameter]:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ValueError(f"duplicate parameter name {p.name}")
            named[p.name] = p
        return named

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def reset_counters(self):
        for layer in self.layers:
            layer.branch_evals[:] = 0

    def branch_evaluations(self) -> int:
        return int(sum(layer.branch_evals.sum() for layer in self.layers))

    def _prepare(self, history) -> tuple[np.ndarray, np.ndarray]:
        history = np.asarray(history, dtype=np.float64)
        expected = (self.t_hist, self.joints, self.channels)
        if history.ndim != 4 or history.shape[1:] != expected:
            raise ShapeError(f"history must be (batch, {expected}), got {history.shape}")
        last = history[:, -1:]
        padded = np.concatenate([history, np.repeat(last, self.t_fut, axis=1)], axis=1)
        return (padded - last) / self.coord_scale.value, last

    def forward(self, tape: Tape, history, rng: np.random.Generator, hard: bool = True) -> Node:
        x, last = self._prepare(history)
        h = Node(x)
        for layer in self.layers:
            h = layer.forward(tape, h, rng, hard=hard)
        future = tape.contract(h, self._take_future, subscripts="btjc,tf->bfjc")
        scaled = tape.scale(future, alpha=float(self.coord_scale.value))
        return tape.add(scaled, np.repeat(last, self.t_fut, axis=1))

    def predict(self, history, return_routes: bool = False, chunk: int = 512):
        history = np.asarray(history, dtype=np.float64)
        single = history.ndim == 3
        if single:
            history = history[None]
        preds, routes = [], []
        for start in range(0, max(len(history), 1), chunk):
            x, last = self._prepare(history[start: start + chunk])
            choices = []
            for layer in self.layers:
                x = layer.infer(x)
                choices.append(layer.last_choice if layer.aggregate == "select"
                               else np.zeros(len(x), dtype=np.int64))
            preds.append(x[:, self.t_hist:] * self.coord_scale.value + last)
            routes.append(np.stack(choices, axis=1) if choices else np.zeros((len(x), 0), np.int64))
        pred = np.concatenate(preds)
        route = np.concatenate(routes)
        if single:
            pred, route = pred[0], route[0]
        return (pred, route) if return_routes else pred


def _layer_frame(cfg: RunConfig):
    return (cfg.joints, cfg.channels)


def build_gcnext(cfg: RunConfig, rng: np.random.Generator) -> GCNext:
    layers = []
    for l in range(cfg.layers):
        name = f"layer{l}"
        cands = [GraphConv(make_spec(k, cfg.dims, cfg.tied), f"{name}.cand{i}.{k}", rng)
                 for i, k in enumerate(cfg.options)]
        sel = Selector(cfg.dims, len(cands), cfg.hidden, cfg.pooling, f"{name}.sel", rng, cfg.tau)
        layers.append(Layer(cands, name, cfg.channels, _layer_frame(cfg), selector=sel,
                            residual=cfg.residual))
    return GCNext(layers, cfg.t_hist, cfg.t_fut, cfg.joints, cfg.channels, config=cfg)


def build_static(kind: str, cfg: RunConfig, rng: np.random.Generator) -> GCNext:
    """Ablation baselines: a single-kind static stack, or ``all-avg`` / ``all-sum`` over the option set."""
    layers = []
    for l in range(cfg.layers):
        name = f"layer{l}"
        if kind in ("all-avg", "all-sum"):
            cands = [GraphConv(make_spec(k, cfg.dims, cfg.tied), f"{name}.cand{i}.{k}", rng)
                     for i, k in enumerate(cfg.options)]
            aggregate = kind[4:]
        else:
            cands = [GraphConv(make_spec(kind, cfg.dims, cfg.static_tied), f"{name}.conv.{kind}", rng)]
            aggregate = "sum"
        layers.append(Layer(cands, name, cfg.channels, _layer_frame(cfg), aggregate=aggregate,
                            residual=cfg.residual))
    return GCNext(layers, cfg.t_hist, cfg.t_fut, cfg.joints, cfg.channels, mode="static", config=cfg)


def null_index(base_kind: str, options) -> tuple[list[str | None], int]:
    """Option list for refinement with the base kind's slot turned into the null branch.

    When the base kind is not among the options the null branch is prepended.
    """
    options = list(options)
    if base_kind in options:
        tau = options.index(base_kind)
    else:
        options.insert(0, base_kind)
        tau = 0
    return [None if i == tau else k for i, k in enumerate(options)], tau


def build_refine(base: GCNext, cfg: RunConfig, rng: np.random.Generator) -> GCNext:
    """Wrap a static GCN: new branches start at exact zeros, so outputs initially match the base."""
    if base.mode != "static" or any(len(layer.candidates) != 1 for layer in base.layers):
        raise ValueError("refinement needs a single-kind static base GCN")
    if cfg.freeze_base:
        for p in base.parameters():
            p.freeze()
    layers = []
    for l, base_layer in enumerate(base.layers):
        name = f"refine{l}"
        kinds, tau = null_index(base_layer.candidates[0].spec.kind, cfg.options)
        cands = [None if k is None else GraphConv(make_spec(k, cfg.dims, cfg.tied), f"{name}.cand{i}.{k}")
                 for i, k in enumerate(kinds)]
        sel = Selector(cfg.dims, len(cands), cfg.hidden, cfg.pooling, f"{name}.sel", rng, cfg.tau)
        layer = Layer(cands, name, cfg.channels, _layer_frame(cfg), selector=sel, base=base_layer)
        layer.null_index = tau
        layers.append(layer)
    return GCNext(layers, base.t_hist, base.t_fut, base.joints, base.channels,
                  mode="refine", base=base, config=cfg)


def build_model(cfg: RunConfig, rng: np.random.Generator, refine: bool = False) -> GCNext:
    if refine:
        return build_refine(build_static(cfg.static_kind, cfg, rng), cfg, rng)
    if cfg.model == "gcnext":
        return build_gcnext(cfg, rng)
    if cfg.model == "static":
        return build_static(cfg.static_kind, cfg, rng)
    return build_static(cfg.model, cfg, rng)


def zero_branches(model: GCNext):
    """Set every adjacency and update to zero (the residual-only configuration)."""
    for layer in model.layers:
        for c in layer.candidates:
            if c is not None:
                c.adj.value[...] = 0.0
        if layer.base is None:
            layer.update_w.value[...] = 0.0
            layer.update_b.value[...] = 0.0
