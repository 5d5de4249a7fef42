"""Universal graph convolution over (time, joint, channel) node graphs.

A sample X of shape (T, J, C) is a graph of T*J*C nodes. The general
operator applies a full (T, J, C, T, J, C) adjacency. Each specialization
declares some axes *diagonal*: node pairs that disagree on a diagonal axis
are masked out, so the adjacency collapses into d independent g x g blocks
(d = product of diagonal extents, g = product of the remaining "graph" axis
extents). Tying shares one block across all d diagonal indices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, as_tensor, elemwise_mul, matmul, reshape

AXES = ("time", "space", "channel")

# kind code -> diagonal axes; the code names the axes that stay graph axes
KINDS: dict[str, frozenset[str]] = {
    "g": frozenset(),
    "st": frozenset({"channel"}),
    "sc": frozenset({"time"}),
    "tc": frozenset({"space"}),
    "s": frozenset({"time", "channel"}),
    "t": frozenset({"space", "channel"}),
    "c": frozenset({"time", "space"}),
}
KIND_ORDER = ("g", "st", "sc", "tc", "s", "t", "c")

DEFAULT_CAP = 256


class CapacityError(ValueError):
    """Dense 6D materialization requested above the configured cap."""


@dataclass(frozen=True)
class GraphConvSpec:
    diagonal: frozenset[str]
    tied: bool
    dims: tuple[int, int, int]

    def __post_init__(self):
        diag = frozenset(self.diagonal)
        object.__setattr__(self, "diagonal", diag)
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if not diag <= set(AXES):
            raise ValueError(f"unknown axes {sorted(diag - set(AXES))}")
        if diag == set(AXES):
            raise ValueError("at least one graph axis is required")
        if self.tied and not diag:
            raise ValueError("the general case has nothing to tie")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive extents, got {self.dims}")

    @property
    def kind(self) -> str:
        for code, diag in KINDS.items():
            if diag == self.diagonal:
                return code
        raise AssertionError(self.diagonal)

    @property
    def name(self) -> str:
        code = self.kind
        base = "G" if code == "g" else f"G^{code}"
        return base + ("*" if self.tied else "")

    @property
    def diag_axes(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(AXES) if a in self.diagonal)

    @property
    def graph_axes(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(AXES) if a not in self.diagonal)

    @property
    def d(self) -> int:
        return math.prod(self.dims[i] for i in self.diag_axes)

    @property
    def g(self) -> int:
        return math.prod(self.dims[i] for i in self.graph_axes)

    @property
    def block_shape(self) -> tuple[int, ...]:
        return (self.g, self.g) if self.tied else (self.d, self.g, self.g)


def make_spec(kind: str, dims, tied: bool = False) -> GraphConvSpec:
    if kind not in KINDS:
        raise ValueError(f"unknown graph convolution kind {kind!r}; expected one of {KIND_ORDER}")
    return GraphConvSpec(KINDS[kind], tied and kind != "g", tuple(dims))


def seven_kinds(dims, tied: bool = False) -> list[GraphConvSpec]:
    """All seven specializations in the order G, st, sc, tc, s, t, c."""
    return [make_spec(k, dims, tied) for k in KIND_ORDER]


def param_count(spec: GraphConvSpec) -> int:
    return math.prod(spec.block_shape)


@dataclass
class AdjacencyStore:
    spec: GraphConvSpec
    blocks: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.blocks = as_tensor(self.blocks)
        if self.blocks.shape != self.spec.block_shape:
            raise ShapeError(f"blocks {self.blocks.shape} do not match {self.spec.block_shape}")

    @classmethod
    def zeros(cls, spec: GraphConvSpec) -> "AdjacencyStore":
        return cls(spec, np.zeros(spec.block_shape))

    @classmethod
    def random(cls, spec: GraphConvSpec, rng: np.random.Generator, scale: float | None = None):
        s = 1.0 / math.sqrt(spec.g) if scale is None else scale
        return cls(spec, rng.uniform(-s, s, size=spec.block_shape))

    def stacked(self) -> np.ndarray:
        """Blocks as (d, g, g); a tied store repeats its one block as a read-only view."""
        if self.spec.tied:
            return np.broadcast_to(self.blocks, (self.spec.d, self.spec.g, self.spec.g))
        return self.blocks


def _check_cap(dims, cap: int):
    n = math.prod(dims)
    if n > cap:
        raise CapacityError(f"T*J*C = {n} exceeds the dense materialization cap {cap}")


def build_mask(spec: GraphConvSpec, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Boolean (T, J, C, T, J, C) mask: 1 iff the pair agrees on every diagonal axis."""
    _check_cap(spec.dims, cap)
    mask = np.ones(spec.dims + spec.dims, dtype=bool)
    for ax in spec.diag_axes:
        n = spec.dims[ax]
        shape = [1] * 6
        shape[ax] = shape[ax + 3] = n
        mask &= np.eye(n, dtype=bool).reshape(shape)
    return mask


def _check_sample(x: np.ndarray, dims):
    if x.shape[-3:] != tuple(dims):
        raise ShapeError(f"sample shape {x.shape} does not end with {tuple(dims)}")


def unigc_general(x, a) -> np.ndarray:
    """Y = R_{T,J,C}(R_{TJC,TJC}(A) @ R_{TJC}(X)) for one (T, J, C) sample."""
    x, a = as_tensor(x), as_tensor(a)
    if x.ndim != 3 or a.shape != x.shape + x.shape:
        raise ShapeError(f"adjacency {a.shape} incompatible with sample {x.shape}")
    n = x.size
    y = matmul(reshape(a, (n, n)), reshape(x, (n, 1)))
    return reshape(y, x.shape)


def unigc_masked(x, a, m) -> np.ndarray:
    a = as_tensor(a)
    return unigc_general(x, elemwise_mul(a, np.asarray(m, dtype=np.float64)))


def _perm(spec: GraphConvSpec, lead: int) -> tuple[list[int], list[int]]:
    order = [lead + i for i in spec.diag_axes + spec.graph_axes]
    perm = list(range(lead)) + order
    return perm, list(np.argsort(perm))


def to_blocks(x: np.ndarray, spec: GraphConvSpec) -> np.ndarray:
    """(..., T, J, C) -> (..., d, g) with diagonal axes leading."""
    lead = x.ndim - 3
    perm, _ = _perm(spec, lead)
    return np.ascontiguousarray(x.transpose(perm)).reshape(x.shape[:lead] + (spec.d, spec.g))


def from_blocks(xb: np.ndarray, spec: GraphConvSpec) -> np.ndarray:
    lead = xb.ndim - 2
    dims = spec.dims
    shaped = xb.reshape(xb.shape[:lead] + tuple(dims[i] for i in spec.diag_axes + spec.graph_axes))
    _, inv = _perm(spec, lead)
    return np.ascontiguousarray(shaped.transpose(inv))


def apply_blocks(blocks: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Per-diagonal-index matrix product: (d, g, g) with (..., d, g) -> (..., d, g)."""
    lead = xb.shape[:-2]
    d, g = xb.shape[-2:]
    cols = xb.reshape(-1, d, g).transpose(1, 2, 0)  # (d, g, batch)
    out = np.matmul(blocks, cols)
    return np.ascontiguousarray(out.transpose(2, 0, 1)).reshape(lead + (d, g))


def conv_factored(x, store: AdjacencyStore) -> np.ndarray:
    """Masked graph convolution evaluated block by block.

    Accepts a single (T, J, C) sample or a batch (..., T, J, C). The 6D
    adjacency is never materialized.
    """
    x = as_tensor(x)
    spec = store.spec
    _check_sample(x, spec.dims)
    return from_blocks(apply_blocks(store.stacked(), to_blocks(x, spec)), spec)


def expand_to_global(store: AdjacencyStore, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Scatter factored blocks into the full (T, J, C, T, J, C) adjacency."""
    spec = store.spec
    _check_cap(spec.dims, cap)
    d, g = spec.d, spec.g
    full = np.zeros((d, g, d, g))
    stacked = store.stacked()
    for i in range(d):
        full[i, :, i, :] = stacked[i]
    order = spec.diag_axes + spec.graph_axes
    permuted = tuple(spec.dims[i] for i in order)
    full = full.reshape(permuted + permuted)
    inv = list(np.argsort(order))
    return np.ascontiguousarray(full.transpose(inv + [3 + i for i in inv]))


def blocks_from_global(a, spec: GraphConvSpec) -> np.ndarray:
    """Read the diagonal blocks back out of a dense adjacency (inverse of expand_to_global)."""
    a = as_tensor(a)
    if a.shape != spec.dims + spec.dims:
        raise ShapeError(f"adjacency {a.shape} does not match dims {spec.dims}")
    order = spec.diag_axes + spec.graph_axes
    d, g = spec.d, spec.g
    full = a.transpose(list(order) + [3 + i for i in order]).reshape(d, g, d, g)
    blocks = np.stack([full[i, :, i, :] for i in range(d)])
    return blocks[0].copy() if spec.tied else blocks
