"""Dense float64 array operators with strict shape checking.

Tensors are plain C-ordered ``numpy.ndarray`` objects of dtype float64.
None of the operators here broadcast: mismatched shapes raise
:class:`ShapeError`.
"""
from __future__ import annotations

import math
import re

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a if a.flags.c_contiguous else a.copy(order="C")


def reshape(x, new_shape) -> np.ndarray:
    """Reinterpret ``x`` under ``new_shape`` without reordering (row-major)."""
    x = as_tensor(x)
    new_shape = tuple(int(s) for s in new_shape)
    if math.prod(new_shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {new_shape}")
    return x.reshape(new_shape)


def elemwise_mul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elemwise_mul shape mismatch {a.shape} vs {b.shape}")
    return a * b


def matmul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimension mismatch {a.shape} @ {b.shape}")
    return a @ b


_SUBSCRIPTS = re.compile(r"^([a-zA-Z]*),([a-zA-Z]*)->([a-zA-Z]*)$")


def parse_subscripts(subscripts: str) -> tuple[str, str, str]:
    m = _SUBSCRIPTS.match(subscripts.replace(" ", ""))
    if m is None:
        raise ValueError(f"bad contraction subscripts {subscripts!r}")
    ia, ib, out = m.groups()
    for idx in (ia, ib, out):
        if len(set(idx)) != len(idx):
            raise ValueError(f"repeated index within one operand in {subscripts!r}")
    if not set(out) <= set(ia) | set(ib):
        raise ValueError(f"output index not present in inputs: {subscripts!r}")
    return ia, ib, out


def contract(a, b, subscripts: str) -> np.ndarray:
    """General two-operand contraction in Einstein notation.

    ``subscripts`` pairs axes by letter, e.g. ``"ij,jk->ik"`` is a matrix
    product and ``"abcdef,def->abc"`` applies a 6D adjacency to a
    (T, J, C) sample. Letters shared by both operands must have equal extents.
    """
    a, b = as_tensor(a), as_tensor(b)
    ia, ib, out = parse_subscripts(subscripts)
    if len(ia) != a.ndim or len(ib) != b.ndim:
        raise ShapeError(f"{subscripts!r} does not match ranks {a.ndim} and {b.ndim}")
    extents: dict[str, int] = {}
    for idx, shape in ((ia, a.shape), (ib, b.shape)):
        for letter, n in zip(idx, shape):
            if extents.setdefault(letter, n) != n:
                raise ShapeError(
                    f"paired axis {letter!r} has extents {extents[letter]} and {n}"
                )
    return np.ascontiguousarray(np.einsum(f"{ia},{ib}->{out}", a, b))


def allclose(a, b, atol: float) -> bool:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"allclose shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return True
    return bool(np.max(np.abs(a - b)) <= atol)
