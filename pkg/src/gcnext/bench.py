"""Analytic parameter and FLOP accounting.

Convention: a multiply-add counts as 2 FLOPs, forward pass only (backward
is not counted). Costs are per sample.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import GCNext, Layer
from .unigc import GraphConvSpec, param_count

# mean, centering, variance, normalize, scale+shift
LN_FLOPS_PER_ELEMENT = 7

HEADER = "# FLOPs: multiply-add = 2, forward pass only, per sample"


def flops_conv(spec: GraphConvSpec) -> int:
    """2 * d * g^2 for the factored form; the general case is d = 1, g = TJC."""
    return 2 * spec.d * spec.g * spec.g


def selector_flops(layer: Layer) -> int:
    sel = layer.selector
    if sel is None:
        return 0
    T, J, C = layer_dims(layer)
    hidden, features = sel.w1.value.shape
    n = sel.w2.value.shape[0]
    pooling = T * J * C
    return pooling + 2 * features * hidden + 2 * hidden + 2 * hidden * n + n


def layer_dims(layer: Layer):
    for c in layer.candidates:
        if c is not None:
            return c.spec.dims
    return layer.base.candidates[0].spec.dims


@dataclass
class LayerCost:
    layer: int
    options: str
    params: int
    train_flops: int
    infer_flops: int
    peak_train: int
    peak_infer: int


@dataclass
class CostReport:
    rows: list[LayerCost] = field(default_factory=list)
    head_flops: int = 0

    def total(self, column: str) -> int:
        return sum(getattr(r, column) for r in self.rows)

    @property
    def params(self) -> int:
        return self.total("params")

    @property
    def train_flops(self) -> int:
        return self.total("train_flops") + self.head_flops

    @property
    def infer_flops(self) -> int:
        return self.total("infer_flops") + self.head_flops

    def flops(self, mode: str) -> int:
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be train or infer, got {mode!r}")
        return self.train_flops if mode == "train" else self.infer_flops


def layer_cost(index: int, layer: Layer, policy: np.ndarray | None = None) -> LayerCost:
    T, J, C = layer_dims(layer)
    n_el = T * J * C
    specs = [c.spec if c is not None else None for c in layer.candidates]
    branch = [0 if s is None else flops_conv(s) for s in specs]
    params = sum(param_count(s) for s in specs if s is not None)
    if layer.selector is not None:
        params += sum(p.value.size for p in layer.selector.parameters())
    base = 0
    if layer.base is not None:
        base = flops_conv(layer.base.candidates[0].spec)
    else:
        params += C * C + C + 2 * J * C
    tail = 2 * n_el * C + n_el + (n_el if layer.residual else 0) + LN_FLOPS_PER_ELEMENT * n_el
    sel = selector_flops(layer)
    n = len(branch)
    aggregate = 0 if (n == 1 and layer.aggregate == "sum") else 2 * n * n_el
    train = sum(branch) + sel + aggregate + base + tail + (n_el if layer.base is not None else 0)
    if layer.aggregate == "select":
        if policy is None:
            one = max(branch)
        else:
            one = int(round(float(np.dot(policy[: n], branch))))
        infer = one + sel + base + tail + (n_el if layer.base is not None else 0)
        peak_infer = 2 * n_el
    else:
        infer = train
        peak_infer = (n + 1) * n_el
    names = ",".join("null" if s is None else s.name for s in specs)
    return LayerCost(index, names, params, train, infer, (n + 2) * n_el, peak_infer)


def cost_model(model: GCNext, policy: np.ndarray | None = None) -> CostReport:
    """Per-layer and total costs.

    Training forward evaluates every candidate (the router needs all branch
    outputs); inference evaluates one branch per layer. Without a ``policy``
    table the inference branch is the most expensive candidate.
    """
    rows = [layer_cost(l, layer, None if policy is None else policy[l])
            for l, layer in enumerate(model.layers)]
    T, J, C = model.dims
    head = 2 * T * J * C + 2 * model.t_fut * J * C
    return CostReport(rows, head)


def format_report(report: CostReport) -> str:
    cols = ["layer", "kind_options", "params", "train_flops", "infer_flops"]
    body = [[str(r.layer), r.options, str(r.params), str(r.train_flops), str(r.infer_flops)]
            for r in report.rows]
    body.append(["total", "", str(report.params), str(report.total("train_flops")),
                 str(report.total("infer_flops"))])
    widths = [max(len(c), *(len(row[i]) for row in body)) for i, c in enumerate(cols)]
    lines = [HEADER, f"# head bookkeeping: {report.head_flops} FLOPs (not in the layer total)"]
    lines.append("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for row in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def report_csv(report: CostReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "kind_options", "params", "train_flops", "infer_flops"])
    for r in report.rows:
        writer.writerow([r.layer, r.options, r.params, r.train_flops, r.infer_flops])
    writer.writerow(["total", "", report.params, report.total("train_flops"), report.total("infer_flops")])
    return buf.getvalue()


def emit_report(report: CostReport, path) -> str:
    """Write the CSV to ``path``; return the aligned text table."""
    Path(path).write_text(report_csv(report))
    return format_report(report)
