"""Self-check suites behind ``ugc verify``.

The dense reference here is a plain six-deep Python loop, deliberately
independent of the matmul/einsum code paths it checks.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import OPS, Node, Parameter, finite_diff_check
from .config import RunConfig
from .model import build_gcnext, build_refine, build_static
from .unigc import (
    AdjacencyStore,
    build_mask,
    conv_factored,
    expand_to_global,
    make_spec,
    seven_kinds,
    unigc_masked,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool = True
    lines: list[str] = field(default_factory=list)
    failure: str | None = None
    seconds: float = 0.0

    def fail(self, message: str):
        if self.passed:
            self.failure = message
        self.passed = False


def six_loop_oracle(x, a) -> np.ndarray:
    """Y[t,j,c] = sum over (t2,j2,c2) of A[t,j,c,t2,j2,c2] * X[t2,j2,c2]."""
    T, J, C = x.shape
    xl = x.tolist()
    al = a.tolist()
    y = [[[0.0] * C for _ in range(J)] for _ in range(T)]
    for t1 in range(T):
        for j1 in range(J):
            for c1 in range(C):
                row = al[t1][j1][c1]
                acc = 0.0
                for t2 in range(T):
                    for j2 in range(J):
                        for c2 in range(C):
                            acc += row[t2][j2][c2] * xl[t2][j2][c2]
                y[t1][j1][c1] = acc
    return np.array(y)


def small_dims(max_nodes: int = 60):
    for T, J, C in itertools.product(range(1, max_nodes + 1), repeat=3):
        if T * J * C <= max_nodes:
            yield (T, J, C)


# pairs (product kind, factor kind, factor kind): M^s = M^sc * M^st etc.
CONJUNCTIONS = (("s", "sc", "st"), ("t", "tc", "st"), ("c", "sc", "tc"))


def suite_mask_algebra(mask_fn: Callable = build_mask, max_nodes: int = 60) -> SuiteResult:
    res = SuiteResult("mask-algebra")
    checked = 0
    for dims in small_dims(max_nodes):
        for prod, f1, f2 in CONJUNCTIONS:
            m = mask_fn(make_spec(prod, dims))
            expected = mask_fn(make_spec(f1, dims)) & mask_fn(make_spec(f2, dims))
            checked += 1
            if not np.array_equal(m, expected):
                res.fail(f"M^{prod} != M^{f1} * M^{f2} at dims {dims}")
        T, J, C = dims
        counts = {"sc": T * (J * C) ** 2, "st": C * (T * J) ** 2, "s": T * C * J * J}
        for kind, n in counts.items():
            got = int(mask_fn(make_spec(kind, dims)).sum())
            if got != n:
                res.fail(f"M^{kind} at {dims} has {got} ones, expected {n}")
    res.lines.append(f"{checked} conjunction identities over all dims with TJC <= {max_nodes}")
    return res


def suite_equivalence(dims=(4, 5, 3), seeds: int = 20, mask_fn: Callable = build_mask) -> SuiteResult:
    res = SuiteResult("factored-vs-dense")
    for tied in (False, True):
        for spec in seven_kinds(dims, tied):
            worst_fd = worst_oracle = 0.0
            for seed in range(seeds):
                rng = np.random.default_rng([seed, 7])
                store = AdjacencyStore.random(spec, rng, scale=1.0)
                x = rng.normal(size=dims)
                dense_a = expand_to_global(store)
                masked = unigc_masked(x, dense_a, mask_fn(spec))
                worst_fd = max(worst_fd, float(np.abs(conv_factored(x, store) - masked).max()))
                oracle = six_loop_oracle(x, dense_a * mask_fn(spec))
                worst_oracle = max(worst_oracle, float(np.abs(masked - oracle).max()))
            ok = worst_fd < 1e-9 and worst_oracle < 1e-12
            res.lines.append(f"{spec.name:7s} tied={str(tied):5s} factored-dense {worst_fd:.2e} "
                             f"dense-oracle {worst_oracle:.2e} {'ok' if ok else 'FAIL'}")
            if not ok:
                res.fail(f"{spec.name} tied={tied} dims={dims}: {worst_fd:.3e} / {worst_oracle:.3e}")
    return res


def suite_tying(dims=(4, 5, 3), seeds: int = 5) -> SuiteResult:
    res = SuiteResult("tying")
    for spec in seven_kinds(dims, tied=True)[1:]:
        for seed in range(seeds):
            rng = np.random.default_rng([seed, 11])
            tied = AdjacencyStore.random(spec, rng)
            untied = AdjacencyStore(make_spec(spec.kind, dims, False), np.array(tied.stacked()))
            x = rng.normal(size=(3,) + dims)
            if not np.array_equal(conv_factored(x, tied), conv_factored(x, untied)):
                res.fail(f"{spec.name} tied/untied differ at seed {seed}")
        res.lines.append(f"{spec.name} tied == untied(equal blocks), bit-exact")
    return res


def toy_config(**changes) -> RunConfig:
    base = dict(t_hist=4, t_fut=2, joints=4, channels=3, layers=3, hidden=16)
    base.update(changes)
    return RunConfig(**base).validate()


def suite_zero_refine(n_inputs: int = 100) -> SuiteResult:
    res = SuiteResult("zero-init-refine")
    cfg = toy_config()
    rng = np.random.default_rng(3)
    base = build_static(cfg.static_kind, cfg, rng)
    for p in base.parameters():
        if p.name != "coord_scale":
            p.value += rng.normal(scale=0.1, size=p.value.shape)
    history = rng.normal(scale=100.0, size=(n_inputs, cfg.t_hist, cfg.joints, cfg.channels))
    before = base.predict(history)
    refined = build_refine(base, cfg, rng)
    after = refined.predict(history)
    if not np.array_equal(before, after):
        res.fail(f"refined output differs from base by {np.abs(before - after).max():.3e}")
    from .autodiff import Tape
    train_pred = refined.forward(Tape(), history, np.random.default_rng(0)).value
    if not np.array_equal(before, train_pred):
        res.fail("training-mode refined output differs from base")
    res.lines.append(f"{n_inputs} inputs bit-identical before any optimizer step")
    return res


def _projection_loss(tape, out: Node, rng_seed: int):
    r = np.random.default_rng(rng_seed).normal(size=out.shape)
    return tape.sum(tape.elemwise_mul(out, r))


def op_gradient_cases() -> dict[str, Callable[[], float]]:
    """One finite-difference check per registered op; each returns the max relative error."""

    def P(shape, name, seed, scale=1.0, offset=0.0):
        rng = np.random.default_rng([seed, len(name)])
        return Parameter(offset + scale * rng.normal(size=shape), name)

    def check(build, params):
        return finite_diff_check(lambda tape: _projection_loss(tape, build(tape), 99), params)

    cases = {}
    a, b = P((3, 4), "a", 1), P((3, 4), "b", 2)
    cases["add"] = lambda: check(lambda t: t.add(a, b), [a, b])
    cases["elemwise_mul"] = lambda: check(lambda t: t.elemwise_mul(a, b), [a, b])
    cases["scale"] = lambda: check(lambda t: t.scale(a, alpha=-2.5), [a])
    cases["reshape"] = lambda: check(lambda t: t.reshape(a, shape=(2, 6)), [a])
    m1, m2 = P((3, 4), "m1", 3), P((4, 5), "m2", 4)
    cases["matmul"] = lambda: check(lambda t: t.matmul(m1, m2), [m1, m2])
    c1, c2 = P((2, 3, 4), "c1", 5), P((4, 3, 5), "c2", 6)
    cases["contract"] = lambda: check(lambda t: t.contract(c1, c2, subscripts="ijk,kjl->il"), [c1, c2])
    cases["sum"] = lambda: finite_diff_check(lambda t: t.sum(t.elemwise_mul(a, a)), [a])
    cases["mean"] = lambda: check(lambda t: t.mean(c1, axes=(0, 2)), [c1])
    cases["relu"] = lambda: check(lambda t: t.relu(a), [a])
    x, w, bias = P((2, 3, 4), "x", 7), P((5, 4), "w", 8), P((5,), "bias", 9)
    cases["affine"] = lambda: check(lambda t: t.affine(x, w, bias), [x, w, bias])
    g, be = P((3, 4), "gamma", 10, 0.3, 1.0), P((3, 4), "beta", 11)
    cases["layer_norm"] = lambda: check(lambda t: t.layer_norm(x, g, be), [x, g, be])
    cases["softmax"] = lambda: check(lambda t: t.softmax(a), [a])
    logits = P((3, 4), "logits", 12)
    noise = np.random.default_rng(13).gumbel(size=(3, 4))
    cases["gumbel_softmax_st"] = lambda: check(
        lambda t: t.gumbel_softmax_st(logits, noise, tau=0.7, hard=False), [logits])
    v = P((2, 3), "v", 14)
    ys = [P((2, 3, 2), f"y{i}", 15 + i) for i in range(3)]
    cases["weighted_sum"] = lambda: check(lambda t: t.weighted_sum(v, *ys), [v, *ys])
    pred, target = P((2, 3, 3), "pred", 20), np.random.default_rng(21).normal(size=(2, 3, 3))
    cases["mse_loss"] = lambda: finite_diff_check(lambda t: t.mse_loss(pred, target), [pred])
    cases["mpjpe_loss"] = lambda: finite_diff_check(lambda t: t.mpjpe_loss(pred, target), [pred])

    dims = (3, 4, 2)
    xs = P((2,) + dims, "xs", 22)

    def conv_case(spec):
        adj = P(spec.block_shape, "adj", 23)
        return lambda: check(lambda t: t.graph_conv(xs, adj, spec=spec), [xs, adj])

    for tied in (False, True):
        for spec in seven_kinds(dims, tied):
            cases[f"graph_conv[{spec.name}]"] = conv_case(spec)
    return cases


def dynamic_layer_gradient(seed: int = 0) -> float:
    """Finite differences through a full soft-routed dynamic layer at (T, J, C) = (3, 4, 2)."""
    cfg = toy_config(t_hist=2, t_fut=1, joints=4, channels=2, layers=1, hidden=8)
    rng = np.random.default_rng(seed)
    model = build_gcnext(cfg, rng)
    layer = model.layers[0]
    layer.update_w.value[...] = rng.normal(size=layer.update_w.shape)
    layer.gamma.value[...] += rng.normal(scale=0.2, size=layer.gamma.shape)
    layer.beta.value[...] = rng.normal(scale=0.2, size=layer.beta.shape)
    x = Parameter(rng.normal(size=(2,) + cfg.dims), "x")

    def fn(tape):
        out = layer.forward(tape, x, np.random.default_rng(42), hard=False)
        return _projection_loss(tape, out, 5)

    return finite_diff_check(fn, [x] + layer.own_parameters())


def full_model_gradient(seed: int = 0) -> float:
    """Finite differences of the MPJPE loss through a 2-layer soft-routed model."""
    cfg = toy_config(t_hist=2, t_fut=1, joints=4, channels=3, layers=2, hidden=8)
    rng = np.random.default_rng(seed)
    model = build_gcnext(cfg, rng)
    hist = rng.normal(size=(2, cfg.t_hist, cfg.joints, cfg.channels))
    fut = rng.normal(size=(2, cfg.t_fut, cfg.joints, cfg.channels))

    def fn(tape):
        pred = model.forward(tape, hist, np.random.default_rng(42), hard=False)
        return tape.mpjpe_loss(pred, fut)

    return finite_diff_check(fn, model.trainable_parameters())


def suite_gradients(tol: float = 1e-5) -> SuiteResult:
    res = SuiteResult("gradient-check")
    cases = op_gradient_cases()
    missing = set(OPS) - {k.split("[")[0] for k in cases}
    if missing:
        res.fail(f"ops without a gradient check: {sorted(missing)}")
    cases["dynamic_layer(soft)"] = dynamic_layer_gradient
    cases["full_model(soft)"] = full_model_gradient
    for name, case in cases.items():
        err = case()
        res.lines.append(f"{name:24s} max rel err {err:.2e}")
        if not err < tol:
            res.fail(f"{name}: relative error {err:.3e} >= {tol}")
    return res


def run_all(mask_fn: Callable = build_mask) -> list[SuiteResult]:
    suites = [
        lambda: suite_mask_algebra(mask_fn),
        lambda: suite_equivalence(mask_fn=mask_fn),
        suite_tying,
        suite_zero_refine,
        suite_gradients,
    ]
    results = []
    for suite in suites:
        start = time.perf_counter()
        r = suite()
        r.seconds = time.perf_counter() - start
        results.append(r)
    return results
