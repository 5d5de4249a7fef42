import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcnext.tensor import ShapeError
from gcnext.unigc import (
    AdjacencyStore,
    CapacityError,
    GraphConvSpec,
    blocks_from_global,
    build_mask,
    conv_factored,
    expand_to_global,
    make_spec,
    param_count,
    seven_kinds,
    unigc_general,
    unigc_masked,
)
from gcnext.verify import six_loop_oracle

DIMS = (4, 5, 3)


def test_mask_counts():
    dims = (2, 1, 2)
    m_sc = build_mask(make_spec("sc", dims))
    m_st = build_mask(make_spec("st", dims))
    m_s = build_mask(make_spec("s", dims))
    assert m_sc.sum() == 8
    assert m_st.sum() == 8
    assert m_s.sum() == 4
    assert np.array_equal(m_s, m_sc & m_st)


def test_mask_rule_entrywise():
    dims = (2, 3, 2)
    m = build_mask(make_spec("tc", dims))  # diagonal in space
    for idx in np.ndindex(m.shape):
        t1, j1, c1, t2, j2, c2 = idx
        assert m[idx] == (j1 == j2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_mask_conjunction(T, J, C):
    dims = (T, J, C)
    mask = lambda k: build_mask(make_spec(k, dims))
    assert np.array_equal(mask("s"), mask("sc") & mask("st"))
    assert np.array_equal(mask("t"), mask("tc") & mask("st"))
    assert np.array_equal(mask("c"), mask("sc") & mask("tc"))


def test_mask_cap():
    with pytest.raises(CapacityError):
        build_mask(make_spec("sc", (10, 22, 3)))


def test_general_examples(rng):
    y = unigc_general(np.array([[[3.0]]]), np.array([[[[[[2.0]]]]]]))
    assert y.shape == (1, 1, 1) and y[0, 0, 0] == 6.0
    x = rng.normal(size=(2, 3, 2))
    eye6 = np.eye(12).reshape(2, 3, 2, 2, 3, 2)
    assert np.array_equal(unigc_general(x, eye6), x)


def test_general_matches_six_loop_oracle(rng):
    dims = (3, 4, 2)
    a = rng.normal(size=dims + dims)
    x = rng.normal(size=dims)
    assert np.abs(unigc_general(x, a) - six_loop_oracle(x, a)).max() < 1e-12


def test_general_shape_errors(rng):
    with pytest.raises(ShapeError):
        unigc_general(rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2, 2, 2, 2, 3)))


def test_masked_trivial_masks(rng):
    dims = (2, 3, 2)
    a, x = rng.normal(size=dims + dims), rng.normal(size=dims)
    assert np.array_equal(unigc_masked(x, a, np.ones(a.shape, bool)), unigc_general(x, a))
    assert not unigc_masked(x, a, np.zeros(a.shape, bool)).any()


def test_masked_frame_locality(rng):
    dims = (2, 3, 2)
    spec = make_spec("sc", dims)
    a = rng.normal(size=dims + dims)
    m = build_mask(spec)
    x = rng.normal(size=dims)
    x2 = x.copy()
    x2[0] += rng.normal(size=x2[0].shape)
    y, y2 = unigc_masked(x, a, m), unigc_masked(x2, a, m)
    assert np.array_equal(y[1], y2[1])
    assert not np.array_equal(y[0], y2[0])


def test_tied_identity_is_identity(rng):
    spec = make_spec("sc", DIMS, tied=True)
    store = AdjacencyStore(spec, np.eye(spec.g))
    x = rng.normal(size=DIMS)
    assert np.array_equal(conv_factored(x, store), x)


def test_tied_columns_follow_shared_block(rng):
    dims = (2, 3, 2)
    spec = make_spec("sc", dims, tied=True)
    store = AdjacencyStore.random(spec, rng)
    x = rng.normal(size=dims)
    y = conv_factored(x, store)
    for t in range(2):
        expected = store.blocks @ x[t].reshape(-1)
        assert np.abs(y[t].reshape(-1) - expected).max() < 1e-12


@pytest.mark.parametrize("tied", [False, True])
@pytest.mark.parametrize("kind", ["g", "st", "sc", "tc", "s", "t", "c"])
def test_factored_matches_dense(kind, tied, rng):
    spec = make_spec(kind, DIMS, tied)
    store = AdjacencyStore.random(spec, rng, scale=1.0)
    x = rng.normal(size=DIMS)
    dense = unigc_masked(x, expand_to_global(store), build_mask(spec))
    assert np.abs(conv_factored(x, store) - dense).max() < 1e-9


def test_factored_batched_matches_single(rng):
    spec = make_spec("st", DIMS)
    store = AdjacencyStore.random(spec, rng)
    xb = rng.normal(size=(6,) + DIMS)
    yb = conv_factored(xb, store)
    for i in range(6):
        assert np.abs(yb[i] - conv_factored(xb[i], store)).max() < 1e-12


def test_expand_tied_is_block_diagonal(rng):
    dims = (3, 2, 2)
    spec = make_spec("sc", dims, tied=True)
    store = AdjacencyStore.random(spec, rng)
    mat = expand_to_global(store).reshape(12, 12)
    for t1 in range(3):
        for t2 in range(3):
            blk = mat[t1 * 4:(t1 + 1) * 4, t2 * 4:(t2 + 1) * 4]
            if t1 == t2:
                assert np.array_equal(blk, store.blocks)
            else:
                assert not blk.any()


def test_expand_untied_blocks_differ(rng):
    dims = (3, 2, 2)
    store = AdjacencyStore.random(make_spec("sc", dims), rng)
    mat = expand_to_global(store).reshape(12, 12)
    diag = [mat[t * 4:(t + 1) * 4, t * 4:(t + 1) * 4] for t in range(3)]
    assert not np.array_equal(diag[0], diag[1])
    assert np.array_equal(diag[2], store.blocks[2])


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["g", "st", "sc", "tc", "s", "t", "c"]), st.booleans(),
       st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10**6))
def test_expand_round_trip(kind, tied, T, J, C, seed):
    spec = make_spec(kind, (T, J, C), tied)
    store = AdjacencyStore.random(spec, np.random.default_rng(seed))
    assert np.array_equal(blocks_from_global(expand_to_global(store), spec), store.blocks)


@pytest.mark.parametrize("kind", ["st", "sc", "tc", "s", "t", "c"])
def test_tying_equivalence_bit_exact(kind, rng):
    tied = AdjacencyStore.random(make_spec(kind, DIMS, True), rng)
    untied = AdjacencyStore(make_spec(kind, DIMS, False), np.array(tied.stacked()))
    x = rng.normal(size=(4,) + DIMS)
    assert np.array_equal(conv_factored(x, tied), conv_factored(x, untied))


@pytest.mark.parametrize("kind", ["st", "sc", "tc", "s", "t", "c"])
def test_locality_on_diagonal_axis(kind, rng):
    spec = make_spec(kind, DIMS)
    store = AdjacencyStore.random(spec, rng)
    x = rng.normal(size=DIMS)
    ax = spec.diag_axes[0]
    x2 = x.copy()
    idx = [slice(None)] * 3
    idx[ax] = 1
    x2[tuple(idx)] += 1.0
    diff = np.abs(conv_factored(x2, store) - conv_factored(x, store))
    moved = np.moveaxis(diff, ax, 0)
    assert not np.delete(moved, 1, axis=0).any()
    assert moved[1].any()


@pytest.mark.parametrize("kind", ["g", "st", "sc", "tc", "s", "t", "c"])
def test_linearity(kind, rng):
    store = AdjacencyStore.random(make_spec(kind, DIMS), rng)
    x1, x2 = rng.normal(size=DIMS), rng.normal(size=DIMS)
    lhs = conv_factored(2.5 * x1 - 0.75 * x2, store)
    rhs = 2.5 * conv_factored(x1, store) - 0.75 * conv_factored(x2, store)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_param_count_examples():
    dims = (10, 22, 3)
    assert param_count(make_spec("g", dims)) == 435600
    assert param_count(make_spec("sc", dims, tied=True)) == 4356
    assert param_count(make_spec("st", dims, tied=True)) == 48400


@pytest.mark.parametrize("kind", ["st", "sc", "tc", "s", "t", "c"])
def test_param_count_tied_vs_untied(kind):
    dims = (4, 5, 3)
    tied, untied = make_spec(kind, dims, True), make_spec(kind, dims, False)
    assert param_count(untied) == tied.d * param_count(tied)


def test_seven_kinds():
    kinds = seven_kinds(DIMS)
    assert len(kinds) == 7
    assert [k.name for k in kinds] == ["G", "G^st", "G^sc", "G^tc", "G^s", "G^t", "G^c"]
    by_name = {k.name: k for k in kinds}
    assert by_name["G^s"].diagonal == {"time", "channel"}
    assert by_name["G^tc"].diagonal == {"space"}
    assert by_name["G^sc"].diagonal == {"time"}
    assert by_name["G^st"].diagonal == {"channel"}


def test_spec_validation():
    with pytest.raises(ValueError):
        GraphConvSpec(frozenset({"time", "space", "channel"}), False, DIMS)
    with pytest.raises(ValueError):
        GraphConvSpec(frozenset(), True, DIMS)
    with pytest.raises(ValueError):
        make_spec("xyz", DIMS)
