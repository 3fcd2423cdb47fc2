import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbnmt import autodiff as ad
from dbnmt.autodiff import Graph, GraphError, ShapeError, backward, check_gradients, forward_eval

TOL = 1e-4


def rnd(rng, *shape, scale=1.0):
    return rng.standard_normal(shape) * scale


def projected(node, rng):
    """Scalar ``sum(node * R)`` with a fixed random R, so every output entry matters."""
    r = node.graph.const(rnd(rng, *node.shape))
    return (node * r).sum()


# -- trivial forward/backward examples


def test_sigmoid_of_zero_is_half():
    g = Graph()
    assert ad.sigmoid(g.input(0.0)).value == 0.5


def test_softmax_of_equal_entries_is_uniform():
    g = Graph()
    out = ad.softmax(g.input([2.5, 2.5, 2.5]))
    np.testing.assert_allclose(out.value, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_identity_matmul_returns_vector():
    g = Graph()
    v = np.array([[1.5], [-2.0], [0.25]])
    out = g.const(np.eye(3)) @ g.input(v)
    np.testing.assert_array_equal(out.value, v)


def test_gradient_of_sum_is_ones():
    g = Graph()
    x = g.input(np.arange(12.0).reshape(3, 4))
    grads = backward(g, x.sum())
    np.testing.assert_array_equal(grads[x.id], np.ones((3, 4)))


def test_sigmoid_derivative_at_zero():
    g = Graph()
    xv = np.array([1.0, -2.0, 3.0])
    w = g.input(np.zeros(3))
    loss = ad.sigmoid((w * g.const(xv)).sum())
    grads = backward(g, loss)
    np.testing.assert_allclose(grads[w.id], 0.25 * xv, rtol=0, atol=1e-15)


def test_loss_gradient_wrt_itself_is_one():
    g = Graph()
    x = g.input(np.ones(2))
    loss = x.sum()
    assert backward(g, loss)[loss.id] == 1.0


# -- errors


def test_nonscalar_loss_is_rejected():
    g = Graph()
    x = g.input(np.ones(3))
    with pytest.raises(GraphError):
        backward(g, ad.tanh(x))


def test_shape_mismatch_names_both_nodes():
    g = Graph()
    a = g.input(np.ones((2, 3)), name="left")
    b = g.input(np.ones((4, 5)), name="right")
    with pytest.raises(ShapeError) as exc:
        a @ b
    msg = str(exc.value)
    assert "left" in msg and "right" in msg
    assert exc.value.nodes == (a.id, b.id)


def test_unbound_input_is_an_error():
    g = Graph()
    x = g.input(np.ones(2))
    y = g.input(np.ones(2))
    (x + y).sum()
    with pytest.raises(GraphError, match="unbound"):
        forward_eval(g, {x.id: np.zeros(2)})


def test_non_finite_input_rejected():
    with pytest.raises(GraphError):
        Graph().input([1.0, np.nan])


def test_check_gradients_rejects_bad_eps():
    g = Graph()
    x = g.input(np.ones(2))
    with pytest.raises(GraphError):
        check_gradients(g, x.sum(), eps=0.1)
    with pytest.raises(GraphError):
        check_gradients(g, x.sum(), eps=0.0)


def test_embed_out_of_range():
    g = Graph()
    with pytest.raises(GraphError):
        ad.embed(g.input(np.ones((4, 2))), [1, 4])


# -- forward_eval replay


def test_forward_eval_replays_with_new_bindings():
    g = Graph()
    x = g.input(np.array([1.0, 2.0]))
    w = g.input(np.array([3.0, 4.0]))
    y = (x * w).sum()
    vals = forward_eval(g, {x.id: np.array([0.5, 0.5]), w.id: np.array([2.0, 2.0])})
    assert vals[y.id] == 2.0
    assert y.value == 2.0


def test_forward_eval_is_bit_deterministic():
    rng = np.random.default_rng(3)
    g = Graph()
    x = g.input(rnd(rng, 5, 4))
    w = g.input(rnd(rng, 3, 4))
    out = ad.softmax(ad.tanh(ad.linear(x, w)), axis=-1)
    loss = ad.log(out).sum()
    b = g.bindings()
    v1 = forward_eval(g, b)
    v2 = forward_eval(g, b)
    for k in v1:
        assert np.array_equal(v1[k], v2[k])
    assert v1[loss.id].tobytes() == v2[loss.id].tobytes()


# -- finite-difference checks of every primitive (64-bit)


def _fd(build, seed=0, **kw):
    rng = np.random.default_rng(seed)
    g = Graph(np.float64)
    loss = build(g, rng)
    rep = check_gradients(g, loss, eps=1e-5, **kw)
    assert rep.errors, "no parameters were checked"
    return rep


PRIMITIVES = {
    "add": lambda g, r: projected(g.input(rnd(r, 4, 3)) + g.input(rnd(r, 3)), r),
    "sub": lambda g, r: projected(g.input(rnd(r, 4, 3)) - g.input(rnd(r, 4, 1)), r),
    "mul": lambda g, r: projected(g.input(rnd(r, 2, 4, 3)) * g.input(rnd(r, 4, 1)), r),
    "scale": lambda g, r: projected(g.input(rnd(r, 3, 3)) * 2.5, r),
    "matmul": lambda g, r: projected(g.input(rnd(r, 2, 4, 3)) @ g.input(rnd(r, 3, 5)), r),
    "linear": lambda g, r: projected(ad.linear(g.input(rnd(r, 2, 3, 4)), g.input(rnd(r, 5, 4)), g.input(rnd(r, 5))), r),
    "sigmoid": lambda g, r: projected(ad.sigmoid(g.input(rnd(r, 4, 4, scale=2))), r),
    "tanh": lambda g, r: projected(ad.tanh(g.input(rnd(r, 4, 4, scale=2))), r),
    "relu": lambda g, r: projected(ad.relu(g.input(rnd(r, 6, 6))), r),
    "exp": lambda g, r: projected(ad.exp(g.input(rnd(r, 3, 3))), r),
    "log": lambda g, r: projected(ad.log(g.input(r.uniform(0.5, 2.0, (3, 3)))), r),
    "sum_axis": lambda g, r: projected(ad.sum_(g.input(rnd(r, 3, 4, 2)), axis=1), r),
    "reshape": lambda g, r: projected(ad.reshape(g.input(rnd(r, 3, 4)), (2, 6)), r),
    "broadcast": lambda g, r: projected(ad.broadcast(g.input(rnd(r, 1, 4)), (3, 4)), r),
    "concat": lambda g, r: projected(ad.concat([g.input(rnd(r, 2, 3)), g.input(rnd(r, 2, 2))], axis=1), r),
    "stack": lambda g, r: projected(ad.stack([g.input(rnd(r, 2, 3)), g.input(rnd(r, 2, 3))], axis=1), r),
    "slice": lambda g, r: projected(ad.slice_(g.input(rnd(r, 4, 5)), 1, 1, 4), r),
    "take": lambda g, r: projected(ad.take(g.input(rnd(r, 4, 3)), [0, 2, 2, 3]), r),
    "embed": lambda g, r: projected(ad.embed(g.input(rnd(r, 5, 3)), np.array([[0, 4], [4, 1]])), r),
    "softmax": lambda g, r: projected(ad.softmax(g.input(rnd(r, 3, 5)), axis=1), r),
    "softmax_masked": lambda g, r: projected(
        ad.softmax(g.input(rnd(r, 2, 4)), axis=1, mask=np.array([[1, 1, 0, 1], [1, 0, 0, 0]], bool)), r
    ),
    "log_softmax": lambda g, r: projected(ad.log_softmax(g.input(rnd(r, 2, 3, 6))), r),
    "cross_entropy": lambda g, r: ad.cross_entropy(
        ad.log_softmax(g.input(rnd(r, 3, 5))), [1, 4, 0], mask=[1.0, 1.0, 0.0]
    ),
    "lerp": lambda g, r: projected(ad.lerp(ad.sigmoid(g.input(rnd(r, 3, 4))), g.input(rnd(r, 3, 4)), g.input(rnd(r, 3, 4))), r),
    "sigmoid_xent": lambda g, r: ad.sigmoid_xent(g.input(rnd(r, 6, scale=2)), [1, 0, 1, 1, 0, 0]),
    "conv_seq": lambda g, r: projected(ad.conv_seq(g.input(rnd(r, 2, 5, 3)), g.input(rnd(r, 4, 2, 3)), g.input(rnd(r, 4))), r),
    "max_over_time": lambda g, r: projected(ad.max_over_time(g.input(rnd(r, 3, 5, 4)), [5, 2, 1]), r),
    "gru_cell": lambda g, r: projected(
        ad.gru_cell(g.input(rnd(r, 3, 4)), g.input(rnd(r, 3, 5, scale=0.5)), g.input(rnd(r, 15, 4)),
                    g.input(rnd(r, 15, 5)), g.input(rnd(r, 15)), mask=[1.0, 0.0, 1.0]), r
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    for seed in range(3):
        rep = _fd(PRIMITIVES[name], seed)
        assert rep.max_error < TOL, (name, seed, rep.errors)


@settings(max_examples=20, deadline=None)
@given(rows=st.integers(1, 8), cols=st.integers(1, 8), seed=st.integers(0, 2**31 - 1))
def test_random_small_graph_matches_fd(rows, cols, seed):
    def build(g, r):
        x = g.input(rnd(r, rows, cols))
        w = g.input(rnd(r, cols, cols, scale=0.5))
        h = ad.tanh(x @ w)
        return projected(ad.sigmoid(h) * h + ad.softmax(h, axis=-1), r)

    rep = _fd(build, seed)
    assert rep.max_error < TOL


def test_linear_regression_graph():
    def build(g, r):
        X = g.const(rnd(r, 10, 3))
        y = g.const(rnd(r, 10))
        w = g.input(rnd(r, 3, 1), name="w")
        b = g.input(rnd(r, 1), name="b")
        resid = ad.reshape(X @ w, (10,)) + b - y
        return (resid * resid).sum()

    rep = _fd(build)
    assert set(k.split(":")[1] for k in rep.errors) == {"w", "b"}
    assert rep.max_error < TOL


# -- gradient reversal


def test_grad_reverse_forward_is_bit_identical():
    rng = np.random.default_rng(0)
    g = Graph(np.float32)
    x = g.input(rnd(rng, 4, 3))
    y = ad.grad_reverse(x, 1.0)
    assert y.value.tobytes() == x.value.tobytes()
    vals = forward_eval(g, {x.id: rnd(rng, 4, 3)})
    assert vals[y.id].tobytes() == vals[x.id].tobytes()


def test_grad_reverse_negates_upstream():
    g = Graph()
    x = g.input(np.array([1.0, 2.0]))
    y = ad.grad_reverse(x, 0.5)
    up = np.array([2.0, -4.0])
    grads = backward(g, y, seed=up)
    np.testing.assert_array_equal(grads[x.id], [-1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_grad_reverse_is_exact_minus_scale(scale, seed):
    rng = np.random.default_rng(seed)
    g = Graph()
    x = g.input(rnd(rng, 3, 2))
    y = ad.grad_reverse(x, scale)
    loss = projected(ad.tanh(y), rng)
    grads = backward(g, loss)
    assert np.array_equal(grads[x.id], grads[y.id] * -scale)


def test_grad_reverse_rejects_nonpositive_scale():
    g = Graph()
    x = g.input(np.ones(2))
    for bad in (0.0, -1.0):
        with pytest.raises(GraphError):
            ad.grad_reverse(x, bad)


def test_check_gradients_contract_checks_grl():
    def build(g, r):
        x = g.input(rnd(r, 3, 4))
        w = g.input(rnd(r, 2, 4))
        return projected(ad.tanh(ad.linear(ad.grad_reverse(ad.tanh(x), 0.7), w)), r)

    rep = _fd(build)
    assert len(rep.reversal_checks) == 1 and all(rep.reversal_checks.values())
    assert rep.max_error < TOL
    assert rep.ok()


def test_fd_without_transparency_disagrees_with_reversed_gradient():
    rng = np.random.default_rng(1)
    g = Graph()
    x = g.input(rnd(rng, 3))
    loss = projected(ad.grad_reverse(x, 1.0), rng)
    grads = backward(g, loss)
    eps = 1e-5
    base = x.value.copy()
    num = np.zeros(3)
    for i in range(3):
        for sgn in (1, -1):
            v = base.copy()
            v[i] += sgn * eps
            num[i] += sgn * float(forward_eval(g, {x.id: v, **{n.id: n.value for n in g.inputs() if n is not x}})[loss.id])
        num[i] /= 2 * eps
    np.testing.assert_allclose(grads[x.id], -num, rtol=1e-6)


# -- softmax and max-over-time properties


@settings(max_examples=50, deadline=None)
@given(rows=st.integers(1, 8), cols=st.integers(1, 8), seed=st.integers(0, 10**6), spread=st.floats(0.1, 30))
def test_softmax_normalised_and_in_open_interval(rows, cols, seed, spread):
    rng = np.random.default_rng(seed)
    g = Graph()
    p = ad.softmax(g.input(rnd(rng, rows, cols, scale=spread)), axis=1).value
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    if spread < 10:  # large spreads legitimately underflow to 0
        assert np.all((p > 0) & (p < 1)) or cols == 1


@settings(max_examples=50, deadline=None)
@given(B=st.integers(1, 4), T=st.integers(1, 6), C=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_max_over_time_routes_to_argmax_only(B, T, C, seed):
    rng = np.random.default_rng(seed)
    xv = rng.integers(-3, 3, (B, T, C)).astype(float)  # plenty of ties
    valid = rng.integers(1, T + 1, B)
    g = Graph()
    x = g.input(xv)
    y = ad.max_over_time(x, valid)
    up = rnd(rng, B, C)
    gx = backward(g, y, seed=up)[x.id]
    np.testing.assert_allclose(gx.sum(axis=1), up, atol=1e-12)
    for b in range(B):
        for c in range(C):
            col = xv[b, : valid[b], c]
            first = int(np.argmax(col))  # numpy picks the lowest index on ties
            assert y.value[b, c] == col.max()
            nz = np.flatnonzero(gx[b, :, c])
            assert set(nz) <= {first}


def test_backward_zero_for_unused_inputs():
    g = Graph()
    x = g.input(np.ones(2))
    unused = g.input(np.ones((3, 3)))
    grads = backward(g, x.sum())
    np.testing.assert_array_equal(grads[unused.id], np.zeros((3, 3)))


def test_gradient_shapes_match_values():
    rng = np.random.default_rng(0)
    g = Graph()
    x = g.input(rnd(rng, 2, 3, 4))
    w = g.input(rnd(rng, 5, 4))
    loss = projected(ad.softmax(ad.linear(x, w), axis=1), rng)
    grads = backward(g, loss)
    for node in g.nodes[: loss.id + 1]:
        if node.id in grads:
            assert grads[node.id].shape == node.shape
