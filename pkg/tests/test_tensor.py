import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pivotgen import tensor as T
from pivotgen.tensor import ShapeError, Tensor, grad_check


def randn(rng, *shape):
    return rng.normal(size=shape).astype(np.float32)


def test_matmul_identity(rng):
    x = randn(rng, 3, 5)
    out = T.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_softmax_symmetry():
    out = T.softmax(Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.data, np.full((1, 3), 1 / 3), atol=1e-6)


def test_layer_norm_against_recomputation():
    x = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    out = T.layer_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3))).data[0]
    mu, std = x.mean(), x.std()
    np.testing.assert_allclose(out, (x[0] - mu) / std, atol=1e-4)
    assert abs(out.mean()) <= 1e-5
    np.testing.assert_allclose(out.var(), 1.0, atol=1e-3)


float_rows = arrays(
    np.float32,
    st.tuples(st.integers(1, 6), st.integers(1, 8)),
    elements=st.floats(-30, 30, width=32),
)


@settings(max_examples=40, deadline=None)
@given(float_rows)
def test_softmax_rows_sum_to_one(x):
    rows = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-5)
    assert np.isfinite(rows).all()


@settings(max_examples=40, deadline=None)
@given(float_rows.filter(lambda a: a.shape[1] >= 2))
def test_layer_norm_row_mean_small(x):
    d = x.shape[-1]
    out = T.layer_norm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d))).data
    assert np.abs(out.mean(axis=-1)).max() <= 1e-5


def test_backward_square_sum():
    x = Tensor([3.0], requires_grad=True)
    loss = T.sum_(T.mul(x, x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [6.0], atol=1e-6)


def test_backward_detached_constant_leaves_no_grad():
    x = Tensor([2.0, 1.0], requires_grad=True)
    loss = T.sum_(T.mul(x.detach(), x.detach()))
    loss.backward()
    assert x.grad is None


def test_backward_accumulates_additively():
    x = Tensor([1.0, 2.0], requires_grad=True)

    def loss():
        return T.sum_(T.mul(x, x))

    loss().backward()
    first = x.grad.copy()
    loss().backward()
    np.testing.assert_allclose(x.grad, 2 * first, atol=1e-6)
    x.zero_grad()
    loss().backward()
    np.testing.assert_allclose(x.grad, first, atol=1e-6)


def test_backward_rejects_non_scalar():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        T.mul(x, x).backward()


@pytest.mark.parametrize(
    "build, shapes",
    [
        (T.add, ((2, 3), (4, 3))),
        (T.sub, ((2, 3), (2, 4))),
        (T.mul, ((5,), (3,))),
        (T.matmul, ((2, 3), (4, 5))),
    ],
)
def test_shape_mismatch_names_both_shapes(build, shapes, rng):
    a, b = (Tensor(randn(rng, *s)) for s in shapes)
    with pytest.raises(ShapeError) as exc:
        build(a, b)
    for s in shapes:
        assert str(s) in str(exc.value)


def test_forward_determinism(rng):
    x = randn(rng, 4, 6)
    a = T.softmax(T.gelu(Tensor(x))).data
    b = T.softmax(T.gelu(Tensor(x))).data
    assert (a == b).all()


def test_grad_check_linear_function(rng):
    # a linear function has zero truncation error, so a large step avoids
    # the float32 round-off floor of small central differences
    err = grad_check(lambda t: T.sum_(t), Tensor(randn(rng, 3, 3)), step=0.5)
    assert err <= 1e-6


OPS = {
    "add_broadcast": lambda t, c: T.sum_(T.mul(T.add(t, c[0]), c[1])),
    "sub": lambda t, c: T.sum_(T.mul(T.sub(t, c[0]), c[1])),
    "mul": lambda t, c: T.sum_(T.mul(T.mul(t, c[0]), c[1])),
    "scale": lambda t, c: T.sum_(T.mul(T.scale(t, -1.7), c[1])),
    "matmul": lambda t, c: T.sum_(T.mul(T.matmul(t, c[2]), c[3])),
    "transpose": lambda t, c: T.sum_(T.mul(T.transpose(t), T.transpose(c[1]))),
    "reshape": lambda t, c: T.sum_(T.mul(t.reshape(12), c[1].reshape(12))),
    "concat": lambda t, c: T.sum_(T.mul(T.concat([t, c[0]], axis=0), T.concat([c[1], c[1]], axis=0))),
    "slice": lambda t, c: T.sum_(T.mul(t[1:3, :2], c[1][1:3, :2])),
    "softmax": lambda t, c: T.sum_(T.mul(T.softmax(t), c[1])),
    "gelu": lambda t, c: T.sum_(T.mul(T.gelu(t), c[1])),
    "relu": lambda t, c: T.sum_(T.mul(T.relu(t), c[1])),
    "exp": lambda t, c: T.sum_(T.mul(T.exp(T.scale(t, 0.3)), c[1])),
    "log": lambda t, c: T.sum_(T.mul(T.log(T.add(T.mul(t, t), c[4])), c[1])),
    "sum_axis": lambda t, c: T.sum_(T.mul(T.sum_(t, axis=1, keepdims=True), c[5])),
    "mean": lambda t, c: T.sum_(T.mul(T.mean(t, axis=0, keepdims=True), c[6])),
    "l2_norm": lambda t, c: T.sum_(T.mul(T.l2_norm(t), c[5])),
    "l2_normalize": lambda t, c: T.sum_(T.mul(T.l2_normalize(t), c[1])),
    "layer_norm": lambda t, c: T.sum_(T.mul(T.layer_norm(t, c[7], c[8]), c[1])),
    "cross_entropy": lambda t, c: T.mean(T.cross_entropy_rows(t, np.array([0, 2, 1, 1]))),
    "cosine_matrix": lambda t, c: T.sum_(T.mul(T.cosine_matrix(t, c[0]), c[9])),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_per_op(name, seed):
    rng = np.random.default_rng(seed)
    t = Tensor(randn(rng, 4, 3))
    consts = (
        Tensor(randn(rng, 4, 3)),  # 0: same-shape partner
        Tensor(randn(rng, 4, 3)),  # 1: projection weights
        Tensor(randn(rng, 3, 5)),  # 2: matmul rhs
        Tensor(randn(rng, 4, 5)),  # 3
        Tensor(np.full((4, 3), 2.0, dtype=np.float32)),  # 4: offset for log
        Tensor(randn(rng, 4, 1)),  # 5
        Tensor(randn(rng, 1, 3)),  # 6
        Tensor(randn(rng, 3)),  # 7: layer-norm gain
        Tensor(randn(rng, 3)),  # 8: layer-norm bias
        Tensor(randn(rng, 4, 4)),  # 9
    )
    err = grad_check(lambda x: OPS[name](x, consts), t)
    assert err <= 1e-3, f"{name}: {err}"


def test_grad_check_embedding_and_positions(rng):
    ids = np.array([[0, 2], [1, 0]])
    weights = Tensor(randn(rng, 3, 4))
    proj = Tensor(randn(rng, 2, 2, 4))

    def f_emb(w):
        return T.sum_(T.mul(T.embedding(w, ids), proj))

    assert grad_check(f_emb, weights) <= 1e-3

    x = Tensor(randn(rng, 2, 3, 4))
    sel = Tensor(randn(rng, 2, 4))

    def f_pos(t):
        return T.sum_(T.mul(T.take_positions(t, np.array([1, 2])), sel))

    assert grad_check(f_pos, x) <= 1e-3


def test_grad_check_composite_transformer_block(rng):
    """Attention-shaped composite: layer norm -> scores -> softmax ->
    context -> GELU ffn, verified against central differences."""
    d = 4
    wq, wk, wv, w1 = (Tensor(randn(rng, d, d)) for _ in range(4))
    gain, bias = Tensor(np.ones(d)), Tensor(np.zeros(d))

    def block(x):
        h = T.layer_norm(x, gain, bias)
        q, k, v = T.matmul(h, wq), T.matmul(h, wk), T.matmul(h, wv)
        attn = T.softmax(T.scale(T.matmul(q, T.transpose(k)), 1 / 2.0))
        ctx = T.add(x, T.matmul(attn, v))
        return T.mean(T.gelu(T.matmul(ctx, w1)))

    for seed in range(3):
        x = Tensor(np.random.default_rng(seed).normal(size=(5, d)).astype(np.float32))
        assert grad_check(block, x) <= 1e-3


def test_finite_outputs_on_extreme_inputs():
    x = Tensor(np.array([[1e4, -1e4, 0.0]], dtype=np.float32))
    assert np.isfinite(T.softmax(x).data).all()
    losses = T.cross_entropy_rows(x, np.array([1]))
    assert np.isfinite(losses.data).all()


def test_grad_check_reports_nonfinite_coordinate():
    x = Tensor(np.array([0.0], dtype=np.float32))
    with pytest.raises(FloatingPointError, match="coordinate 0"):
        grad_check(lambda t: T.log(t).sum(), x, step=1.0)
