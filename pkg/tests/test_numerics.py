import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmgcn import numerics as nx
from mmgcn.numerics import AdamState, NonFiniteError, Tape, Tensor, adam_step, backward, numeric_gradient


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def check_grad(fn, *shapes, seed=0, positive=False):
    """Compare tape gradients of sum(fn(*inputs) * weights) with central differences."""
    rng = np.random.default_rng(seed)
    arrs = [rng.uniform(0.2, 1.5, s) if positive else rng.standard_normal(s) for s in shapes]
    params = {f"x{i}": nx.parameter(a) for i, a in enumerate(arrs)}
    out_shape = fn(*params.values()).shape
    weights = rng.standard_normal(out_shape)

    def scalar():
        return float(np.sum(fn(*[Tensor(p.data) for p in params.values()]).data * weights))

    with Tape() as tape:
        loss = nx.sum(nx.mul(fn(*params.values()), weights))
    grads = backward(tape, loss, wrt=params)
    for name, p in params.items():
        num = numeric_gradient(scalar, p.data)
        assert rel_err(grads[name], num) < 1e-4, name


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nx.matmul(Tensor(np.eye(2)), a).data, a.data)
    assert np.array_equal(nx.matmul(a, Tensor(np.zeros((2, 2)))).data, np.zeros((2, 2)))
    assert np.array_equal(nx.matmul(a, Tensor([[5.0], [6.0]])).data, [[17.0], [39.0]])
    with pytest.raises(ValueError):
        nx.matmul(a, Tensor(np.ones((3, 1))))


def test_activation_examples():
    assert np.array_equal(nx.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert np.allclose(nx.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)
    assert nx.sigmoid(Tensor(0.0)).item() == 0.5
    assert np.array_equal(nx.tanh(Tensor([0.0])).data, [0.0])


def test_concat_examples():
    assert np.array_equal(nx.concat_cols([Tensor([[1.0]]), Tensor([[2.0]])]).data, [[1.0, 2.0]])
    out = nx.concat_cols([Tensor([[1.0, 2.0]]), Tensor([[3.0]]), Tensor([[4.0]])])
    assert np.array_equal(out.data, [[1.0, 2.0, 3.0, 4.0]])
    with pytest.raises(ValueError):
        nx.concat_cols([Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1)))])


def test_concat_backward_splits_gradient():
    a, b = nx.parameter(np.ones((2, 2))), nx.parameter(np.ones((2, 3)))
    g = np.arange(10.0).reshape(2, 5)
    with Tape() as tape:
        loss = nx.sum(nx.mul(nx.concat_cols([a, b]), g))
    grads = backward(tape, loss, wrt={"a": a, "b": b})
    assert np.array_equal(grads["a"], g[:, :2])
    assert np.array_equal(grads["b"], g[:, 2:])
    check_grad(lambda x, y, z: nx.concat_cols([x, y, z]), (3, 1), (3, 2), (3, 4))


def test_layer_norm_examples():
    one, zero = np.ones(3), np.zeros(3)
    assert np.allclose(nx.layer_norm(Tensor([[5.0, 5.0, 5.0]]), one, zero).data, 0.0)
    out = nx.layer_norm(Tensor([[1.0, -1.0]]), np.ones(2), np.zeros(2)).data
    assert np.allclose(out, [[1.0, -1.0]], atol=1e-5)  # eps=1e-5 in the denominator
    out = nx.layer_norm(Tensor([[3.0, 1.0, -7.0]]), np.zeros(3), np.full(3, 2.5)).data
    assert np.array_equal(out, [[2.5, 2.5, 2.5]])


def test_dropout_examples():
    x = Tensor(np.arange(1.0, 13.0).reshape(3, 4))
    assert nx.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert nx.dropout(x, 0.4, False) is x
    m1 = nx.dropout(x, 0.5, True, np.random.default_rng(9)).data
    m2 = nx.dropout(x, 0.5, True, np.random.default_rng(9)).data
    assert np.array_equal(m1, m2)
    assert set(np.unique(m1 / x.data)) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        nx.dropout(x, 1.0, True, np.random.default_rng(0))


def test_backward_examples():
    w = nx.parameter(np.random.default_rng(0).standard_normal((2, 3)))
    x = np.random.default_rng(1).standard_normal((3, 1))
    with Tape() as tape:
        loss = nx.sum(nx.matmul(w, x))
    g = backward(tape, loss, wrt={"w": w})["w"]
    assert np.allclose(g, np.tile(x.T, (2, 1)))

    with Tape() as tape:
        loss = nx.sum(nx.mul(w, w))
    assert np.allclose(backward(tape, loss, wrt={"w": w})["w"], 2 * w.data)

    other = nx.parameter(np.ones(4))
    with Tape() as tape:
        loss = nx.add(nx.mul(nx.sum(w), 0.0), 3.0)
    grads = backward(tape, loss, wrt={"w": w, "other": other})
    assert not grads["w"].any() and not grads["other"].any()

    with Tape() as tape:
        vec = nx.mul(w, 2.0)
    with pytest.raises(ValueError):
        backward(tape, vec)


def test_non_finite_is_surfaced():
    with pytest.raises(NonFiniteError):
        nx.mul(Tensor([1.0]), Tensor([np.inf]))
    with pytest.raises(NonFiniteError):
        nx.log(Tensor([0.0]))


@pytest.mark.parametrize(
    "fn,shapes,positive",
    [
        (lambda a, b: nx.matmul(a, b), [(3, 4), (4, 2)], False),
        (lambda a, b: nx.add(a, b), [(3, 4), (4,)], False),
        (lambda a, b: nx.mul(a, b), [(3, 4), (3, 1)], False),
        (lambda a, b: nx.sub(a, b), [(3, 4), (1, 4)], False),
        (nx.transpose, [(2, 5)], False),
        (nx.relu, [(4, 3)], False),
        (nx.tanh, [(4, 3)], False),
        (nx.sigmoid, [(4, 3)], False),
        (nx.softmax_rows, [(4, 5)], False),
        (lambda x: nx.log(x, 1e-12), [(3, 3)], True),
        (lambda x: nx.power(x, -0.5), [(3, 2)], True),
        (lambda x: nx.sum(x, axis=1, keepdims=True), [(3, 4)], False),
        (lambda x: nx.sum(x, axis=0), [(3, 4)], False),
        (nx.mean, [(3, 4)], False),
        (lambda x, y: nx.concat_rows([x, y]), [(2, 3), (4, 3)], False),
        (lambda x: nx.slice_cols(x, 1, 3), [(3, 4)], False),
        (lambda x: nx.slice_rows(x, 1, 3), [(4, 2)], False),
        (lambda x: nx.pick(x, [2, 0, 1]), [(3, 4)], False),
        (lambda x, g, b: nx.layer_norm(x, g, b), [(3, 5), (5,), (5,)], False),
        (nx.row_normalize, [(4, 3)], False),
        (nx.gram, [(4, 3)], False),
        (lambda x: nx.angular_similarity(nx.mul(x, 0.3)), [(3, 3)], False),
        (lambda x, wx, wh, b: nx.lstm(x, wx, wh, b), [(5, 3), (3, 8), (2, 8), (8,)], False),
        (lambda x, wx, wh, b: nx.lstm(x, wx, wh, b, reverse=True), [(4, 3), (3, 12), (3, 12), (12,)], False),
    ],
)
def test_op_gradients_match_finite_differences(fn, shapes, positive):
    check_grad(fn, *shapes, positive=positive)


def test_dropout_gradient_uses_mask():
    x = nx.parameter(np.ones((4, 5)))
    with Tape() as tape:
        y = nx.dropout(x, 0.5, True, np.random.default_rng(3))
        loss = nx.sum(y)
    assert np.array_equal(backward(tape, loss, wrt={"x": x})["x"], y.data)


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        w = nx.parameter(rng.standard_normal((5, 5)))
        with Tape() as tape:
            h = nx.dropout(nx.tanh(nx.matmul(w, w)), 0.3, True, np.random.default_rng(7))
            loss = nx.sum(nx.softmax_rows(h))
        return backward(tape, loss, wrt={"w": w})["w"]

    assert np.array_equal(run(), run())


def test_tape_records_in_topological_order():
    a = nx.parameter(np.ones((2, 2)))
    with Tape() as tape:
        b = nx.relu(a)
        c = nx.matmul(b, a)
        nx.sum(c)
    produced = set()
    for rec in tape.records:
        for tid in rec.input_ids:
            assert tid == a.id or tid in produced or tid not in {r.output_id for r in tape.records}
        produced.add(rec.output_id)


def test_adam_examples():
    p = {"w": nx.parameter([1.0])}
    out = adam_step(p, {"w": np.array([0.0])}, AdamState(lr=0.1))
    assert np.array_equal(out["w"].data, [1.0])

    out = adam_step(p, {"w": np.array([1.0])}, AdamState(lr=0.1))
    assert out["w"].data[0] == pytest.approx(0.9, abs=1e-9)

    state = AdamState(lr=0.01)
    cur = {"w": nx.parameter(np.zeros(3))}
    g = {"w": np.array([0.5, -2.0, 1e-3])}
    for _ in range(50):
        nxt = adam_step(cur, g, state)
        assert np.linalg.norm(nxt["w"].data - cur["w"].data, np.inf) <= 0.01 * (1 + 1e-6)
        cur = nxt
    with pytest.raises(ValueError):
        adam_step(cur, {"w": np.zeros(4)}, state)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-50, 50)))
def test_softmax_rows_property(x):
    y = nx.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(y > 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=st.floats(-100, 100)))
def test_layer_norm_property(x):
    spread = x.max(axis=1) - x.min(axis=1)
    x = x[spread > 1e-3]
    if not len(x):
        return
    d = x.shape[1]
    out = nx.layer_norm(Tensor(x), np.ones(d), np.zeros(d)).data
    assert np.all(np.abs(out.mean(axis=1)) <= 1e-9)
    var = x.var(axis=1)
    # the eps inside the denominator shrinks the variance by var / (var + eps)
    expected = var / (var + 1e-5)
    assert np.allclose(out.var(axis=1), expected, atol=1e-9)
    big = var > 10.0
    assert np.all(np.abs(out.var(axis=1)[big] - 1.0) <= 1e-6)
