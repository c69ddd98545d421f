import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codedoffload.trainer import layers as L
from codedoffload.trainer.data import GENERATORS, load_csv, make_dataset, save_csv


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 2**16))
def test_im2col_matches_naive_conv(c, oc, k, s, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, c, 6, 5))
    W = rng.standard_normal((oc, c, k, k))
    b = rng.standard_normal(oc)
    spec = L.Conv2D(c, oc, k, s)
    ops, meta = L.operands(spec, x)
    y = np.einsum("on,knt->kot", L.weight_matrix(spec, W), ops) + b[None, :, None]
    np.testing.assert_allclose(L.assemble(spec, y, meta), L.conv2d_naive(x, W, b, s), atol=1e-12)


def test_col2im_is_adjoint():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 2, 5, 5))
    cols = L.im2col(x, 3, 1)
    g = rng.standard_normal(cols.shape)
    assert np.sum(cols * g) == pytest.approx(np.sum(x * L.col2im(g, x.shape, 3, 1)))


def test_maxpool_routes_to_first_max():
    x = np.array([[[[1.0, 3.0], [3.0, 0.0]]]])
    out, cache = L.maxpool_forward(x, 2)
    assert out[0, 0, 0, 0] == 3.0
    back = L.maxpool_backward(np.ones((1, 1, 1, 1)), cache, 2)
    assert back.tolist() == [[[[0.0, 1.0], [0.0, 0.0]]]]


def _numeric_grad(model, x, y, idx, key, eps=1e-6):
    base = model.params[idx][key]
    g = np.zeros_like(base)
    for pos in np.ndindex(base.shape):
        old = base[pos]
        base[pos] = old + eps
        up = L.evaluate(model, x, y)[0]
        base[pos] = old - eps
        down = L.evaluate(model, x, y)[0]
        base[pos] = old
        g[pos] = (up - down) / (2 * eps)
    return g


def test_mlp_gradients_match_finite_differences():
    x, y = make_dataset("moons", 8, 1)
    model = L.mlp([2, 5, 2], seed=3)
    grads, _ = L.plain_gradients(model, x, y)
    for idx in (0, 2):
        for key in ("W", "b"):
            np.testing.assert_allclose(grads[idx][key], _numeric_grad(model, x, y, idx, key), atol=1e-6)


def test_conv_net_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 1, 6, 6))
    y = np.array([0, 1, 1])
    specs = [L.Conv2D(1, 2, 3), L.ReLU(), L.MaxPool(2), L.Dense(8, 2)]
    model = L.init_model(specs, seed=1)
    grads, _ = L.plain_gradients(model, x, y)
    for idx in (0, 3):
        np.testing.assert_allclose(grads[idx]["W"], _numeric_grad(model, x, y, idx, "W"), atol=1e-6)


def test_cross_entropy_gradient_rows_sum_to_zero():
    logits = np.array([[2.0, -1.0], [0.0, 0.0]])
    loss, g = L.cross_entropy(logits, np.array([0, 1]))
    assert loss > 0
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)


def test_model_copy_is_deep():
    m = L.mlp([2, 3, 2])
    c = m.copy()
    c.params[0]["W"][0, 0] += 1.0
    assert m.params[0]["W"][0, 0] != c.params[0]["W"][0, 0]


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_datasets_seeded(name, tmp_path):
    a, la = make_dataset(name, 40, 7)
    b, lb = make_dataset(name, 40, 7)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert set(la.tolist()) == {0, 1}
    path = tmp_path / "d.csv"
    save_csv(path, a, la)
    x, labels = make_dataset(f"csv:{path}")
    np.testing.assert_allclose(x, a)
    assert np.array_equal(labels, la)


def test_unknown_dataset():
    with pytest.raises(ValueError):
        make_dataset("spirals")


def test_csv_header_checked(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,0\n")
    with pytest.raises(ValueError):
        load_csv(p)
