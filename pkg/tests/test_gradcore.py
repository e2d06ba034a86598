import numpy as np
import pytest

from deepaid import gradcore as gc
from deepaid.errors import GraphError


def identity_affine(n):
    g = gc.DiffGraph()
    x = g.input("x", (n,))
    w = g.parameter("W", np.eye(n))
    b = g.parameter("b", np.zeros(n))
    g.output(g.affine(x, w, b))
    return g


def test_identity_affine():
    g = identity_affine(2)
    out = gc.evaluate(g, {"x": np.array([0.3, 0.7])})
    assert np.allclose(out, [0.3, 0.7])


def test_relu_definition():
    g = gc.DiffGraph()
    x = g.input("x", (3,))
    g.output(g.relu(x))
    out = gc.evaluate(g, {"x": np.array([-1.0, 0.0, 2.0])})
    assert np.array_equal(out, [0.0, 0.0, 2.0])


def test_softmax_symmetry():
    g = gc.DiffGraph()
    x = g.input("x", (3,))
    g.output(g.softmax(x))
    out = gc.evaluate(g, {"x": np.zeros(3)})
    assert np.allclose(out, 1.0 / 3.0)


def test_quadratic_gradient():
    # d/dx 0.5*(x-1)^2 at x=3 is 2
    g = gc.DiffGraph()
    x = g.input("x", (1,))
    d = g.add_scalar(x, -1.0)
    g.output(g.scale(g.sum(g.mul(d, d)), 0.5))
    grad = gc.gradient(g, {"x": np.array([3.0])}, "x")
    assert np.allclose(grad, [2.0])


def test_relu_flat_region_gradient():
    g = gc.DiffGraph()
    x = g.input("x", (1,))
    g.output(g.sum(g.relu(x)))
    assert gc.gradient(g, {"x": np.array([-1.0])}, "x")[0] == 0.0
    # subgradient at exactly 0 is defined as 0
    assert gc.gradient(g, {"x": np.array([0.0])}, "x")[0] == 0.0


def _random_mlp_graph(rng, n_in=5, hidden=4):
    g = gc.DiffGraph()
    x = g.input("x", (n_in,))
    w1 = g.parameter("W1", rng.normal(size=(hidden, n_in)))
    b1 = g.parameter("b1", rng.normal(size=hidden))
    w2 = g.parameter("W2", rng.normal(size=(n_in, hidden)))
    b2 = g.parameter("b2", rng.normal(size=n_in))
    h = g.tanh(g.affine(x, w1, b1))
    y = g.affine(h, w2, b2)
    g.output(g.mse(y, x))
    return g


def test_three_layer_net_matches_finite_differences(rng):
    g = _random_mlp_graph(rng)
    report = gc.check_gradient(g, {"x": rng.normal(size=5)}, step=1e-5)
    assert report.worst < 1e-4


def test_gradient_property_random_graphs():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = _random_mlp_graph(rng)
        report = gc.check_gradient(g, {"x": rng.normal(size=5)})
        worst = max(worst, report.worst)
    assert worst < 1e-4


def test_linear_graph_exact_gradient():
    g = identity_affine(3)
    g2 = gc.DiffGraph()
    x = g2.input("x", (3,))
    w = g2.parameter("W", np.eye(3))
    b = g2.parameter("b", np.zeros(3))
    g2.output(g2.sum(g2.affine(x, w, b)))
    report = gc.check_gradient(g2, {"x": np.array([0.5, -0.2, 0.1])})
    assert report.worst < 1e-10


def test_evaluate_is_pure(rng):
    g = _random_mlp_graph(rng)
    x = {"x": rng.normal(size=5)}
    a = gc.evaluate(g, x)
    b = gc.evaluate(g, x)
    assert a.tobytes() == b.tobytes()


def test_gradient_linearity(rng):
    # gradient of f+g equals grad f + grad g (built as a summed graph)
    x0 = rng.normal(size=3)

    def build(scale1, scale2):
        g = gc.DiffGraph()
        x = g.input("x", (3,))
        f = g.scale(g.sum(g.mul(x, x)), scale1)
        h = g.scale(g.sum(g.tanh(x)), scale2)
        g.output(g.add(f, h))
        return gc.gradient(g, {"x": x0}, "x")

    combined = build(1.0, 1.0)
    only_f = build(1.0, 0.0)
    only_h = build(0.0, 1.0)
    assert np.allclose(combined, only_f + only_h, atol=1e-12)


def test_shape_mismatch_rejected_with_slot():
    g = identity_affine(2)
    with pytest.raises(GraphError, match="x"):
        gc.evaluate(g, {"x": np.zeros(3)})


def test_nonfinite_intermediate_rejected():
    g = gc.DiffGraph()
    x = g.input("x", (1,))
    g.output(g.sum(x))
    with pytest.raises(GraphError, match="node"):
        gc.evaluate(g, {"x": np.array([np.inf])})


def test_gradient_requires_scalar_output():
    g = identity_affine(2)
    with pytest.raises(GraphError, match="scalar"):
        gc.gradient(g, {"x": np.zeros(2)}, "x")


def test_lookup_index_non_differentiable():
    g = gc.DiffGraph()
    table = g.parameter("emb", np.arange(12.0).reshape(4, 3))
    idx = g.input("idx", (), integer=True)
    g.output(g.sum(g.lookup(table, idx)))
    with pytest.raises(GraphError, match="non-differentiable"):
        gc.gradient(g, {"idx": 2}, "idx")
    # table side is differentiable
    grad = gc.gradient(g, {"idx": 2}, "emb")
    expected = np.zeros((4, 3))
    expected[2] = 1.0
    assert np.array_equal(grad, expected)


def test_check_gradient_reports_non_differentiable_slot():
    g = gc.DiffGraph()
    table = g.parameter("emb", np.ones((3, 2)))
    idx = g.input("idx", (), integer=True)
    g.output(g.sum(g.lookup(table, idx)))
    report = gc.check_gradient(g, {"idx": 1})
    assert "idx" in report.non_differentiable


def test_frozen_graph_rejects_parameter_updates():
    g = identity_affine(2)
    g.freeze()
    with pytest.raises(GraphError, match="frozen"):
        g.set_parameter("W", np.zeros((2, 2)))
