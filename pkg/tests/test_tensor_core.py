import numpy as np
import pytest

from cograd import (
    DimensionError,
    LayoutError,
    OracleError,
    ParamVector,
    finite_diff_gradient,
    finite_diff_hvp,
    flatten_params,
    hvp_default_eps,
    unflatten_params,
)


def test_flatten_orders_by_name_row_major():
    pv = flatten_params({"b": np.array([5.0]), "W": np.array([[1.0, 2.0], [3.0, 4.0]])})
    assert pv.values.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert [e.name for e in pv.layout] == ["W", "b"]
    assert pv.layout[0].shape == (2, 2) and pv.layout[0].offset == 0
    assert pv.layout[1].shape == (1,) and pv.layout[1].offset == 4


def test_flatten_empty_set():
    pv = flatten_params({})
    assert len(pv) == 0
    assert pv.layout == ()


def test_flatten_duplicate_name_rejected():
    with pytest.raises(LayoutError):
        flatten_params([("w", np.zeros(2)), ("w", np.ones(2))])


def test_unflatten_flatten_round_trip_bitwise():
    rng = np.random.default_rng(7)
    for _ in range(20):
        params = {
            "layer.weight": rng.standard_normal((3, 4)),
            "layer.bias": rng.standard_normal(4),
            "out": rng.standard_normal((4, 1)),
        }
        rebuilt = unflatten_params(flatten_params(params))
        for name, arr in params.items():
            assert np.array_equal(rebuilt[name], arr)


def test_flatten_unflatten_identity_on_flat_vector():
    rng = np.random.default_rng(3)
    layout = flatten_params({"a": np.zeros((2, 3)), "b": np.zeros(4)}).layout
    for _ in range(10):
        v = rng.standard_normal(10)
        assert np.array_equal(
            flatten_params(unflatten_params(v, layout)).values, v
        )


def test_param_vector_rejects_mismatched_layout():
    layout = flatten_params({"a": np.zeros(3)}).layout
    with pytest.raises(LayoutError):
        ParamVector(np.zeros(5), layout)


def test_fd_gradient_quadratic_exact():
    grad = finite_diff_gradient(lambda v: 0.5 * float(v @ v), np.array([1.0, -2.0]), eps=1e-3)
    assert np.max(np.abs(grad - np.array([1.0, -2.0]))) < 1e-9


def test_fd_gradient_bilinear():
    grad = finite_diff_gradient(lambda v: float(v[0] * v[1]), np.array([3.0, 5.0]), eps=1e-3)
    assert np.max(np.abs(grad - np.array([5.0, 3.0]))) < 1e-9


def test_fd_gradient_constant_loss_is_zero():
    grad = finite_diff_gradient(lambda v: 4.2, np.array([0.3, -0.1, 2.0]))
    assert np.array_equal(grad, np.zeros(3))


def test_fd_gradient_names_offending_index():
    def loss(v):
        return float("nan") if v[1] > 1.0 else float(v @ v)

    with pytest.raises(OracleError, match="index 1"):
        finite_diff_gradient(loss, np.array([0.0, 1.0]), eps=1e-3)


def test_fd_gradient_second_order_convergence_on_softplus():
    # Halving eps should shrink the truncation error about 4x.
    theta = np.array([0.3, -0.7, 1.1])

    def loss(v):
        return float(np.sum(np.log1p(np.exp(v))))

    exact = 1.0 / (1.0 + np.exp(-theta))
    err_coarse = np.linalg.norm(finite_diff_gradient(loss, theta, eps=1e-2) - exact)
    err_fine = np.linalg.norm(finite_diff_gradient(loss, theta, eps=5e-3) - exact)
    assert 3.5 < err_coarse / err_fine < 4.5


def test_fd_hvp_diagonal_quadratic():
    h = np.array([1.0, 2.0])

    def grad(v):
        return h * v

    got = finite_diff_hvp(grad, np.array([0.4, -1.3]), np.array([1.0, 1.0]))
    assert np.max(np.abs(got - h)) < 1e-9


def test_fd_hvp_zero_direction():
    got = finite_diff_hvp(lambda v: v, np.array([1.0, 2.0]), np.zeros(2))
    assert np.array_equal(got, np.zeros(2))


def test_fd_hvp_identity_hessian():
    got = finite_diff_hvp(lambda v: v, np.array([0.0, 0.0]), np.array([3.0, -4.0]))
    assert np.max(np.abs(got - np.array([3.0, -4.0]))) < 1e-9


def test_fd_hvp_linear_in_direction():
    rng = np.random.default_rng(11)
    for _ in range(10):
        h = rng.uniform(0.5, 3.0, size=6)
        x = rng.standard_normal(6)
        v1 = rng.standard_normal(6)
        v2 = rng.standard_normal(6)

        def grad(v):
            return h * v

        joint = finite_diff_hvp(grad, x, v1 + v2)
        parts = finite_diff_hvp(grad, x, v1) + finite_diff_hvp(grad, x, v2)
        assert np.linalg.norm(joint - parts) <= 1e-6 * max(np.linalg.norm(parts), 1.0)


def test_fd_hvp_length_mismatch():
    with pytest.raises(DimensionError):
        finite_diff_hvp(lambda v: v, np.zeros(3), np.zeros(2))


def test_hvp_default_eps_is_scale_aware():
    assert hvp_default_eps(np.array([2.0, -5.0])) == pytest.approx(6e-4)
    assert hvp_default_eps(np.zeros(3)) == pytest.approx(1e-4)


def test_param_vector_asarray_view():
    pv = flatten_params({"x": np.array([1.0, 2.0])})
    assert np.asarray(pv).tolist() == [1.0, 2.0]
