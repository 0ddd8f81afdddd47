import numpy as np
import pytest

from wcfr.nn import (
    AdamState,
    Mlp,
    ShapeError,
    adam_step,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_from_doc,
    mlp_gradient,
    mlp_to_doc,
    zero_grads,
)

from conftest import assert_grad_close, central_diff


def elu_ref(z):
    return z if z > 0 else np.expm1(z)


def scalar_forward(net, x_row):
    """Naive per-element forward pass (independent oracle)."""
    a = list(x_row)
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = []
        for j in range(w.shape[1]):
            s = b[j]
            for i in range(w.shape[0]):
                s += a[i] * w[i, j]
            z.append(s)
        last = k == len(net.weights) - 1
        act = net.output_activation if last else net.hidden_activation
        if act == "elu":
            a = [elu_ref(v) for v in z]
        elif act == "relu":
            a = [max(v, 0.0) for v in z]
        elif act == "logistic":
            a = [1.0 / (1.0 + np.exp(-v)) for v in z]
        else:
            a = z
    return np.array(a)


def test_zero_params_identity_output_gives_zeros():
    net = Mlp(
        [np.zeros((3, 4)), np.zeros((4, 2))],
        [np.zeros(4), np.zeros(2)],
        "elu",
        "identity",
    )
    x = np.arange(6.0).reshape(2, 3)
    assert np.all(mlp_forward(net, x) == 0.0)


def test_single_linear_layer_is_identity_map():
    net = Mlp([np.eye(3)], [np.zeros(3)], "elu", "identity")
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(mlp_forward(net, x), x)


@pytest.mark.parametrize("hidden_act", ["elu", "relu"])
@pytest.mark.parametrize("out_act", ["identity", "logistic"])
def test_forward_matches_scalar_loop_oracle(rng, hidden_act, out_act):
    net = init_mlp([4, 5, 3], hidden_act, out_act, rng)
    x = rng.normal(size=(7, 4))
    out = mlp_forward(net, x)
    for i in range(7):
        np.testing.assert_allclose(out[i], scalar_forward(net, x[i]), atol=1e-12, rtol=0)


def test_forward_deterministic(rng):
    net = init_mlp([6, 10, 2], "elu", "identity", rng)
    x = rng.normal(size=(5, 6))
    a = mlp_forward(net, x)
    b = mlp_forward(net, x)
    assert np.array_equal(a, b)


def test_forward_shape_error(rng):
    net = init_mlp([4, 3], "elu", "identity", rng)
    with pytest.raises(ShapeError):
        mlp_forward(net, np.zeros((2, 5)))


def test_linear_layer_gradient_closed_form(rng):
    net = Mlp([rng.normal(size=(3, 2))], [np.zeros(2)], "elu", "identity")
    x = rng.normal(size=(5, 3))
    upstream = np.ones((5, 2))
    grads, gx = mlp_gradient(net, x, upstream)
    np.testing.assert_allclose(grads.weights[0], x.T @ np.ones((5, 2)), atol=1e-14)
    np.testing.assert_allclose(grads.biases[0], np.full(2, 5.0), atol=1e-14)
    np.testing.assert_allclose(gx, upstream @ net.weights[0].T, atol=1e-14)


def test_zero_upstream_gives_zero_gradients(rng):
    net = init_mlp([3, 4, 2], "elu", "identity", rng)
    x = rng.normal(size=(6, 3))
    grads, gx = mlp_gradient(net, x, np.zeros((6, 2)))
    assert all(np.all(w == 0) for w in grads.weights)
    assert all(np.all(b == 0) for b in grads.biases)
    assert np.all(gx == 0)


def _away_from_relu_kink(net, x, margin=1e-3):
    """FD checks are only valid away from the ReLU nondifferentiability."""
    if net.hidden_activation != "relu":
        return True
    _, cache = mlp_forward_cached(net, x)
    return all(np.abs(z).min() > margin for _, z, _ in cache[:-1])


@pytest.mark.parametrize(
    "case,dims,hidden_act",
    [
        (0, [5, 20, 1], "elu"),
        (1, [5, 20, 20, 1], "elu"),
        (2, [4, 10, 10, 10, 2], "elu"),
        (3, [6, 10, 1], "relu"),
        (4, [3, 30, 3], "relu"),
        (5, [4, 20, 2], "elu"),
    ],
)
@pytest.mark.parametrize("out_act", ["identity", "logistic"])
def test_gradient_matches_finite_differences(case, dims, hidden_act, out_act):
    """Parameter and input gradients vs central differences at random points."""
    rng = np.random.default_rng(1000 + 10 * case + (out_act == "logistic"))
    done = 0
    while done < 10:
        net = init_mlp(dims, hidden_act, out_act, rng)
        x = rng.normal(size=(3, dims[0]))
        upstream = rng.normal(size=(3, dims[-1]))
        if not _away_from_relu_kink(net, x):
            continue
        done += 1
        grads, gx = mlp_gradient(net, x, upstream)

        theta0 = net.flatten()

        def f_theta(theta):
            pert = net.copy()
            pert.set_flat(theta)
            return float(np.sum(upstream * mlp_forward(pert, x)))

        assert_grad_close(grads.flatten(), central_diff(f_theta, theta0), rtol=1e-6)

        def f_x(xf):
            return float(np.sum(upstream * mlp_forward(net, xf.reshape(x.shape))))

        assert_grad_close(gx.ravel(), central_diff(f_x, x.ravel()), rtol=1e-6)


def test_elu_relu_continuity_and_elu_derivative_at_zero():
    from wcfr.nn import _ACT

    for name in ("elu", "relu"):
        act, _ = _ACT[name]
        eps = 1e-9
        vals = act(np.array([-eps, 0.0, eps]))
        assert abs(vals[1]) == 0.0
        assert abs(vals[0] - vals[1]) < 2e-9 and abs(vals[2] - vals[1]) < 2e-9
    _, elu_prime = _ACT["elu"]
    left = elu_prime(np.array([-1e-12]))[0]
    right = elu_prime(np.array([1e-12]))[0]
    at0 = elu_prime(np.array([0.0]))[0]
    assert abs(left - 1.0) < 1e-9 and right == 1.0 and at0 == 1.0
    _, relu_prime = _ACT["relu"]
    assert relu_prime(np.array([0.0]))[0] == 0.0


def test_adam_zero_gradient_from_fresh_state_leaves_params(rng):
    net = init_mlp([2, 3, 1], "elu", "identity", rng)
    before = net.flatten()
    state = init_adam(net, lr=0.01)
    adam_step(state, net, zero_grads(net))
    np.testing.assert_array_equal(net.flatten(), before)
    assert state.step == 1


def test_adam_zero_gradient_decays_moments(rng):
    net = init_mlp([2, 3, 1], "elu", "identity", rng)
    state = init_adam(net, lr=0.01)
    state.m_w[0][...] = 1.0
    state.v_w[0][...] = 1.0
    adam_step(state, net, zero_grads(net))
    np.testing.assert_allclose(state.m_w[0], 0.9)
    np.testing.assert_allclose(state.v_w[0], 0.999)


def test_adam_first_step_is_signed_lr(rng):
    net = init_mlp([2, 2], "elu", "identity", rng)
    before = net.weights[0].copy()
    g = zero_grads(net)
    g.weights[0][...] = np.array([[3.0, -2.0], [0.5, -7.0]])
    state = init_adam(net, lr=0.001)
    adam_step(state, net, g)
    step = net.weights[0] - before
    np.testing.assert_allclose(step, -0.001 * np.sign(g.weights[0]), rtol=1e-6)


def test_adam_matches_scalar_simulation_on_quadratic():
    """Independent scalar-loop Adam oracle on f(w) = w^2 from w = 1."""
    lr, b1, b2, eps = 0.001, 0.9, 0.999, 1e-8
    w_ref, m, v = 1.0, 0.0, 0.0
    ref_path = []
    for t in range(1, 101):
        g = 2.0 * w_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w_ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        ref_path.append(w_ref)

    net = Mlp([np.array([[1.0]])], [np.zeros(1)], "elu", "identity")
    state = init_adam(net, lr=lr)
    path = []
    for _ in range(100):
        g = zero_grads(net)
        g.weights[0][0, 0] = 2.0 * net.weights[0][0, 0]
        adam_step(state, net, g)
        path.append(net.weights[0][0, 0])
    np.testing.assert_allclose(path, ref_path, rtol=1e-12)
    diffs = np.diff(np.abs(np.array(path)))
    assert np.all(diffs < 0), "|w| must decrease monotonically on w^2"


def test_adam_rejects_non_finite_gradient(rng):
    net = init_mlp([2, 2], "elu", "identity", rng)
    before = net.flatten()
    state = init_adam(net)
    g = zero_grads(net)
    g.weights[0][0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        adam_step(state, net, g)
    np.testing.assert_array_equal(net.flatten(), before)
    assert state.step == 0


def test_mlp_doc_roundtrip(rng):
    net = init_mlp([3, 7, 2], "relu", "logistic", rng)
    clone = mlp_from_doc(mlp_to_doc(net))
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(mlp_forward(net, x), mlp_forward(clone, x))
