import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdtpf.neural import (
    AdamState,
    ControlNetworks,
    MlpParams,
    adam_step,
    checkpoint_text,
    default_width,
    init_networks,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
)


def small_mlp(rng, dims=(3, 5, 4, 2), slope=0.01):
    weights = [rng.standard_normal((a, b)) * 0.5 for a, b in zip(dims[:-1], dims[1:])]
    biases = [rng.standard_normal(b) * 0.1 for b in dims[1:]]
    return MlpParams(weights=weights, biases=biases, slope=slope)


def reference_forward(params, x):
    """Independent per-sample re-implementation with plain loops."""
    outs = []
    n_layers = len(params.weights)
    for row in np.atleast_2d(x):
        a = row.astype(float)
        for l, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = a @ w + b
            if l < n_layers - 1:
                a = np.array([zz if zz >= 0 else params.slope * zz for zz in z])
            else:
                a = z
        outs.append(a)
    return np.array(outs)


# ---- forward --------------------------------------------------------------


def test_forward_matches_reference_loops():
    rng = np.random.default_rng(0)
    params = small_mlp(rng)
    x = rng.standard_normal((17, 3))
    out, _ = mlp_forward(params, x)
    np.testing.assert_allclose(out, reference_forward(params, x), atol=1e-13)


def test_forward_zero_weights_give_bias_chain():
    params = MlpParams(
        weights=[np.zeros((2, 3)), np.zeros((3, 1))],
        biases=[np.full(3, -1.0), np.array([0.25])],
        slope=0.01,
    )
    out, _ = mlp_forward(params, np.ones((4, 2)))
    # hidden activation is leaky(-1) = -0.01, killed by zero second layer
    np.testing.assert_allclose(out, np.full((4, 1), 0.25), atol=1e-15)


def test_single_unit_negative_branch():
    params = MlpParams(
        weights=[np.array([[1.0]]), np.array([[1.0]])],
        biases=[np.zeros(1), np.zeros(1)],
        slope=0.01,
    )
    out, cache = mlp_forward(params, np.array([[-1.0]]))
    acts, pre = cache
    assert pre[0][0, 0] == -1.0
    assert acts[1][0, 0] == -0.01
    assert out[0, 0] == -0.01


def test_leaky_relu_positive_branch_at_zero():
    # gradient at exactly zero pre-activation uses the positive branch
    params = MlpParams(
        weights=[np.array([[1.0]]), np.array([[2.0]])],
        biases=[np.zeros(1), np.zeros(1)],
        slope=0.01,
    )
    out, cache = mlp_forward(params, np.array([[0.0]]))
    grads = mlp_backward(params, cache, np.array([[1.0]]))
    # d out / d b1 = 2.0 * leaky'(0) = 2.0, not 0.02
    assert grads.biases[0][0] == pytest.approx(2.0)


def test_forward_batch_shapes():
    rng = np.random.default_rng(1)
    params = small_mlp(rng)
    out, _ = mlp_forward(params, rng.standard_normal((6, 7, 3)))
    assert out.shape == (6, 7, 2)
    with pytest.raises(ValueError):
        mlp_forward(params, rng.standard_normal((5, 4)))


# ---- backward vs finite differences ---------------------------------------


def loss_for_fd(params, x, cot):
    out, _ = mlp_forward(params, x)
    return float(np.sum(out * cot))


def test_backward_matches_finite_differences_many_instances():
    # 20 random instances, layer-level relative error below 1e-4
    rng = np.random.default_rng(7)
    for trial in range(20):
        dims = (rng.integers(1, 5), rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 4))
        params = small_mlp(rng, dims=tuple(int(v) for v in dims))
        x = rng.standard_normal((9, params.in_dim))
        cot = rng.standard_normal((9, params.out_dim))
        out, cache = mlp_forward(params, x)
        grads = mlp_backward(params, cache, cot)
        h = 1e-6
        for l in range(len(params.weights)):
            for arrs, garrs in ((params.weights, grads.weights), (params.biases, grads.biases)):
                a = arrs[l]
                fd = np.zeros_like(a)
                it = np.nditer(a, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = a[idx]
                    a[idx] = orig + h
                    up = loss_for_fd(params, x, cot)
                    a[idx] = orig - h
                    dn = loss_for_fd(params, x, cot)
                    a[idx] = orig
                    fd[idx] = (up - dn) / (2 * h)
                denom = max(np.linalg.norm(fd), 1e-12)
                rel = np.linalg.norm(garrs[l] - fd) / denom
                assert rel < 1e-4, f"trial {trial} layer {l}: rel err {rel}"


def test_backward_zero_cotangent_gives_zero_grads():
    rng = np.random.default_rng(3)
    params = small_mlp(rng)
    x = rng.standard_normal((5, 3))
    _, cache = mlp_forward(params, x)
    grads = mlp_backward(params, cache, np.zeros((5, 2)))
    for g in grads.weights + grads.biases:
        assert np.all(g == 0.0)


def test_backward_bias_gradient_is_cotangent_sum():
    # the last-layer bias gradient is exactly the summed cotangent
    rng = np.random.default_rng(4)
    params = small_mlp(rng)
    x = rng.standard_normal((8, 3))
    cot = rng.standard_normal((8, 2))
    _, cache = mlp_forward(params, x)
    grads = mlp_backward(params, cache, cot)
    np.testing.assert_allclose(grads.biases[-1], cot.sum(axis=0), atol=1e-13)


def test_backward_is_additive_over_batch():
    rng = np.random.default_rng(5)
    params = small_mlp(rng)
    x = rng.standard_normal((6, 3))
    cot = rng.standard_normal((6, 2))
    _, cache = mlp_forward(params, x)
    whole = mlp_backward(params, cache, cot)
    parts = None
    for i in range(6):
        _, ci = mlp_forward(params, x[i : i + 1])
        gi = mlp_backward(params, ci, cot[i : i + 1])
        parts = gi if parts is None else parts.add_(gi)
    for a, b in zip(whole.weights + whole.biases, parts.weights + parts.biases):
        np.testing.assert_allclose(a, b, atol=1e-12)


# ---- Adam -----------------------------------------------------------------


def test_adam_first_step_hand_value():
    # unit gradient, lr 0.01: m_hat = v_hat = 1, update = -lr / (1 + eps)
    p = [np.array([1.0])]
    g = [np.array([1.0])]
    state = AdamState.create(p, learning_rate=0.01)
    out = adam_step(state, p, g)
    assert out[0][0] == pytest.approx(1.0 - 0.01 / (1.0 + 1e-8), abs=1e-15)
    assert state.step == 1


def test_adam_zero_gradient_is_noop():
    p = [np.array([0.4, -0.2])]
    state = AdamState.create(p, learning_rate=0.05)
    out = adam_step(state, p, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_constant_gradient_moves_monotonically():
    p = [np.array([0.0])]
    state = AdamState.create(p, learning_rate=0.01)
    vals = [0.0]
    for _ in range(30):
        p = adam_step(state, p, [np.array([2.5])])
        vals.append(p[0][0])
    diffs = np.diff(vals)
    assert np.all(diffs < 0.0)  # always against the gradient sign


def test_adam_invariant_to_array_partitioning():
    rng = np.random.default_rng(6)
    p_split = [rng.standard_normal(4), rng.standard_normal((2, 3))]
    g_split = [rng.standard_normal(4), rng.standard_normal((2, 3))]
    p_flat = [np.concatenate([p_split[0], p_split[1].ravel()])]
    g_flat = [np.concatenate([g_split[0], g_split[1].ravel()])]
    s1 = AdamState.create(p_split, 0.03)
    s2 = AdamState.create(p_flat, 0.03)
    for _ in range(5):
        p_split = adam_step(s1, p_split, g_split)
        p_flat = adam_step(s2, p_flat, g_flat)
    merged = np.concatenate([p_split[0], p_split[1].ravel()])
    np.testing.assert_allclose(merged, p_flat[0], atol=1e-15)


def test_adam_rejects_mismatched_lists():
    p = [np.zeros(2)]
    state = AdamState.create(p, 0.01)
    with pytest.raises(ValueError):
        adam_step(state, p, [np.zeros(2), np.zeros(1)])


# ---- init and network container -------------------------------------------


def test_width_policy_is_affine_in_dim():
    assert default_width(1) == 20
    assert default_width(32) == 330
    assert default_width(32) - default_width(1) == 10 * 31


def test_init_networks_shapes_and_determinism():
    nets = init_networks(2, 2, np.random.default_rng(42))
    assert nets.n0.in_dim == 4 and nets.n0.out_dim == 1
    assert nets.n.in_dim == 5 and nets.n.out_dim == 2
    assert nets.n0.hidden_widths == [30, 30]
    again = init_networks(2, 2, np.random.default_rng(42))
    for a, b in zip(nets.parameters(), again.parameters()):
        assert np.array_equal(a, b)


def test_init_bounds_follow_fan_in():
    nets = init_networks(1, 1, np.random.default_rng(0))
    w0 = nets.n0.weights[0]
    assert np.max(np.abs(w0)) <= 1.0 / np.sqrt(2)
    w1 = nets.n0.weights[1]
    assert np.max(np.abs(w1)) <= 1.0 / np.sqrt(20)


def test_initial_outputs_are_moderate():
    # |N(x, y, t)| std over typical training inputs in [0.01, 10]
    nets = init_networks(1, 1, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    x = rng.normal(0.0, np.sqrt(0.5), size=(5000, 1))
    y = rng.normal(0.0, np.sqrt(0.75), size=(5000, 1))
    vals = nets.n_eval(x, y, 0.5)
    assert 0.01 <= np.std(vals) <= 10.0
    v0 = nets.initial_value(x, y)
    assert v0.shape == (5000,)
    assert 0.01 <= np.std(v0) <= 10.0


def test_control_is_negated_field():
    nets = init_networks(2, 2, np.random.default_rng(5))
    x = np.random.default_rng(6).standard_normal((7, 2))
    y = np.random.default_rng(7).standard_normal((7, 2))
    np.testing.assert_array_equal(nets.control(x, y, 0.3), -nets.n_eval(x, y, 0.3))


def test_time_feature_is_scaled_by_horizon():
    nets = init_networks(1, 1, np.random.default_rng(8), horizon=2.0)
    x = np.zeros((1, 1))
    y = np.zeros((1, 1))
    feats = nets._features(x, y, 1.0)
    assert feats[0, -1] == 0.5


def test_with_parameters_round_trip():
    nets = init_networks(1, 2, np.random.default_rng(9))
    flat = nets.parameters()
    rebuilt = nets.with_parameters([a.copy() for a in flat])
    x = np.random.default_rng(10).standard_normal((4, 1))
    y = np.random.default_rng(11).standard_normal((4, 2))
    np.testing.assert_array_equal(rebuilt.n_eval(x, y, 0.1), nets.n_eval(x, y, 0.1))


@given(dim=st.integers(1, 4), obs_dim=st.integers(1, 4))
@settings(max_examples=10, deadline=None)
def test_network_container_validates_dims(dim, obs_dim):
    nets = init_networks(dim, obs_dim, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ControlNetworks(n0=nets.n, n=nets.n, dim=dim, obs_dim=obs_dim)


# ---- checkpoints ----------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    nets = init_networks(2, 1, np.random.default_rng(13))
    path = tmp_path / "ck.json"
    save_checkpoint(path, nets, metadata={"model": "ou", "sigma_y": 0.5})
    loaded, meta = load_checkpoint(path)
    assert meta == {"model": "ou", "sigma_y": 0.5}
    assert loaded.dim == 2 and loaded.obs_dim == 1
    for a, b in zip(nets.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    # serialising the loaded networks reproduces the byte stream
    assert checkpoint_text(loaded, meta) == checkpoint_text(nets, {"model": "ou", "sigma_y": 0.5})


def test_checkpoint_is_stable_under_rewrite(tmp_path):
    nets = init_networks(1, 1, np.random.default_rng(14))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(p1, nets)
    save_checkpoint(p2, nets)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"format": "something-else", "version": 1}')
    with pytest.raises(ValueError):
        load_checkpoint(path)
