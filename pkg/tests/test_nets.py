"""Network substrate: forward pass, manual gradients, Adam, checkpoints."""

import numpy as np
import pytest

from tactilerl import nets


def _zero_net(sizes, head="linear"):
    net = nets.Network.init(sizes, rng=np.random.default_rng(0), head=head)
    for p in net.params():
        p[...] = 0.0
    return net


def test_forward_shapes_and_zero_net() -> None:
    net = _zero_net((3, 5, 2))
    out = net.forward(np.array([1.0, -2.0, 0.5]))
    assert out.shape == (2,)
    # tanh(0) = 0 through every layer, identity head
    assert np.all(out == 0.0)


def test_forward_single_linear_layer() -> None:
    net = _zero_net((2, 2))
    net.params()[0][...] = np.eye(2)
    x = np.array([0.3, -1.7])
    assert np.array_equal(net.forward(x), x)


def test_forward_batch_matches_single() -> None:
    # BLAS may pick different kernels per batch shape, so this is approx;
    # bitwise equality is only promised for identical call shapes
    net = nets.Network.init((4, 8, 3), rng=np.random.default_rng(2))
    xs = np.random.default_rng(3).normal(size=(11, 4))
    batch = net.forward_batch(xs)
    for i in range(11):
        assert batch[i] == pytest.approx(net.forward(xs[i]), rel=1e-12, abs=1e-15)


def test_forward_deterministic_bitwise() -> None:
    a = nets.Network.init((3, 6, 6, 2), rng=np.random.default_rng(42))
    b = nets.Network.init((3, 6, 6, 2), rng=np.random.default_rng(42))
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert np.array_equal(a.forward_batch(x), b.forward_batch(x))


def test_different_seeds_differ() -> None:
    a = nets.Network.init((3, 6, 2), rng=np.random.default_rng(0))
    b = nets.Network.init((3, 6, 2), rng=np.random.default_rng(1))
    assert any(not np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_gaussian_head_requires_even_output() -> None:
    with pytest.raises(ValueError):
        nets.Network.init((3, 4, 5), rng=np.random.default_rng(0), head="gaussian")


def test_logvar_squash_bounds_and_midpoint() -> None:
    # sigmoid saturates to exact 0/1 for huge raws, so the closed interval is
    # the guarantee; the interior is strict for any plausible pre-activation
    raw = np.linspace(-1e6, 1e6, 10001)
    lv = nets.squash_logvar(raw)
    assert np.all(lv >= nets.LOGVAR_MIN)
    assert np.all(lv <= nets.LOGVAR_MAX)
    assert np.all(np.isfinite(np.exp(lv)))
    assert np.all(np.exp(lv) > 0.0)
    moderate = nets.squash_logvar(np.linspace(-60.0, 60.0, 1001))
    assert np.all(moderate > nets.LOGVAR_MIN)
    assert np.all(moderate < nets.LOGVAR_MAX)
    mid = nets.squash_logvar(np.array([0.0]))[0]
    assert mid == pytest.approx(0.5 * (nets.LOGVAR_MIN + nets.LOGVAR_MAX))


def test_logvar_squash_roundtrip() -> None:
    lv = np.linspace(-5.9, 1.9, 257)
    back = nets.squash_logvar(nets.unsquash_logvar(lv))
    assert np.max(np.abs(back - lv)) < 1e-9


def test_gaussian_head_variances_finite_for_wild_inputs() -> None:
    net = nets.Network.init((2, 16, 4), rng=np.random.default_rng(7), head="gaussian")
    for p in net.params():
        p *= 50.0  # exaggerate pre-activations
    xs = np.random.default_rng(8).normal(scale=100.0, size=(64, 2))
    mean, logvar = nets.split_gaussian(net.forward_batch(xs))
    assert np.all(np.isfinite(mean))
    assert np.all(logvar >= nets.LOGVAR_MIN)
    assert np.all(logvar <= nets.LOGVAR_MAX)
    assert np.all(np.exp(logvar) > 0.0)
    assert np.all(np.isfinite(np.exp(logvar)))


def test_gradcheck_zero_net_zero_target_is_zero() -> None:
    net = _zero_net((3, 4, 2))
    err = nets.finite_diff_check(net, np.zeros(3), np.zeros(2))
    assert err == 0.0


def test_gradcheck_linear_head() -> None:
    for seed in range(5):
        net = nets.Network.init((3, 8, 8, 2), rng=np.random.default_rng(seed))
        x = np.random.default_rng(100 + seed).normal(size=3)
        t = np.random.default_rng(200 + seed).normal(size=2)
        assert nets.finite_diff_check(net, x, t) < 1e-4


def test_gradcheck_gaussian_head() -> None:
    for seed in range(5):
        net = nets.Network.init((3, 8, 8, 4), rng=np.random.default_rng(seed), head="gaussian")
        x = np.random.default_rng(300 + seed).normal(size=3)
        t = np.random.default_rng(400 + seed).normal(size=2)
        assert nets.finite_diff_check(net, x, t) < 1e-4


def test_gradcheck_many_random_shapes() -> None:
    rng = np.random.default_rng(2024)
    for trial in range(100):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 7))]
        for _ in range(depth):
            sizes.append(int(rng.integers(1, 9)))
        head = "linear" if trial % 2 == 0 else "gaussian"
        if head == "gaussian" and sizes[-1] % 2 == 1:
            sizes[-1] += 1
        net = nets.Network.init(sizes, rng=np.random.default_rng(trial), head=head)
        tdim = sizes[-1] // 2 if head == "gaussian" else sizes[-1]
        x = rng.normal(size=sizes[0])
        t = rng.normal(size=tdim)
        assert nets.finite_diff_check(net, x, t) < 1e-4


def test_gradcheck_catches_corrupted_backward(monkeypatch) -> None:
    # a deliberately wrong tanh derivative must blow past the 1e-1 alarm level
    monkeypatch.setattr(nets, "_tanh_deriv", lambda a: (1.0 - a * a) * 0.5)
    net = nets.Network.init((3, 8, 8, 2), rng=np.random.default_rng(3))
    err = nets.finite_diff_check(net, np.array([0.3, -0.2, 0.9]), np.array([0.1, 0.4]))
    assert err > 1e-1


def test_adam_quadratic_convergence() -> None:
    # minimize (b - 1.5)^2 over the single bias, input pinned at zero
    net = _zero_net((1, 1))
    opt = nets.AdamState.for_network(net, lr=1e-3)
    x = np.array([[0.0]])
    t = np.array([[1.5]])
    w = np.ones((1, 1))
    hit = None
    for step in range(5000):
        loss = nets.net_train_step_arrays(net, opt, x, t, w)
        if loss <= 1e-3 and hit is None:
            hit = step
    assert hit is not None and hit <= 4000
    assert float(nets.batch_losses(net, x, t, w)[0]) <= 1e-3


def test_xor_training() -> None:
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    T = np.array([[0.0], [1.0], [1.0], [0.0]])
    W = np.ones((4, 1))
    net = nets.Network.init((2, 4, 1), rng=np.random.default_rng(0))
    opt = nets.AdamState.for_network(net, lr=1e-2)
    for _ in range(5000):
        nets.net_train_step_arrays(net, opt, X, T, W)
    preds = net.forward_batch(X)
    assert np.max(np.abs(preds - T)) < 0.1


def test_full_batch_loss_monotone_to_least_squares_floor() -> None:
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 3))
    y = X @ np.array([0.7, -1.2, 0.4]) + 0.3 + 0.1 * rng.normal(size=60)
    net = nets.Network.init((3, 1), rng=np.random.default_rng(1))
    opt = nets.AdamState.for_network(net, lr=1e-2)
    T = y.reshape(-1, 1)
    W = np.ones((60, 1))
    losses = [nets.net_train_step_arrays(net, opt, X, T, W) for _ in range(1200)]
    for i in range(10, len(losses) - 1):
        assert losses[i + 1] <= losses[i] + 1e-12
    A = np.hstack([X, np.ones((60, 1))])
    _, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    floor = res[0] / 60
    final = float(nets.batch_losses(net, X, T, W).mean())
    assert final == pytest.approx(floor, abs=1e-6)
    assert final >= floor - 1e-9


def test_train_step_returns_pre_update_loss() -> None:
    net = nets.Network.init((2, 5, 2), rng=np.random.default_rng(9))
    opt = nets.AdamState.for_network(net)
    X = np.random.default_rng(11).normal(size=(8, 2))
    T = np.random.default_rng(12).normal(size=(8, 2))
    W = np.ones((8, 2))
    pre = float(nets.batch_losses(net, X, T, W).mean())
    assert nets.net_train_step_arrays(net, opt, X, T, W) == pre


def test_train_step_zero_gradient_leaves_params() -> None:
    # zero net, zero input, zero target: loss and every gradient are exactly zero
    net = _zero_net((2, 4, 1))
    opt = nets.AdamState.for_network(net)
    before = [p.copy() for p in net.params()]
    loss = nets.net_train_step_arrays(net, opt, np.zeros((3, 2)), np.zeros((3, 1)), np.ones((3, 1)))
    assert loss == 0.0
    for a, b in zip(before, net.params()):
        assert np.array_equal(a, b)


def test_lr_zero_keeps_params_bitwise() -> None:
    net = nets.Network.init((3, 6, 2), rng=np.random.default_rng(4))
    opt = nets.AdamState.for_network(net, lr=0.0)
    before = [p.copy() for p in net.params()]
    X = np.random.default_rng(5).normal(size=(10, 3))
    T = np.random.default_rng(6).normal(size=(10, 2))
    for _ in range(3):
        nets.net_train_step_arrays(net, opt, X, T, np.ones((10, 2)))
    for a, b in zip(before, net.params()):
        assert np.array_equal(a, b)


def test_nan_sample_reported_with_batch_index() -> None:
    net = nets.Network.init((2, 4, 1), rng=np.random.default_rng(5))
    opt = nets.AdamState.for_network(net)
    before = [p.copy() for p in net.params()]
    X = np.array([[0.1, 0.2], [np.nan, 0.5], [0.3, 0.4]])
    with pytest.raises(nets.NonFiniteError) as exc:
        nets.net_train_step_arrays(net, opt, X, np.zeros((3, 1)), np.ones((3, 1)))
    assert exc.value.batch_index == 1
    assert exc.value.stage == "loss"
    # a failed step must not touch parameters or optimizer state
    for a, b in zip(before, net.params()):
        assert np.array_equal(a, b)
    assert opt.t == 0


def test_inf_target_reported() -> None:
    net = nets.Network.init((2, 4, 2), rng=np.random.default_rng(6))
    opt = nets.AdamState.for_network(net)
    T = np.zeros((2, 2))
    T[0, 1] = np.inf
    with pytest.raises(nets.NonFiniteError) as exc:
        nets.net_train_step_arrays(net, opt, np.zeros((2, 2)), T, np.ones((2, 2)))
    assert exc.value.batch_index == 0


def test_gaussian_nll_matches_hand_formula() -> None:
    # single 1-d gaussian sample evaluated against the closed form
    net = _zero_net((1, 2), head="gaussian")
    net.params()[1][...] = np.array([0.5, nets.unsquash_logvar(np.array([-1.0]))[0]])
    x = np.array([[0.0]])
    t = np.array([[1.2]])
    loss = float(nets.batch_losses(net, x, t, np.ones((1, 1)))[0])
    lv = -1.0
    expect = 0.5 * (lv + (1.2 - 0.5) ** 2 * np.exp(-lv) + np.log(2.0 * np.pi))
    assert loss == pytest.approx(expect, abs=1e-12)


def test_gaussian_training_recovers_mean_and_variance() -> None:
    rng = np.random.default_rng(21)
    X = np.zeros((512, 1))
    T = 0.7 + 0.3 * rng.normal(size=(512, 1))
    net = nets.Network.init((1, 8, 2), rng=np.random.default_rng(2), head="gaussian")
    opt = nets.AdamState.for_network(net, lr=1e-2)
    W = np.ones((512, 1))
    for _ in range(2000):
        nets.net_train_step_arrays(net, opt, X, T, W)
    mean, logvar = nets.split_gaussian(net.forward(np.zeros(1)))
    assert mean[0] == pytest.approx(float(T.mean()), abs=0.02)
    assert np.exp(logvar[0]) == pytest.approx(float(T.var()), rel=0.15)


def test_triples_interface_matches_arrays() -> None:
    net = nets.Network.init((2, 4, 2), rng=np.random.default_rng(8))
    net2 = nets.Network.from_doc(net.to_doc())
    opt = nets.AdamState.for_network(net)
    opt2 = nets.AdamState.for_network(net2)
    X = np.random.default_rng(9).normal(size=(4, 2))
    T = np.random.default_rng(10).normal(size=(4, 2))
    batch = [(X[i], T[i], 1.0) for i in range(4)]
    loss_a = nets.net_train_step(net, opt, batch)
    loss_b = nets.net_train_step_arrays(net2, opt2, X, T, np.ones((4, 2)))
    assert loss_a == loss_b
    for a, b in zip(net.params(), net2.params()):
        assert np.array_equal(a, b)


def test_checkpoint_roundtrip_bitwise(tmp_path) -> None:
    net = nets.Network.init((3, 7, 4), rng=np.random.default_rng(13), head="gaussian")
    opt = nets.AdamState.for_network(net, lr=3e-4)
    X = np.random.default_rng(14).normal(size=(6, 3))
    T = np.random.default_rng(15).normal(size=(6, 2))
    for _ in range(5):
        nets.net_train_step_arrays(net, opt, X, T, np.ones((6, 2)))
    path = tmp_path / "net.json"
    nets.save_doc(path, {"net": net.to_doc(), "opt": opt.to_doc()})
    doc = nets.load_doc(path)
    net2 = nets.Network.from_doc(doc["net"])
    opt2 = nets.AdamState.from_doc(doc["opt"])
    for a, b in zip(net.params(), net2.params()):
        assert np.array_equal(a, b)
    assert opt2.t == opt.t
    assert opt2.lr == opt.lr
    # continued training stays bit-identical on both copies
    for _ in range(3):
        la = nets.net_train_step_arrays(net, opt, X, T, np.ones((6, 2)))
        lb = nets.net_train_step_arrays(net2, opt2, X, T, np.ones((6, 2)))
        assert la == lb
    x = np.random.default_rng(16).normal(size=3)
    assert np.array_equal(net.forward(x), net2.forward(x))


def test_checkpoint_preserves_awkward_floats(tmp_path) -> None:
    vals = np.array([np.pi / 7.0, 1e-300, -3.3333333333333335, 0.1 + 0.2])
    doc = nets.doc_from_arrays({"v": vals})
    path = tmp_path / "arrs.json"
    nets.save_doc(path, doc)
    back = nets.arrays_from_doc(nets.load_doc(path))
    assert np.array_equal(back["v"], vals)


def test_doc_rejects_shape_mismatch() -> None:
    net = nets.Network.init((2, 3, 1), rng=np.random.default_rng(0))
    doc = net.to_doc()
    doc["tensors"]["w0"]["data"] = [[0.0, 0.0]]
    with pytest.raises(ValueError):
        nets.Network.from_doc(doc)
