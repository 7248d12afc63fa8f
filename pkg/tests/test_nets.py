import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import numeric_gradient, relative_error, scalar_adam
from vpoc import nets
from vpoc.errors import FormatError, NumericalError, ShapeError, StateError
from vpoc.nets import (
    ConvSpec,
    DenseSpec,
    NetConfig,
    NetworkParams,
    ObsSpec,
    OptimizerState,
    adam_step,
    add_l2,
    backward,
    build_actor,
    build_critic,
    build_network,
    check_compatible,
    conv_spatial_sizes,
    forward,
    load_checkpoint,
    polyak_update,
    save_checkpoint,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


def tiny_net(image=(2, 7, 7), vector=3, action=2, out=2, act="tanh", seed=0):
    return build_network(image, vector, action, 3, 2, (5, 4), out, act, 0.7, _rng(seed), np.float64, final_init=0.5)


def tiny_inputs(net, batch=3, seed=1):
    rng = _rng(seed)
    a = net.arch
    d = {}
    if a.image_shape:
        d["image"] = rng.normal(size=(batch, *a.image_shape))
    if a.vector_dim:
        d["vector"] = rng.normal(size=(batch, a.vector_dim))
    if a.action_dim:
        d["action"] = rng.normal(size=(batch, a.action_dim))
    return d


def check_gradients(net, inputs, seed=2):
    """Returns (max param relative error, {input: relative error})."""
    out, cache = forward(net, inputs)
    proj = _rng(seed).normal(size=out.shape)
    grads, in_grads = backward(net, cache, proj)

    def loss():
        return float(np.sum(forward(net, inputs)[0] * proj))

    num = numeric_gradient(loss, net.tensors)
    param_err = max(relative_error(g, n) for g, n in zip(grads, num))
    in_err = {}
    for k, arr in inputs.items():
        (n,) = numeric_gradient(loss, [arr])
        in_err[k] = relative_error(in_grads[k], n)
    return param_err, in_err


# -- shapes -------------------------------------------------------------------


def test_conv_chain_sizes():
    assert conv_spatial_sizes(64) == [32, 16, 8, 4, 2]
    assert conv_spatial_sizes(800) == [400, 200, 100, 50, 25]


def test_built_architectures():
    cfg = NetConfig()
    actor = build_actor(ObsSpec((3, 64, 64), 3), cfg, _rng())
    critic = build_critic(ObsSpec((3, 64, 64), 3), cfg, _rng())
    assert len(actor.arch.convs) == 5 and actor.arch.convs[0].out_channels == 8
    assert [d.out_dim for d in actor.arch.denses] == [200, 200, 2]
    assert actor.arch.denses[0].in_dim == 8 * 2 * 2 + 3
    assert critic.arch.denses[0].in_dim == 8 * 2 * 2 + 3 + 2
    assert critic.arch.denses[-1].out_dim == 1 and critic.arch.denses[-1].activation == "linear"
    feats = build_actor(ObsSpec(None, 15), cfg, _rng())
    assert feats.arch.convs == () and feats.arch.denses[0].in_dim == 15


def test_initialisation_bounds():
    net = build_critic(ObsSpec(None, 15), NetConfig(), _rng())
    w0, w_last = net.tensors[0], net.tensors[-2]
    assert np.abs(w0).max() <= 1 / np.sqrt(17) and np.abs(w0).max() > 0.5 / np.sqrt(17)
    assert np.abs(w_last).max() <= 3e-3


@given(st.integers(0, 2**31), st.floats(-1e3, 1e3))
def test_actor_output_is_bounded(seed, scale):
    cfg = NetConfig(hidden=(16, 16), a_max=0.15)
    actor = build_actor(ObsSpec(None, 5), cfg, _rng(seed))
    actor.tensors[-2] *= 1e4  # push into saturation
    out, _ = forward(actor, {"vector": scale * _rng(seed + 1).normal(size=(4, 5))})
    assert np.all(np.abs(out) <= 0.15 + 1e-7)


# -- forward --------------------------------------------------------------------


def test_zero_network_outputs_zero():
    net = tiny_net(image=None, action=0, act="linear")
    for t in net.tensors:
        t[...] = 0
    assert not forward(net, tiny_inputs(net))[0].any()


def test_identity_dense_layer():
    arch = nets.Architecture(None, 4, 0, (), (DenseSpec(4, 4, "linear"),))
    net = NetworkParams(arch, [np.eye(4), np.zeros(4)])
    x = _rng().normal(size=(3, 4))
    assert np.array_equal(forward(net, {"vector": x})[0], x)


def test_dense_stack_matches_straight_line_arithmetic():
    net = tiny_net(image=None, vector=6, action=2, out=3, act="linear")
    inp = tiny_inputs(net, batch=5)
    t = net.tensors
    h = np.concatenate([inp["vector"], inp["action"]], axis=1)
    h = np.tanh(h @ t[0] + t[1])
    h = np.tanh(h @ t[2] + t[3])
    ref = (h @ t[4] + t[5]) * 0.7
    assert np.max(np.abs(forward(net, inp)[0] - ref)) < 1e-12


def test_conv_matches_direct_loops():
    rng = _rng(3)
    x = rng.normal(size=(2, 3, 5, 6))
    spec = ConvSpec(3, 4)
    w = rng.normal(size=(27, 4))
    b = rng.normal(size=4)
    out, _ = nets.conv_forward(x, w, b, spec)
    # total pad is (out - 1) * 2 + 3 - n, split with the extra row or column at the end
    ho, wo = 3, 3
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 1)))
    wk = w.reshape(3, 3, 3, 4)
    ref = np.zeros((2, 4, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
            ref[:, :, i, j] = np.einsum("bcij,cijo->bo", patch, wk) + b
    assert out.shape == (2, 4, 3, 3)
    assert np.max(np.abs(out - ref)) < 1e-12


def test_wrong_input_shape_is_rejected():
    net = tiny_net()
    bad = tiny_inputs(net)
    bad["vector"] = bad["vector"][:, :2]
    with pytest.raises(ShapeError):
        forward(net, bad)
    with pytest.raises(ShapeError):
        forward(net, {"vector": np.zeros((1, 3))})


def test_forward_is_pure():
    net = tiny_net()
    inp = tiny_inputs(net)
    a, b = forward(net, inp)[0], forward(net, inp)[0]
    assert np.array_equal(a, b)


# -- backward -------------------------------------------------------------------


@pytest.mark.parametrize(
    "image,vector,action,act",
    [((2, 7, 7), 3, 2, "tanh"), ((1, 4, 5), 0, 0, "linear"), (None, 4, 2, "linear"), (None, 3, 0, "tanh")],
)
def test_gradients_match_finite_differences(image, vector, action, act):
    net = tiny_net(image, vector, action, act=act)
    param_err, in_err = check_gradients(net, tiny_inputs(net))
    assert param_err < 1e-6
    assert all(e < 1e-6 for e in in_err.values())


def test_zero_output_gradient_gives_zero_gradients():
    net = tiny_net()
    out, cache = forward(net, tiny_inputs(net))
    grads, ig = backward(net, cache, np.zeros_like(out))
    assert all(not g.any() for g in grads) and all(not g.any() for g in ig.values())


def test_stale_cache_is_rejected():
    net = tiny_net()
    out, cache = forward(net, tiny_inputs(net))
    adam_step(OptimizerState.for_params(net, 1e-3), net, [np.ones_like(t) for t in net.tensors])
    with pytest.raises(StateError):
        backward(net, cache, np.ones_like(out))


def test_l2_adds_exactly_lambda_w():
    net = tiny_net()
    out, cache = forward(net, tiny_inputs(net))
    grads, _ = backward(net, cache, np.ones_like(out))
    reg = add_l2(net, grads, 0.01)
    for i, (g, r) in enumerate(zip(grads, reg)):
        expected = 0.01 * net.tensors[i] if i % 2 == 0 else 0.0
        assert np.allclose(r - g, expected, rtol=0, atol=1e-15)
    assert nets.l2_penalty(net, 0.01) == pytest.approx(0.005 * sum(np.sum(net.tensors[i] ** 2) for i in net.weight_indices()))


# -- Adam -----------------------------------------------------------------------


def test_adam_first_step_closed_form():
    arch = nets.Architecture(None, 1, 0, (), (DenseSpec(1, 1, "linear"),))
    p = NetworkParams(arch, [np.array([[0.0]]), np.array([0.0])])
    st_ = OptimizerState.for_params(p, 0.01)
    g = 3.0
    adam_step(st_, p, [np.array([[g]]), np.array([0.0])])
    # m_hat = g, v_hat = g^2
    assert p.tensors[0][0, 0] == pytest.approx(-0.01 * g / (abs(g) + 1e-8), rel=1e-15)
    assert p.tensors[1][0] == 0.0 and st_.step == 1


def test_adam_matches_scalar_oracle_on_quadratic():
    arch = nets.Architecture(None, 1, 0, (), (DenseSpec(1, 1, "linear"),))
    p = NetworkParams(arch, [np.array([[2.0]]), np.array([-1.0])])
    st_ = OptimizerState.for_params(p, 1e-2)
    ref_w = scalar_adam(2.0, lambda x: 2 * (x - 0.5), 1000, 1e-2)
    ref_b = scalar_adam(-1.0, lambda x: 0.3, 1000, 1e-2)
    worst = 0.0
    for k in range(1000):
        w = p.tensors[0][0, 0]
        adam_step(st_, p, [np.array([[2 * (w - 0.5)]]), np.array([0.3])])
        worst = max(worst, abs(p.tensors[0][0, 0] - ref_w[k]), abs(p.tensors[1][0] - ref_b[k]))
    assert worst < 1e-10


def test_adam_zero_gradient_is_fixed_point():
    net = tiny_net()
    before = [t.copy() for t in net.tensors]
    st_ = OptimizerState.for_params(net, 1e-3)
    for _ in range(5):
        adam_step(st_, net, [np.zeros_like(t) for t in net.tensors])
    assert all(np.array_equal(a, b) for a, b in zip(before, net.tensors))


def test_adam_rejects_non_finite_gradient():
    net = tiny_net()
    before = [t.copy() for t in net.tensors]
    grads = [np.zeros_like(t) for t in net.tensors]
    grads[-1][0] = np.nan
    st_ = OptimizerState.for_params(net, 1e-3)
    with pytest.raises(NumericalError):
        adam_step(st_, net, grads)
    assert st_.step == 0 and all(np.array_equal(a, b) for a, b in zip(before, net.tensors))


# -- Polyak ---------------------------------------------------------------------


def _pair():
    src = tiny_net(seed=4)
    tgt = src.copy()
    for t in tgt.tensors:
        t[...] = 0
    for t in src.tensors:
        t[...] = 1
    return tgt, src


@pytest.mark.parametrize("tau,expected", [(0.0, 0.0), (1e-3, 1e-3), (1.0, 1.0)])
def test_polyak_closed_form(tau, expected):
    tgt, src = _pair()
    polyak_update(tgt, src, tau)
    assert all(np.all(t == expected) for t in tgt.tensors)


@given(st.floats(0, 1))
def test_polyak_twice_composes(tau):
    a = tiny_net(seed=5)
    src = tiny_net(seed=6)
    b = a.copy()
    polyak_update(a, src, tau)
    polyak_update(a, src, tau)
    polyak_update(b, src, 1 - (1 - tau) ** 2)
    assert all(np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(a.tensors, b.tensors))


def test_polyak_rejects_mismatched_architectures():
    with pytest.raises(ShapeError):
        polyak_update(tiny_net(), tiny_net(image=None), 0.5)


# -- checkpoints ----------------------------------------------------------------


def _f32_nets():
    spec = ObsSpec(None, 15)
    actor = build_actor(spec, NetConfig(hidden=(8, 8)), _rng(1))
    critic = build_critic(spec, NetConfig(hidden=(8, 8)), _rng(2))
    return actor, critic


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    actor, critic = _f32_nets()
    opt = OptimizerState.for_params(critic, 1e-3)
    adam_step(opt, critic, [np.full_like(t, 0.1) for t in critic.tensors])
    path = tmp_path / "c.vpoc"
    save_checkpoint(path, {"actor": actor, "critic": critic}, {"critic": opt}, {"episode": 3})
    ck = load_checkpoint(path)
    assert ck.metadata == {"episode": 3}
    for name, net in (("actor", actor), ("critic", critic)):
        got = ck.networks[name]
        assert got.arch == net.arch
        assert all(a.tobytes() == b.tobytes() for a, b in zip(got.tensors, net.tensors))
    assert ck.optimizers["critic"].step == 1
    assert all(np.array_equal(a, b) for a, b in zip(ck.optimizers["critic"].v, opt.v))


@pytest.mark.parametrize("offset", [0, 4, 7])
def test_corrupted_header_is_a_format_error(tmp_path, offset):
    actor, _ = _f32_nets()
    path = tmp_path / "c.vpoc"
    save_checkpoint(path, {"actor": actor})
    data = bytearray(path.read_bytes())
    data[offset] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert exc.value.offset is not None


def test_truncated_checkpoint_reports_offset(tmp_path):
    actor, _ = _f32_nets()
    path = tmp_path / "c.vpoc"
    save_checkpoint(path, {"actor": actor})
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(FormatError) as exc:
        load_checkpoint(path)
    assert 0 < exc.value.offset <= len(data)


def test_pixels_checkpoint_does_not_fit_features_config(tmp_path):
    pix = build_actor(ObsSpec((3, 64, 64), 3), NetConfig(hidden=(8, 8)), _rng())
    path = tmp_path / "p.vpoc"
    save_checkpoint(path, {"actor": pix})
    feats = build_actor(ObsSpec(None, 15), NetConfig(hidden=(8, 8)), _rng())
    with pytest.raises(ShapeError):
        check_compatible(load_checkpoint(path).networks["actor"], feats.arch)
