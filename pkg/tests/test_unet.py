import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uascorrect import autodiff as ad
from uascorrect.autodiff import Optimizer, Tensor
from uascorrect.errors import ConfigError, FormatError, ShapeError
from uascorrect.losses import loss_value
from uascorrect.unet import UNetConfig, build_unet, forward, load_weights, parameter_count, save_weights

SMALL = dict(input_size=8, depth=1, base_channels=2)


def conv_params(cin, cout, k=3):
    return cout * cin * k * k + cout


def test_tiny_parameter_count_by_hand():
    # enc: 5->2, 2->2 | bottleneck: 2->4, 4->4 | up 4->2 (2x2) | dec: 4->2, 2->2 | head: 2->2, 2->2, 2->5
    expected = (
        conv_params(5, 2) + conv_params(2, 2)
        + conv_params(2, 4) + conv_params(4, 4)
        + 4 * 2 * 4 + 2 + conv_params(4, 2) + conv_params(2, 2)
        + conv_params(2, 2) + conv_params(2, 2) + conv_params(2, 5)
    )
    assert expected == 671
    cfg = UNetConfig(**SMALL)
    assert parameter_count(cfg) == expected == build_unet(cfg).parameter_count()


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 4))
def test_parameter_count_is_pure_function_of_config(depth, base, head):
    cfg = UNetConfig(input_size=2**depth * 2, depth=depth, base_channels=2 * base, final_convs=head)
    assert build_unet(cfg).parameter_count() == parameter_count(cfg)


def test_default_forward_shape_and_range():
    model = build_unet(UNetConfig())
    x = np.random.default_rng(0).random((1, 5, 128, 128), dtype=np.float32)
    with ad.no_grad():
        out = forward(model, x).data
    assert out.shape == (1, 5, 128, 128)
    assert out.min() > 0 and out.max() < 1


def test_same_seed_identical_parameters():
    a, b = build_unet(UNetConfig(**SMALL, seed=3)), build_unet(UNetConfig(**SMALL, seed=3))
    for (na, pa), (nb, pb) in zip(a.named_parameters().items(), b.named_parameters().items()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    c = build_unet(UNetConfig(**SMALL, seed=4))
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


def test_init_scale_and_zero_bias():
    model = build_unet(UNetConfig(base_channels=16, depth=2, input_size=16))
    params = model.named_parameters()
    w = params["enc1.conv1.weight"].data  # 32 in, 3x3
    assert w.std() == pytest.approx(np.sqrt(2 / (32 * 9)), rel=0.05)
    assert not params["enc1.conv1.bias"].data.any()


def test_invalid_configs():
    with pytest.raises(ConfigError):
        UNetConfig(input_size=100, depth=4)
    with pytest.raises(ConfigError):
        UNetConfig(depth=0)
    with pytest.raises(ConfigError):
        UNetConfig(base_channels=0)


def test_forward_shape_mismatch():
    model = build_unet(UNetConfig(**SMALL))
    with pytest.raises(ShapeError):
        model(np.zeros((1, 4, 8, 8), np.float32))
    with pytest.raises(ShapeError):
        model(np.zeros((1, 5, 16, 16), np.float32))


def test_per_level_sizes():
    cfg = UNetConfig(input_size=32, depth=3, base_channels=2)
    trace = []
    with ad.no_grad():
        build_unet(cfg)(np.zeros((1, 5, 32, 32), np.float32), trace=trace)
    sizes = dict(trace)
    for level in range(3):
        assert sizes[f"enc{level}"] == 32 // 2**level == sizes[f"dec{level}"]
    assert sizes["bottleneck"] == 4


def test_weights_round_trip_bit_exact(tmp_path):
    model = build_unet(UNetConfig(**SMALL, seed=5))
    for p in model.parameters():
        p.data += np.random.default_rng(1).normal(size=p.shape).astype(np.float32) * 0.01
    save_weights(model, tmp_path / "w.unw")
    loaded = load_weights(tmp_path / "w.unw")
    x = np.random.default_rng(2).random((2, 5, 8, 8), dtype=np.float32)
    with ad.no_grad():
        assert np.array_equal(model(x).data, loaded(x).data)
    assert loaded.config == model.config
    assert (tmp_path / "w.unw").read_bytes()[:4] == b"UNW1"


def test_truncated_weights(tmp_path):
    save_weights(build_unet(UNetConfig(**SMALL)), tmp_path / "w.unw")
    blob = (tmp_path / "w.unw").read_bytes()
    (tmp_path / "w.unw").write_bytes(blob[:-10])
    with pytest.raises(FormatError):
        load_weights(tmp_path / "w.unw")


def test_depth_mismatch_names_both_values(tmp_path):
    save_weights(build_unet(UNetConfig(input_size=8, depth=1, base_channels=2)), tmp_path / "w.unw")
    with pytest.raises(ConfigError, match=r"depth: file has 1, expected 2"):
        load_weights(tmp_path / "w.unw", expected=UNetConfig(input_size=8, depth=2, base_channels=2))


def test_end_to_end_gradient():
    model = build_unet(UNetConfig(**SMALL, seed=1))
    params = model.parameters()
    for p in params:
        p.data = p.data.astype(np.float64)
        # small nonzero biases keep activations away from the relu kink
        if p.data.ndim == 1:
            p.data[:] = np.random.default_rng(p.size).normal(0, 0.1, p.size)
    rng = np.random.default_rng(2)
    x = Tensor(rng.random((1, 5, 8, 8)))
    proj = rng.uniform(0.5, 1.5, (1, 5, 8, 8))

    def loss():
        return ad.sum(model(x) * proj)

    loss().backward()
    for p in params:
        def f():
            with ad.no_grad():
                return float(loss().data)

        # h=1e-3 steps across relu kinks in the head, so use a finer f64 step
        numeric = ad.numerical_gradient(f, p.data, 1e-5)
        assert ad.relative_error(p.grad, numeric) < 1e-3


def test_single_step_descent():
    from uascorrect.data import DegradeSpec, GlintSpec, ShadowSpec, make_scene, synth_degrade
    from uascorrect.raster import MultibandRaster, NormalizationStats

    scene = make_scene(256, 256, seed=0)
    clean = NormalizationStats.from_raster(scene).apply(scene.data)[:, :128, :128]
    spec = DegradeSpec(ShadowSpec(angle_deg=30.0, attenuation=0.5), GlintSpec(count=3), seed=1)
    degraded = synth_degrade(MultibandRaster(clean), spec)[0].data
    for attempt in range(3):
        model = build_unet(UNetConfig.tiny(seed=attempt))
        opt = Optimizer(model.parameters(), lr=1e-3)
        before = loss_value("mse", model(degraded[None]), clean[None])
        before.backward()
        opt.step()
        with ad.no_grad():
            after = loss_value("mse", model(degraded[None]), clean[None])
        if float(after.data) < float(before.data):
            return
    pytest.fail("one optimizer step never reduced the loss")
