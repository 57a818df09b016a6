import numpy as np
import pytest

from csfnet import checkpoint as ckpt
from csfnet.checks import check_network
from csfnet.engine import Tensor, backward
from csfnet.network import POOLING, CSFNet, ModelConfig, build, forward
from csfnet.trainer import cross_entropy_loss

SMALL = ModelConfig(num_classes=5, width=64, height=64)


def inputs(cfg, n=1, seed=0, h=64, w=64):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.standard_normal((n, 3, h, w))), Tensor(rng.standard_normal((n, cfg.x_channels, h, w))))


@pytest.fixture(scope="module")
def small():
    return build(SMALL, 0)


# config


@pytest.mark.parametrize(
    "field,value",
    [
        ("variant", "CSFNet-3"),
        ("num_classes", 0),
        ("x_channels", 3),
        ("dual_branch_stages", 2),
        ("decoder_fusion", "concat"),
        ("pooling", "kitti"),
        ("width", 100),
        ("height", 0),
        ("csafm_hidden_ratio", 0.0),
    ],
)
def test_config_errors_name_the_field(field, value):
    with pytest.raises(ValueError, match=f"ModelConfig.{field}"):
        ModelConfig(**{field: value})


def test_pooling_tables():
    assert POOLING["cityscapes"].l1 == (32, 16) and POOLING["cityscapes"].ctx == (8, 4)
    assert POOLING["mfnet"].l4 == (3, 2) and POOLING["mfnet"].ctx == (5, 5)
    assert POOLING["cityscapes"].level(5) == (2, 1)
    assert POOLING["mfnet"].level(5) == (2, 1)


# topology


def test_modules_present(small):
    net, _ = small
    assert [n for n in ("fuse1", "fuse2", "fuse3") if hasattr(net, n)] == ["fuse1", "fuse2", "fuse3"]
    assert not hasattr(net, "fuse4")
    assert [hasattr(net, f"dfuse{i}") for i in (1, 2, 3, 4)] == [True, True, True, False]
    assert net.fuse2.cfg.channels == 64 and net.fuse2.cfg.hidden_channels == 32
    assert net.up3.scale == 4 and len(net.up3.convs) == 2
    assert net.skip4.conv.weight.shape == (32, 512, 1, 1)
    assert net.head.weight.shape == (5, 32, 1, 1)


def test_add_fusion_has_no_decoder_csafm():
    net = CSFNet(SMALL.with_(decoder_fusion="add"))
    assert not any(hasattr(net, f"dfuse{i}") for i in (1, 2, 3))


def test_store_registers_each_parameter_once(small):
    net, store = small
    assert len(store) == sum(1 for _ in net.named_parameters())
    assert store.names() == sorted(store.names())
    assert any(n.startswith("x.stage5.") for n in store.names())
    frozen = [n for n, e in store.entries.items() if not e.trainable]
    assert frozen and all(n.startswith(("x.stage4.", "x.stage5.")) for n in frozen)


# forward


def test_logit_shape_and_determinism(small):
    net, _ = small
    rgb, x = inputs(SMALL, n=2)
    a = forward(net, rgb, x)
    b = forward(net, rgb, x)
    assert a.shape == (2, 5, 64, 64)
    assert a.data.tobytes() == b.data.tobytes()


def test_rectangular_input_shape():
    cfg = ModelConfig(num_classes=19, width=512, height=256)
    net, _ = build(cfg, 0)
    rgb, x = inputs(cfg, h=256, w=512)
    assert forward(net, rgb, x).shape == (1, 19, 256, 512)


def test_build_is_seeded(small):
    _, s0 = small
    _, s0b = build(SMALL, 0)
    _, s1 = build(SMALL, 1)
    name = "rgb.stage3.0.units.1.conv.weight"
    assert s0[name].data.tobytes() == s0b[name].data.tobytes()
    assert s0[name].data.tobytes() != s1[name].data.tobytes()


def test_degenerate_modality_stays_finite(small):
    net, _ = small
    rgb, _ = inputs(SMALL)
    x = Tensor(np.stack([rgb.data[:, 0], rgb.data[:, 0]], axis=1))
    assert np.isfinite(forward(net, rgb, x).data).all()
    assert np.isfinite(forward(net, rgb, Tensor(np.zeros((1, 2, 64, 64)))).data).all()


def test_trunk_enters_stage4_with_fused_level3(small):
    net, _ = small
    net.eval()
    rgb, x = inputs(SMALL, seed=2)
    r, xx = rgb, x
    for level in (1, 2, 3):
        r, xx = net.rgb.run_stage(level, r), net.x.run_stage(level, xx)
        r, xx, fm = getattr(net, f"fuse{level}")(r, xx)
    skips, _ = net.encode(rgb, x)
    assert skips[3].data.tobytes() == fm.data.tobytes()
    assert skips[4].data.tobytes() == net.rgb.run_stage(4, fm).data.tobytes()


def test_input_validation(small):
    net, _ = small
    with pytest.raises(ValueError, match="divisible by 32"):
        net(*inputs(SMALL, h=48, w=64))
    with pytest.raises(ValueError, match="x must be"):
        net(Tensor(np.zeros((1, 3, 64, 64))), Tensor(np.zeros((1, 1, 64, 64))))
    with pytest.raises(ValueError, match="differ"):
        net(Tensor(np.zeros((1, 3, 64, 64))), Tensor(np.zeros((2, 2, 64, 64))))
    with pytest.raises(ValueError, match="mode"):
        forward(net, *inputs(SMALL), mode="test")


def test_train_mode_gradients_reach_trainable_params_only():
    net, store = build(ModelConfig(num_classes=3, width=64, height=64), 0)
    rgb, x = inputs(net.cfg, n=2)
    labels = np.random.default_rng(0).integers(0, 3, (2, 64, 64))
    backward(cross_entropy_loss(forward(net, rgb, x, "train"), labels))
    for name, e in store.entries.items():
        if e.trainable:
            assert e.tensor.grad is not None, name
        else:
            assert e.tensor.grad is None, name


def test_head_bias_gradient_has_closed_form():
    cfg = ModelConfig(num_classes=3, width=64, height=64)
    net, store = build(cfg, 1)
    rgb, x = inputs(cfg, n=2, seed=4)
    labels = np.random.default_rng(4).integers(0, 3, (2, 64, 64))
    labels[0, :8] = 255
    logits = forward(net, rgb, x, "train")
    backward(cross_entropy_loss(logits, labels))
    z = logits.data.astype(np.float64)
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    keep = labels != 255
    onehot = np.stack([labels == k for k in range(3)], axis=1)
    want = ((p - onehot) * keep[:, None]).sum(axis=(0, 2, 3)) / keep.sum()
    np.testing.assert_allclose(store["head.bias"].grad, want, rtol=1e-4, atol=1e-7)


def test_network_gradcheck_runs_on_requested_sample():
    res = check_network(0, entries=10)
    assert res.checked == 10 and res.significant > 0


# checkpoints


def test_checkpoint_round_trip_bytes(tmp_path, small):
    _, store = small
    a, b = tmp_path / "a.csfc", tmp_path / "b.csfc"
    ckpt.save_checkpoint(store, a)
    _, other = build(SMALL, 7)
    ckpt.restore(other, a)
    ckpt.save_checkpoint(other, b)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    raw = ckpt.dumps({"b": np.zeros((2, 3), np.float32), "a": np.ones(1, np.float32)})
    assert raw[:4] == b"CSFC"
    assert int.from_bytes(raw[4:8], "little") == 1 and int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:14], "little") == 1 and raw[14:15] == b"a"
    assert list(ckpt.loads(raw)) == ["a", "b"]


def test_checkpoint_errors():
    good = ckpt.dumps({"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    with pytest.raises(ckpt.BadMagicError):
        ckpt.loads(b"XXXX" + good[4:])
    with pytest.raises(ckpt.VersionError):
        ckpt.loads(good[:4] + (2).to_bytes(4, "little") + good[8:])
    with pytest.raises(ckpt.TruncatedError, match="payload of w"):
        ckpt.loads(good[:-1])
    with pytest.raises(ckpt.CheckpointError, match="trailing"):
        ckpt.loads(good + b"\0")


def test_load_into_mismatch_names_first_tensor(small):
    _, store = small
    state = {k: v.copy() for k, v in store.state().items()}
    wrong = dict(state)
    wrong["head.bias"] = np.zeros(7, np.float32)
    with pytest.raises(ckpt.ShapeMismatchError, match="head.bias"):
        ckpt.load_into(store, wrong)
    with pytest.raises(ckpt.UnknownTensorError, match="extra.w"):
        ckpt.load_into(store, dict(state, **{"extra.w": np.zeros(1, np.float32)}))
    missing = dict(state)
    del missing["up1.convs.0.bn.running_var"]
    with pytest.raises(ckpt.MissingTensorError, match="running_var"):
        ckpt.load_into(store, missing)


def test_loaded_model_reproduces_logits(tmp_path, small):
    net, store = small
    rgb, x = inputs(SMALL, seed=5)
    ref = forward(net, rgb, x)
    ckpt.save_checkpoint(store, tmp_path / "m.csfc")
    net2, store2 = build(SMALL, 3)
    ckpt.restore(store2, tmp_path / "m.csfc")
    assert forward(net2, rgb, x).data.tobytes() == ref.data.tobytes()
