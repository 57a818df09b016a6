import numpy as np
import pytest

from csfnet.checks import randomize_bn
from csfnet.context import ContextConfig, ContextModule, context_forward
from csfnet.engine import Tensor, adaptive_avg_pool2d, add, backward, bilinear_resize, mul, sum_all
from csfnet.nn import initialize

from helpers import central_difference, context_params
from oracles import context_loop


def seeded(cfg, seed=0):
    mod = ContextModule(cfg)
    initialize(mod, seed)
    rng = np.random.default_rng(seed + 1)
    randomize_bn(mod, rng)
    mod.out.bias.data[...] = rng.uniform(-0.3, 0.3, mod.out.bias.shape)
    mod.eval()
    return mod


def test_config_widths_and_validation():
    assert ContextConfig(1024, 8, 4).c_out == 32
    with pytest.raises(ValueError, match="multiple of 32"):
        ContextConfig(48, 4, 4)
    with pytest.raises(ValueError, match="pooled size"):
        ContextConfig(64, 0, 4)


def test_layer_widths():
    mod = ContextModule(ContextConfig(1024, 8, 4))
    assert mod.reduce.conv.weight.shape == (256, 1024, 1, 1)
    assert mod.row.conv.weight.shape == (64, 256, 1, 4)
    assert mod.col.conv.weight.shape == (64, 256, 4, 1)
    assert mod.out.weight.shape == (32, 64, 3, 3)


def test_cityscapes_shape():
    cfg = ContextConfig(1024, 8, 4)
    mod = ContextModule(cfg)
    initialize(mod, 0)
    mod.eval()
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1024, 16, 32)))
    assert context_forward(x, cfg, mod).shape == (1, 32, 16, 32)


def test_zero_input_gives_zero_output():
    mod = ContextModule(ContextConfig(64, 3, 2))
    initialize(mod, 1)
    mod.eval()
    out = mod(Tensor(np.zeros((2, 64, 5, 6))))
    assert out.shape == (2, 2, 5, 6)
    assert not out.data.any()


@pytest.mark.parametrize("h,w,s_h,s_w", [(4, 4, 3, 3), (5, 7, 4, 8), (6, 3, 2, 2), (1, 1, 5, 5)])
def test_matches_scalar_pipeline(h, w, s_h, s_w):
    mod = seeded(ContextConfig(32, s_w, s_h), seed=h * 10 + w)
    x = np.random.default_rng(h + w).standard_normal((1, 32, h, w)).astype(np.float32)
    got = mod(Tensor(x)).data
    want = context_loop(x, context_params(mod), min(s_h, h), min(s_w, w))
    assert got.shape == (1, 1, h, w)
    np.testing.assert_allclose(got, want, atol=1e-4)


def test_branch_sum_order_is_exact():
    mod = seeded(ContextConfig(32, 3, 3))
    x = Tensor(np.random.default_rng(3).standard_normal((1, 32, 4, 4)))
    p = mod.reduce(adaptive_avg_pool2d(x, 3, 3))
    row = bilinear_resize(mod.row(p), 4, 4)
    col = bilinear_resize(mod.col(p), 4, 4)
    assert add(row, col).data.tobytes() == add(col, row).data.tobytes()
    assert mod.out(add(col, row)).data.tobytes() == mod(x).data.tobytes()


def test_rejects_wrong_channels_and_state():
    cfg = ContextConfig(32, 3, 3)
    mod = ContextModule(cfg)
    with pytest.raises(ValueError, match="32 input channels"):
        mod(Tensor(np.zeros((1, 64, 4, 4))))
    with pytest.raises(ValueError, match="built for"):
        context_forward(Tensor(np.zeros((1, 32, 4, 4))), ContextConfig(32, 2, 2), mod)


def test_gradient_matches_float64_oracle():
    rng = np.random.default_rng(4)
    mod = seeded(ContextConfig(32, 3, 3), seed=9)
    x = rng.standard_normal((1, 32, 4, 4)).astype(np.float32)
    probe = rng.standard_normal((1, 1, 4, 4))
    p = context_params(mod)
    tx = Tensor(x, requires_grad=True)
    backward(sum_all(mul(mod(tx), Tensor(probe))))

    def objective(a):
        return float((context_loop(a, p, 3, 3) * probe).sum())

    for idx in [(0, 0, 0, 0), (0, 5, 1, 2), (0, 17, 3, 3), (0, 31, 2, 0)]:
        num = central_difference(objective, x, idx)
        assert tx.grad[idx] == pytest.approx(num, rel=1e-3, abs=1e-6)

    # one weight of the row branch as well; the pass above already filled its grad
    w = mod.row.conv.weight
    w.grad = None
    backward(sum_all(mul(mod(Tensor(x)), Tensor(probe))))
    for idx in [(0, 0, 0, 1), (1, 3, 0, 2)]:
        def by_weight(wa, idx=idx):
            q = dict(p, row_w=wa)
            return float((context_loop(x, q, 3, 3) * probe).sum())

        assert w.grad[idx] == pytest.approx(central_difference(by_weight, w.data, idx), rel=1e-3, abs=1e-6)
