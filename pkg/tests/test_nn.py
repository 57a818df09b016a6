import numpy as np
import pytest

from csfnet.engine import Tensor
from csfnet.nn import BatchNorm2d, Conv2d, ConvBNReLU, Module, ModuleList, Parameter, ParameterStore, Sequential, initialize


class Pair(Module):
    def __init__(self):
        super().__init__()
        self.a = ConvBNReLU(2, 4)
        self.blocks = ModuleList([Conv2d(4, 4, 1, bias=True), Conv2d(4, 3, 1)])
        self.scale = Parameter((3,), "weight")


def test_registration_names_are_dotted_paths():
    names = [n for n, _ in Pair().named_parameters()]
    assert names == [
        "scale", "a.conv.weight", "a.bn.weight", "a.bn.bias",
        "blocks.0.weight", "blocks.0.bias", "blocks.1.weight",
    ]
    assert [n for n, _ in Pair().named_buffers()] == ["a.bn.running_mean", "a.bn.running_var"]


def test_train_eval_propagates():
    m = Pair().eval()
    assert not any(sub.training for _, sub in m.named_modules())
    m.train()
    assert all(sub.training for _, sub in m.named_modules())


def test_initialize_is_seeded_and_kind_aware():
    a, b, c = Pair(), Pair(), Pair()
    initialize(a, 3)
    initialize(b, 3)
    initialize(c, 4)
    assert a.a.conv.weight.data.tobytes() == b.a.conv.weight.data.tobytes()
    assert a.a.conv.weight.data.tobytes() != c.a.conv.weight.data.tobytes()
    assert (a.a.bn.weight.data == 1).all() and not a.a.bn.bias.data.any()
    assert not a.blocks[0].bias.data.any()
    assert a.a.conv.weight.data.std() > 0


def test_explicit_init_std():
    conv = Conv2d(8, 64, 1, init_std=0.01)
    initialize(conv, 0)
    assert conv.weight.data.std() == pytest.approx(0.01, rel=0.15)


def test_sequential_chains():
    seq = Sequential([Conv2d(1, 1, 1), Conv2d(1, 1, 1)])
    seq[0].weight.data[...] = 2.0
    seq[1].weight.data[...] = 3.0
    out = seq(Tensor(np.ones((1, 1, 2, 2))))
    assert (out.data == 6.0).all() and len(seq) == 2


def test_bn_updates_running_stats_only_in_training():
    bn = BatchNorm2d(1)
    x = Tensor(np.full((2, 1, 2, 2), 4.0))
    bn.eval()(x)
    assert bn.running_mean[0] == 0.0
    bn.train()(x)
    assert bn.running_mean[0] == pytest.approx(0.4)


def test_store_views_freeze_and_state():
    m = Pair()
    store = ParameterStore(m)
    assert len(store) == 7 and store.names() == sorted(store.names())
    store["scale"].data[...] = 5.0
    assert (m.scale.data == 5.0).all()
    store.freeze("blocks.")
    assert {n for n, _ in store.trainable()} == {"scale", "a.conv.weight", "a.bn.weight", "a.bn.bias"}
    assert store.entries["a.bn.bias"].no_decay and not store.entries["scale"].no_decay
    state = store.state()
    assert "a.bn.running_var" in state and list(state) == sorted(state)
    assert store.count() == 3 + 4 * 2 * 9 + 4 + 4 + 16 + 4 + 12
    assert store.get("missing") is None


def test_zero_grad_clears_all():
    store = ParameterStore(Pair())
    for _, p in store.items():
        p.grad = np.ones_like(p.data)
    store.zero_grad()
    assert all(p.grad is None for _, p in store.items())
