import numpy as np
import pytest

from csfnet.accounting import count_parameters
from csfnet.backbone import (
    BLOCKS,
    STAGE_CHANNELS,
    Backbone,
    BackboneConfig,
    StdcBlock,
    StdcBlockConfig,
    backbone_forward,
    stdc_block_forward,
)
from csfnet.engine import Tensor
from csfnet.nn import initialize


def x_of(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def built(cfg, seed=0):
    bb = Backbone(cfg)
    initialize(bb, seed)
    bb.eval()
    return bb


def test_unit_widths():
    assert StdcBlockConfig(32, 64).widths() == [32, 16, 8, 8]
    assert sum(StdcBlockConfig(256, 512).widths()) == 512


def test_block_config_validation():
    with pytest.raises(ValueError, match="divisible by 8"):
        StdcBlockConfig(32, 60)
    with pytest.raises(ValueError, match="stride"):
        StdcBlockConfig(32, 64, stride=3)


@pytest.mark.parametrize("stride,size", [(1, 8), (2, 4)])
def test_block_shapes(stride, size):
    cfg = StdcBlockConfig(32, 64, stride)
    block = StdcBlock(cfg)
    initialize(block, 0)
    assert stdc_block_forward(x_of((1, 32, 8, 8)), cfg, block).shape == (1, 64, size, size)


def test_block_parameter_census():
    # conv weights: 1x1 32->32, 3x3 32->16, 3x3 16->8, 3x3 8->8; BN adds 2 per channel
    convs = 32 * 32 + 32 * 16 * 9 + 16 * 8 * 9 + 8 * 8 * 9
    bn = 2 * (32 + 16 + 8 + 8)
    assert count_parameters(StdcBlock(StdcBlockConfig(32, 64))) == convs + bn == 7488


def test_block_rejects_wrong_channels():
    with pytest.raises(ValueError, match="expects 32"):
        StdcBlock(StdcBlockConfig(32, 64))(x_of((1, 16, 8, 8)))


def test_stage_shapes_stdc1():
    cfg = BackboneConfig("STDC1")
    feats = backbone_forward(x_of((1, 3, 64, 64)), cfg, built(cfg))
    assert [f.shape for f in feats] == [
        (1, 32, 32, 32), (1, 64, 16, 16), (1, 256, 8, 8), (1, 512, 4, 4), (1, 1024, 2, 2)
    ]


def test_block_counts_and_strides():
    for variant, blocks in BLOCKS.items():
        bb = Backbone(BackboneConfig(variant))
        for s, n in zip((3, 4, 5), blocks):
            stage = bb.stage(s)
            assert len(stage) == n
            assert [b.cfg.stride for b in stage] == [2] + [1] * (n - 1)
            assert all(b.cfg.c_out == STAGE_CHANNELS[s - 1] for b in stage)


def test_stop_after_stage():
    cfg = BackboneConfig("STDC1", in_channels=2)
    feats = backbone_forward(x_of((1, 2, 32, 32)), cfg, built(cfg), stop_after_stage=3)
    assert len(feats) == 3 and feats[-1].shape == (1, 256, 4, 4)


def test_compositional_bitwise():
    cfg = BackboneConfig("STDC1")
    bb = built(cfg)
    x = x_of((1, 3, 64, 64), seed=3)
    full = bb(x)
    head = bb(x, 1, 3)
    tail = bb(head[-1], 4, 5)
    for a, b in zip(full, head + tail):
        assert a.data.tobytes() == b.data.tobytes()


def test_stdc2_is_larger():
    assert count_parameters(Backbone(BackboneConfig("STDC2"))) > count_parameters(Backbone(BackboneConfig("STDC1")))


def test_input_validation():
    cfg = BackboneConfig("STDC1")
    bb = Backbone(cfg)
    with pytest.raises(ValueError, match="divisible by 32"):
        bb(x_of((1, 3, 48, 64)))
    with pytest.raises(ValueError, match="3 input channels"):
        bb(x_of((1, 1, 64, 64)))
    with pytest.raises(ValueError, match="variant"):
        BackboneConfig("STDC3")
    with pytest.raises(ValueError, match="stop_after_stage"):
        backbone_forward(x_of((1, 3, 64, 64)), cfg, bb, 6)


def test_partial_backbone_builds_only_leading_stages():
    bb = Backbone(BackboneConfig("STDC1", 1), num_stages=3)
    assert not hasattr(bb, "stage4")
    with pytest.raises(ValueError, match="not built"):
        bb.stage(4)
