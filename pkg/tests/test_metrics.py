import numpy as np
import pytest

from csfnet.accounting import count_parameters, describe, estimate_flops, flop_counter
from csfnet.bench import BenchReport, benchmark_fps, time_calls
from csfnet.data import synth_dataset
from csfnet.engine import Tensor, conv2d, count_flops
from csfnet.metrics import accumulate_confusion, evaluate, report
from csfnet.network import ModelConfig, build
from csfnet.nn import Conv2d, Module

# confusion and IoU


def test_perfect_prediction():
    label = np.random.default_rng(0).integers(0, 3, (2, 4, 4))
    conf = accumulate_confusion(label, label, 3)
    assert (conf == np.diag(np.diag(conf))).all()
    assert report(conf).miou == 1.0


def test_all_ignored_is_zero_matrix():
    conf = accumulate_confusion(np.zeros((3, 3), int), np.full((3, 3), 255), 2)
    assert not conf.any()
    assert np.isnan(report(conf).miou)


def test_hand_confusion():
    conf = accumulate_confusion(np.array([0, 1, 1]), np.array([0, 0, 1]), 2)
    assert conf.tolist() == [[1, 1], [0, 1]]
    rep = report(conf)
    np.testing.assert_allclose(rep.per_class_iou, [0.5, 0.5])
    assert rep.miou == 0.5


def test_constant_wrong_prediction_on_balanced_image():
    label = np.array([[0, 0, 1, 1]])
    rep = report(accumulate_confusion(np.zeros_like(label), label, 2))
    assert rep.per_class_iou[1] == 0.0 and rep.miou < 1.0


def test_absent_classes_are_excluded():
    rep = report(accumulate_confusion(np.array([0, 1]), np.array([0, 1]), 4))
    assert np.isnan(rep.per_class_iou[2:]).all() and rep.miou == 1.0
    assert "-" in rep.format()


def test_accumulates_in_place_and_rejects_range():
    conf = np.zeros((2, 2), np.int64)
    accumulate_confusion(np.array([0]), np.array([0]), 2, confusion=conf)
    accumulate_confusion(np.array([1]), np.array([0]), 2, confusion=conf)
    assert conf.tolist() == [[1, 1], [0, 0]]
    with pytest.raises(ValueError, match="prediction values"):
        accumulate_confusion(np.array([2]), np.array([0]), 2)
    with pytest.raises(ValueError, match="label values"):
        accumulate_confusion(np.array([0]), np.array([7]), 2)
    with pytest.raises(ValueError, match="shape"):
        accumulate_confusion(np.zeros(2, int), np.zeros(3, int), 2)


def test_evaluate_runs_network():
    cfg = ModelConfig(num_classes=3, width=32, height=32)
    net, _ = build(cfg, 0)
    rep = evaluate(net, synth_dataset(0, 3, 32, 3), 3)
    assert rep.confusion.sum() == 3 * 32 * 32
    assert 0.0 <= rep.pixel_accuracy <= 1.0


# accounting


def test_single_conv_parameter_count():
    assert count_parameters(Conv2d(16, 32, 3, bias=True)) == 4640


def test_conv_flops_convention():
    fc = flop_counter(ModelConfig(width=64, height=64), 64, 64)
    assert fc.total == estimate_flops(ModelConfig(width=64, height=64))
    # a lone conv: 2 * Cout * Cin * k * k per output pixel
    with count_flops() as c:
        conv2d(Tensor.meta((1, 16, 8, 8)), Tensor.meta((32, 16, 3, 3)), None, padding=1)
    assert c.total == 2 * 32 * 16 * 9 * 64


def test_flops_scale_with_area_and_are_monotone():
    cfg = ModelConfig()
    a = estimate_flops(cfg, 512, 512)
    b = estimate_flops(cfg, 512, 1024)
    assert b / a == pytest.approx(2.0, rel=0.02)
    sizes = [(256, 256), (256, 512), (512, 512), (512, 1024)]
    vals = [estimate_flops(cfg, h, w) for h, w in sizes]
    assert vals == sorted(vals)


def test_variant_ordering():
    _, s1 = build(ModelConfig(num_classes=19, width=64, height=64), 0)
    _, s2 = build(ModelConfig(variant="CSFNet-2", num_classes=19, width=64, height=64), 0)
    assert count_parameters(s1) < count_parameters(s2)


def test_describe_table():
    text = describe(ModelConfig(num_classes=9, pooling="mfnet", width=640, height=480))
    assert "total" in text and "640x480" in text and "CTX 5x5" in text
    assert "GMACs" in describe(ModelConfig(width=64, height=64), macs=True)


# benchmark harness


class OneConv(Module):
    def __init__(self):
        super().__init__()
        self.conv = Conv2d(3, 4, 3, padding=1)

    def forward(self, rgb, x):
        return self.conv(rgb)


def test_time_calls_with_fake_clock():
    ticks = iter(range(100))
    calls = []
    lat = time_calls(lambda: calls.append(1), 3, 4, clock=lambda: next(ticks) * 0.002)
    assert len(calls) == 7 and lat == pytest.approx([2.0] * 4)
    with pytest.raises(ValueError, match="at least 2"):
        time_calls(lambda: None, 0, 1)


def test_report_fields():
    rep = BenchReport(1, 3, [10.0, 20.0, 30.0], params=5, flops=2_000_000_000, shape=(1, 3, 32, 32))
    assert rep.mean_ms == 20.0 and rep.median_ms == 20.0 and rep.std_ms == 10.0
    assert rep.fps == 50.0
    assert "fps" in rep.format() and rep.csv().splitlines()[1].startswith("1,3,20.0000")


def test_bench_contract_and_ordering():
    small = benchmark_fps(OneConv(), (1, 3, 64, 64), 2, warmup=1, iters=3)
    assert small.fps > 0 and len(small.latencies_ms) == 3
    net, _ = build(ModelConfig(width=64, height=64), 0)
    big = benchmark_fps(net, (1, 3, 64, 64), 2, warmup=1, iters=2)
    assert small.fps > big.fps
    with pytest.raises(ValueError, match="batch size 1"):
        benchmark_fps(OneConv(), (2, 3, 32, 32), 2, warmup=0, iters=2)
