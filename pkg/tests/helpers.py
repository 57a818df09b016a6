"""Glue between engine modules and the float64 loop oracles."""

import numpy as np

from csfnet.nn import BatchNorm2d


def f64(a):
    return np.asarray(a, dtype=np.float64)


def bn_params(bn: BatchNorm2d):
    return [f64(bn.weight.data), f64(bn.bias.data), f64(bn.running_mean), f64(bn.running_var)]


def csafm_params(mod):
    return {
        "conv1_w": f64(mod.conv1.weight.data[:, :, 0, 0]),
        "conv1_b": f64(mod.conv1.bias.data),
        "bn": bn_params(mod.bn),
        "conv2_w": f64(mod.conv2.weight.data[:, :, 0, 0]),
        "conv2_b": f64(mod.conv2.bias.data),
    }


def context_params(mod):
    return {
        "reduce_w": f64(mod.reduce.conv.weight.data),
        "reduce_bn": bn_params(mod.reduce.bn),
        "row_w": f64(mod.row.conv.weight.data),
        "row_bn": bn_params(mod.row.bn),
        "col_w": f64(mod.col.conv.weight.data),
        "col_bn": bn_params(mod.col.bn),
        "out_w": f64(mod.out.weight.data),
        "out_b": f64(mod.out.bias.data),
    }


def central_difference(fn, arr, index, step=1e-5):
    """d fn / d arr[index] by float64 central differences on a copy."""
    a = f64(arr).copy()
    a[index] += step
    hi = fn(a)
    a[index] -= 2 * step
    lo = fn(a)
    return (hi - lo) / (2 * step)
