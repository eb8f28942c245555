"""Built-in model definitions."""

import numpy as np

from .init import init_params
from .spec import LayerSpec as L, ModelGraph


def _conv_unit(cin, cout, kernel, stride, act, depthwise=False):
    conv = L.depthwise(cin, kernel, stride) if depthwise else L.conv(cin, cout, kernel, stride)
    return [conv, L.affine(cout), L.activation(act)]


def desk_tnn_nodes(in_channels=1, num_classes=10, act="relu", width=8):
    """MobileNet-flavoured tiny CNN with 6 pointwise convs and 2 dense layers.

    Its eight expandable layers (pointwise convs and dense layers) are what
    the expansion pass selects from.
    """
    w1, w2, w3, w4 = width, 2 * width, 3 * width, 4 * width
    nodes = []
    nodes += _conv_unit(in_channels, w1, 3, 1, act)
    nodes += _conv_unit(w1, w2, 1, 1, act)
    nodes += _conv_unit(w2, w2, 3, 2, act, depthwise=True)
    nodes += _conv_unit(w2, w2, 1, 1, act)
    nodes += _conv_unit(w2, w2, 3, 1, act, depthwise=True)
    nodes += _conv_unit(w2, w3, 1, 1, act)
    nodes += _conv_unit(w3, w3, 3, 2, act, depthwise=True)
    nodes += _conv_unit(w3, w3, 1, 1, act)
    nodes += _conv_unit(w3, w3, 3, 1, act, depthwise=True)
    nodes += _conv_unit(w3, w4, 1, 1, act)
    nodes += _conv_unit(w4, w4, 1, 1, act)
    nodes += [L.pool(), L.flatten(), L.dense(w4, w4), L.activation(act), L.dense(w4, num_classes)]
    return nodes


def desk_tnn(input_shape=(1, 12, 12), num_classes=10, act="relu", width=8, seed=0, dtype="float32"):
    model = ModelGraph("desk-tnn", desk_tnn_nodes(input_shape[0], num_classes, act, width), input_shape,
                       dtype=dtype)
    return init_params(model, np.random.default_rng(seed))


PRESETS = {"desk-tnn": desk_tnn}
