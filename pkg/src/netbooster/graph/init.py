"""Parameter initialization: Kaiming-uniform (fan-in) weights, zero biases."""

import math

import numpy as np


def init_layer_params(layer, rng, dtype="float32"):
    params = {}
    for name, shape in layer.param_shapes().items():
        if name == "weight":
            if layer.is_conv:
                fan_in = layer.kernel * layer.kernel * (layer.in_channels // layer.groups)
            else:
                fan_in = layer.in_channels
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name == "scale":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def init_params(model, rng, node_ids=None):
    """Fill ``model.params`` for every layer (or only ``node_ids``); returns the model."""
    for nid, layer in model.iter_layers():
        if node_ids is not None and nid not in node_ids:
            continue
        for name, arr in init_layer_params(layer, rng, model.dtype).items():
            model.params[f"{nid}/{name}"] = arr
    return model
