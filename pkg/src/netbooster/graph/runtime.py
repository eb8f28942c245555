"""Forward evaluation of a :class:`ModelGraph`, optionally recorded on a tape."""

import numpy as np

from ..engine import autograd as ag
from .spec import BlockSpec


def _param(model, key, tape):
    p = model.params.get(key)
    if p is not None and tape is not None:
        tape.watch(key, p)
    return p


def layer_forward(layer, nid, model, x, tape=None):
    kind = layer.kind
    if layer.is_conv:
        return ag.conv2d(x, _param(model, f"{nid}/weight", tape), _param(model, f"{nid}/bias", tape),
                         layer.stride, layer.padding, layer.groups, tape)
    if kind == "dense":
        return ag.dense(x, _param(model, f"{nid}/weight", tape), _param(model, f"{nid}/bias", tape), tape)
    if kind == "affine":
        return ag.affine(x, _param(model, f"{nid}/scale", tape), _param(model, f"{nid}/shift", tape), tape)
    if kind == "activation":
        return ag.activation(x, layer.act, layer.alpha, tape)
    if kind == "pool":
        return ag.global_avg_pool(x, tape)
    if kind == "flatten":
        return ag.flatten(x, tape)
    raise ValueError(f"cannot execute layer kind {kind!r}")


def forward(model, x, tape=None):
    """Logits for a batch ``x`` of shape ``N x C x H x W``."""
    x = np.asarray(x, dtype=model.dtype)
    for i, node in enumerate(model.nodes):
        if isinstance(node, BlockSpec):
            h = x
            for j, layer in enumerate(node.layers):
                h = layer_forward(layer, f"{i}.{j}", model, h, tape)
            x = ag.add(h, x, tape) if node.skip else h
        else:
            x = layer_forward(node, str(i), model, x, tape)
    return x


def predict(model, x, batch_size=256):
    out = [forward(model, x[s:s + batch_size]) for s in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)
