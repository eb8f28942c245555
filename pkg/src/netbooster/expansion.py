"""Network expansion: replace selected layers with multi-layer blocks.

Only pointwise convs (1x1, stride 1, ungrouped) and dense layers are
expandable. The default rewrite turns ``conv 1x1 c1->c2`` into an
inverted residual block ``1x1 c1->r*c1, act, depthwise k x k, act,
1x1 r*c1->c2`` with an identity shortcut when ``c1 == c2``. Every block is
checked to keep the receptive field of the layer it replaces.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ExpansionError, ProvenanceError, ReceptiveFieldError
from .graph.init import init_params
from .graph.shapes import infer_shapes
from .graph.spec import BLOCK_TYPES, BlockSpec, LayerSpec, ModelGraph

LOCATIONS = ("uniform", "first", "middle", "last")


@dataclass(frozen=True)
class ExpansionPlan:
    targets: tuple
    block_type: str = "inverted_residual"
    expansion_ratio: int = 6
    dw_kernel: int = 1
    fraction: float = 0.5
    include_skip: bool = True
    zero_init_residual: bool = False

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise ExpansionError(f"unknown block type {self.block_type!r}")
        if self.expansion_ratio < 1:
            raise ExpansionError(f"expansion ratio must be >= 1, got {self.expansion_ratio}")
        if self.dw_kernel < 1 or self.dw_kernel % 2 == 0:
            raise ExpansionError(f"depthwise kernel must be odd and >= 1, got {self.dw_kernel}")
        object.__setattr__(self, "targets", tuple(sorted(int(t) for t in self.targets)))


def is_expandable(node):
    return isinstance(node, LayerSpec) and (node.is_pointwise or node.kind == "dense")


def expandable_layers(model):
    return [i for i, node in enumerate(model.nodes) if is_expandable(node)]


def pick_count(fraction, available):
    # round half up; Python's round() would send 2.5 to 2
    return int(math.floor(fraction * available + 0.5))


def select_ranks(available, n, location="uniform"):
    if location == "uniform":
        return [i * available // n for i in range(n)]
    if location == "first":
        return list(range(n))
    if location == "last":
        return list(range(available - n, available))
    if location == "middle":
        start = (available - n) // 2
        return list(range(start, start + n))
    raise ExpansionError(f"unknown location {location!r}; choose from {LOCATIONS}")


def select_targets(model, fraction=0.5, location="uniform"):
    """Node indices of the expandable layers to expand, evenly spaced by default."""
    candidates = expandable_layers(model)
    if not candidates:
        raise ExpansionError("model has no expandable layers (pointwise convs or dense layers)")
    if not 0.0 < fraction <= 1.0:
        raise ExpansionError(f"fraction must lie in (0, 1], got {fraction}")
    n = pick_count(fraction, len(candidates))
    if n == 0:
        raise ExpansionError(f"fraction {fraction} of {len(candidates)} expandable layers selects nothing")
    return [candidates[r] for r in select_ranks(len(candidates), n, location)]


def make_plan(model, fraction=0.5, expansion_ratio=6, block_type="inverted_residual", dw_kernel=1,
              include_skip=True, location="uniform", zero_init_residual=False):
    return ExpansionPlan(tuple(select_targets(model, fraction, location)), block_type, expansion_ratio, dw_kernel,
                         fraction, include_skip, zero_init_residual)


def receptive_field(node):
    """Spatial receptive field ``1 + sum(k_i - 1)`` of a layer or a stride-1 block."""
    if isinstance(node, LayerSpec):
        return node.kernel if node.is_conv else 1
    rf = 1
    for layer in node.layers:
        if layer.is_conv:
            if layer.stride != 1:
                raise ReceptiveFieldError(f"stride {layer.stride} inside a block is unsupported")
            rf += layer.kernel - 1
    return rf


def expand_layer(layer, plan, act="relu"):
    """Build the block that stands in for ``layer`` during training."""
    if not isinstance(layer, LayerSpec) or layer.kind not in ("conv2d", "dense"):
        raise ExpansionError(f"layer kind {getattr(layer, 'kind', type(layer).__name__)!r} is not expandable")
    if layer.kind == "conv2d" and layer.stride != 1:
        raise ExpansionError(f"cannot expand a conv with stride {layer.stride}")
    if layer.kind == "conv2d" and layer.groups != 1:
        raise ExpansionError("cannot expand a grouped conv")
    r = plan.expansion_ratio
    c1, c2 = layer.in_channels, layer.out_channels
    hidden = r * c1
    a = LayerSpec.activation(act)
    skip = plan.include_skip and c1 == c2
    if layer.kind == "dense":
        if plan.block_type == "basic":
            raise ExpansionError("basic blocks have no dense form")
        layers = (LayerSpec.dense(c1, hidden, layer.bias), a, LayerSpec.dense(hidden, c2, layer.bias))
        return BlockSpec(layers, skip, layer, plan.block_type)
    b = layer.bias
    if plan.block_type == "inverted_residual":
        layers = (LayerSpec.conv(c1, hidden, 1, bias=b), a, LayerSpec.depthwise(hidden, plan.dw_kernel, bias=b), a,
                  LayerSpec.conv(hidden, c2, 1, bias=b))
    elif plan.block_type == "bottleneck":
        layers = (LayerSpec.conv(c1, hidden, 1, bias=b), a, LayerSpec.conv(hidden, hidden, plan.dw_kernel, bias=b), a,
                  LayerSpec.conv(hidden, c2, 1, bias=b))
    else:
        layers = (LayerSpec.conv(c1, c2, 3, bias=b), a, LayerSpec.conv(c2, c2, 3, bias=b))
    return BlockSpec(layers, skip, layer, plan.block_type)


def base_activation(model):
    for _, layer in model.iter_layers():
        if layer.kind == "activation":
            return layer.act
    return "relu"


def expand_model(model, plan, seed=0):
    """Return the expanded model; untouched nodes keep their specs and weights."""
    if model.provenance == "expanded":
        raise ProvenanceError("model is already expanded")
    act = base_activation(model)
    nodes = list(model.nodes)
    for t in plan.targets:
        if not 0 <= t < len(nodes) or not is_expandable(nodes[t]):
            raise ExpansionError(f"node {t} is not an expandable layer")
    new_ids = []
    for t in plan.targets:
        block = expand_layer(nodes[t], plan, act)
        want, got = receptive_field(nodes[t]), receptive_field(block)
        if want != got:
            raise ReceptiveFieldError(
                f"node {t}: {plan.block_type} block has receptive field {got}, replaced layer has {want}"
            )
        nodes[t] = block
        new_ids += [f"{t}.{j}" for j in range(len(block.layers))]
    params = {k: v.copy() for k, v in model.params.items() if int(k.split("/")[0].split(".")[0]) not in plan.targets}
    out = ModelGraph(model.name, nodes, model.input_shape, params, "expanded", model.dtype)
    init_params(out, np.random.default_rng(seed), set(new_ids))
    if plan.zero_init_residual:
        # a skip block whose branch ends in zeros starts out as the identity
        for t in plan.targets:
            block = nodes[t]
            if block.skip:
                last = len(block.layers) - 1
                for name in block.layers[last].param_shapes():
                    out.params[f"{t}.{last}/{name}"][...] = 0
    infer_shapes(out)
    out.validate_params()
    return out
