"""Per-sample shape inference and complexity accounting.

Shapes exclude the batch axis: ``(C, H, W)`` for feature maps and
``(F,)`` after flattening. One multiply-accumulate counts as one FLOP.
"""

from dataclasses import dataclass, field

from ..errors import ShapeError
from ..engine.conv import output_extent
from .spec import BlockSpec


def layer_output_shape(layer, shape, where="?"):
    def fail(msg):
        raise ShapeError(f"node {where}: {msg}", dim=where)

    kind = layer.kind
    if layer.is_conv:
        if len(shape) != 3:
            fail(f"{kind} expects C x H x W input, got {shape}")
        c, h, w = shape
        if c != layer.in_channels:
            fail(f"expected input shape ({layer.in_channels}, H, W), got {shape}")
        if h + 2 * layer.padding < layer.kernel or w + 2 * layer.padding < layer.kernel:
            fail(f"input {shape} too small for kernel {layer.kernel} with padding {layer.padding}")
        return (layer.out_channels, output_extent(h, layer.kernel, layer.stride, layer.padding),
                output_extent(w, layer.kernel, layer.stride, layer.padding))
    if kind == "dense":
        if shape != (layer.in_channels,):
            fail(f"expected input shape ({layer.in_channels},), got {shape}")
        return (layer.out_channels,)
    if kind == "affine":
        if shape[0] != layer.in_channels:
            fail(f"expected {layer.in_channels} channels, got shape {shape}")
        return shape
    if kind == "activation":
        return shape
    if kind == "pool":
        if len(shape) != 3:
            fail(f"pool expects C x H x W input, got {shape}")
        return (shape[0], 1, 1)
    if kind == "flatten":
        n = 1
        for v in shape:
            n *= v
        return (n,)
    fail(f"unhandled kind {kind}")


def node_output_shape(node, shape, where="?"):
    if isinstance(node, BlockSpec):
        out = shape
        for j, layer in enumerate(node.layers):
            out = layer_output_shape(layer, out, f"{where}.{j}")
        if node.skip and out != shape:
            raise ShapeError(f"node {where}: skip needs block output {out} == input {shape}", dim=where)
        return out
    return layer_output_shape(node, shape, where)


def infer_shapes(model):
    """Activation shape after each top-level node; raises on the first mismatch."""
    if not model.input_shape:
        raise ShapeError("model has no input shape", dim="input")
    shape = tuple(model.input_shape)
    out = []
    for i, node in enumerate(model.nodes):
        shape = node_output_shape(node, shape, str(i))
        out.append(shape)
    return out


def _numel(shape):
    n = 1
    for v in shape:
        n *= v
    return n


def layer_cost(layer, in_shape, out_shape):
    """``(flops, params)`` of one layer for one sample."""
    params = sum(_numel(s) for s in layer.param_shapes().values())
    if layer.is_conv:
        _, ho, wo = out_shape
        flops = ho * wo * layer.out_channels * layer.kernel * layer.kernel * (layer.in_channels // layer.groups)
    elif layer.kind == "dense":
        flops = layer.in_channels * layer.out_channels
    elif layer.kind in ("affine", "pool"):
        flops = _numel(in_shape)
    else:
        flops = 0
    return flops, params


@dataclass
class ComplexityReport:
    flops: int = 0
    params: int = 0
    per_node: list = field(default_factory=list)

    def to_dict(self):
        return {"flops": self.flops, "params": self.params, "per_node": self.per_node}

    def totals(self):
        return self.flops, self.params

    def format_table(self):
        lines = [f"{'node':>6}  {'kind':<18} {'flops':>12} {'params':>10}"]
        for row in self.per_node:
            lines.append(f"{row['node']:>6}  {row['kind']:<18} {row['flops']:>12,d} {row['params']:>10,d}")
        lines.append(f"{'total':>6}  {'':<18} {self.flops:>12,d} {self.params:>10,d}")
        return "\n".join(lines)


def count_complexity(model):
    shape = tuple(model.input_shape)
    report = ComplexityReport()
    for i, node in enumerate(model.nodes):
        if isinstance(node, BlockSpec):
            flops = params = 0
            cur = shape
            for j, layer in enumerate(node.layers):
                nxt = layer_output_shape(layer, cur, f"{i}.{j}")
                f, p = layer_cost(layer, cur, nxt)
                flops, params, cur = flops + f, params + p, nxt
            if node.skip:
                flops += _numel(cur)
            kind = f"block[{node.block_type}]"
            out = cur
        else:
            out = layer_output_shape(node, shape, str(i))
            flops, params = layer_cost(node, shape, out)
            kind = node.kind
        report.per_node.append({"node": str(i), "kind": kind, "flops": flops, "params": params})
        report.flops += flops
        report.params += params
        shape = out
    return report
