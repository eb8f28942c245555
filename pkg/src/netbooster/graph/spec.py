"""Layer, block and model descriptions.

A model is an ordered list of nodes; each node is either a single
:class:`LayerSpec` or a :class:`BlockSpec` (a run of layers with an
optional identity shortcut). Node ids are positional strings: ``"4"`` for
top-level node 4 and ``"4.2"`` for layer 2 of the block at node 4.
Parameters live in a flat dict keyed ``"<node id>/<name>"``.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import RangeError, ShapeError, UnknownLayerKindError

LAYER_KINDS = ("conv2d", "depthwise_conv2d", "dense", "activation", "affine", "pool", "flatten")
ACTIVATIONS = ("relu", "relu6")
PROVENANCE = ("vanilla", "expanded", "contracted")
BLOCK_TYPES = ("inverted_residual", "basic", "bottleneck")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = False
    act: str = "relu"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UnknownLayerKindError(self.kind)
        if self.kind in ("conv2d", "depthwise_conv2d"):
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ShapeError(f"conv kernel size must be odd and >= 1, got {self.kernel}", dim="kernel")
            if self.stride < 1 or self.padding < 0:
                raise ShapeError(f"bad stride/padding {self.stride}/{self.padding}", dim="stride")
            if self.groups < 1 or self.in_channels % self.groups or self.out_channels % self.groups:
                raise ShapeError(
                    f"groups={self.groups} must divide channels {self.in_channels}->{self.out_channels}", dim="groups"
                )
            if self.kind == "depthwise_conv2d" and not (self.groups == self.in_channels == self.out_channels):
                raise ShapeError("depthwise conv needs groups == in_channels == out_channels", dim="groups")
        if self.kind == "activation":
            if self.act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.act!r}")
            if not 0.0 <= self.alpha <= 1.0:
                raise RangeError(f"activation alpha must lie in [0, 1], got {self.alpha}")

    # constructors

    @classmethod
    def conv(cls, cin, cout, kernel=1, stride=1, padding=None, groups=1, bias=False):
        if padding is None:
            padding = kernel // 2
        return cls("conv2d", cin, cout, kernel, stride, padding, groups, bias)

    @classmethod
    def depthwise(cls, channels, kernel=1, stride=1, padding=None, bias=False):
        if padding is None:
            padding = kernel // 2
        return cls("depthwise_conv2d", channels, channels, kernel, stride, padding, channels, bias)

    @classmethod
    def dense(cls, fin, fout, bias=True):
        return cls("dense", fin, fout, bias=bias)

    @classmethod
    def activation(cls, act="relu", alpha=0.0):
        return cls("activation", act=act, alpha=float(alpha))

    @classmethod
    def affine(cls, channels):
        return cls("affine", channels, channels)

    @classmethod
    def pool(cls):
        return cls("pool")

    @classmethod
    def flatten(cls):
        return cls("flatten")

    @property
    def is_conv(self):
        return self.kind in ("conv2d", "depthwise_conv2d")

    @property
    def is_pointwise(self):
        return self.kind == "conv2d" and self.kernel == 1 and self.stride == 1 and self.groups == 1

    def param_shapes(self):
        if self.is_conv:
            shapes = {"weight": (self.kernel, self.kernel, self.in_channels // self.groups, self.out_channels)}
        elif self.kind == "dense":
            shapes = {"weight": (self.in_channels, self.out_channels)}
        elif self.kind == "affine":
            return {"scale": (self.in_channels,), "shift": (self.in_channels,)}
        else:
            return {}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes

    def to_dict(self):
        d = {"kind": self.kind}
        if self.is_conv:
            d.update(in_channels=self.in_channels, out_channels=self.out_channels, kernel=self.kernel,
                     stride=self.stride, padding=self.padding, groups=self.groups, bias=self.bias)
        elif self.kind == "dense":
            d.update(in_features=self.in_channels, out_features=self.out_channels, bias=self.bias)
        elif self.kind == "affine":
            d.update(channels=self.in_channels)
        elif self.kind == "activation":
            d.update(act=self.act, alpha=self.alpha)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", None)
        if kind not in LAYER_KINDS:
            raise UnknownLayerKindError(kind)
        if kind == "conv2d":
            return cls.conv(d["in_channels"], d["out_channels"], d.get("kernel", 1), d.get("stride", 1),
                            d.get("padding"), d.get("groups", 1), d.get("bias", False))
        if kind == "depthwise_conv2d":
            return cls.depthwise(d["in_channels"], d.get("kernel", 1), d.get("stride", 1), d.get("padding"),
                                 d.get("bias", False))
        if kind == "dense":
            return cls.dense(d["in_features"], d["out_features"], d.get("bias", True))
        if kind == "affine":
            return cls.affine(d["channels"])
        if kind == "activation":
            return cls.activation(d.get("act", "relu"), d.get("alpha", 0.0))
        return cls(kind)


@dataclass(frozen=True)
class BlockSpec:
    """A sequential run of layers, optionally wrapped by an identity shortcut.

    ``replaces`` is the single layer this block stands in for; contraction
    restores exactly that spec.
    """

    layers: tuple
    skip: bool = False
    replaces: LayerSpec = None
    block_type: str = "inverted_residual"

    def to_dict(self):
        return {
            "kind": "block",
            "block_type": self.block_type,
            "skip": self.skip,
            "replaces": None if self.replaces is None else self.replaces.to_dict(),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        rep = d.get("replaces")
        return cls(
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            skip=bool(d.get("skip", False)),
            replaces=None if rep is None else LayerSpec.from_dict(rep),
            block_type=d.get("block_type", "inverted_residual"),
        )


def node_from_dict(d):
    if d.get("kind") == "block":
        return BlockSpec.from_dict(d)
    return LayerSpec.from_dict(d)


@dataclass
class ModelGraph:
    name: str
    nodes: list
    input_shape: tuple
    params: dict = field(default_factory=dict)
    provenance: str = "vanilla"
    dtype: str = "float32"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def iter_layers(self):
        """Yield ``(node id, LayerSpec)`` for every layer, descending into blocks."""
        for i, node in enumerate(self.nodes):
            if isinstance(node, BlockSpec):
                for j, layer in enumerate(node.layers):
                    yield f"{i}.{j}", layer
            else:
                yield str(i), node

    def layer(self, node_id):
        parts = [int(p) for p in str(node_id).split(".")]
        node = self.nodes[parts[0]]
        if len(parts) == 1:
            return node
        return node.layers[parts[1]]

    def node_params(self, node_id):
        prefix = f"{node_id}/"
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def blocks(self):
        return [(i, n) for i, n in enumerate(self.nodes) if isinstance(n, BlockSpec)]

    def copy(self, deep_params=True):
        params = {k: v.copy() for k, v in self.params.items()} if deep_params else dict(self.params)
        return ModelGraph(self.name, list(self.nodes), self.input_shape, params, self.provenance, self.dtype)

    def with_nodes(self, nodes, **changes):
        m = ModelGraph(self.name, list(nodes), self.input_shape, self.params, self.provenance, self.dtype)
        for k, v in changes.items():
            setattr(m, k, v)
        return m

    def architecture(self):
        return {"input_shape": list(self.input_shape), "nodes": [n.to_dict() for n in self.nodes]}

    def architecture_hash(self):
        """Hash of the spec-level architecture (ignores name, provenance and weights)."""
        blob = json.dumps(self.architecture(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def astype(self, dtype):
        m = self.copy(deep_params=False)
        m.dtype = np.dtype(dtype).name
        m.params = {k: v.astype(m.dtype) for k, v in self.params.items()}
        return m

    def validate_params(self):
        """Check every parameterized layer has tensors of the right shapes and nothing extra."""
        expected = {}
        for nid, layer in self.iter_layers():
            for pname, shape in layer.param_shapes().items():
                expected[f"{nid}/{pname}"] = shape
        missing = sorted(set(expected) - set(self.params))
        extra = sorted(set(self.params) - set(expected))
        if missing or extra:
            raise ShapeError(f"parameter store mismatch: missing {missing}, unexpected {extra}", dim="params")
        for key, shape in expected.items():
            if tuple(self.params[key].shape) != tuple(shape):
                raise ShapeError(f"parameter {key} has shape {self.params[key].shape}, spec needs {shape}", dim=key)


def set_alpha(layer, alpha):
    return replace(layer, alpha=float(alpha))


def structurally_equal(a, b):
    if a.architecture() != b.architecture() or a.provenance != b.provenance or a.name != b.name:
        return False
    if a.dtype != b.dtype or set(a.params) != set(b.params):
        return False
    return all(a.params[k].dtype == b.params[k].dtype and np.array_equal(a.params[k], b.params[k])
               for k in a.params)
