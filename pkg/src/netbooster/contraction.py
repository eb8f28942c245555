"""Contraction: fold a linearized block back into the single layer it replaced.

Sequential stride-1 convolutions compose into one convolution whose
kernel is the full 2-D convolution of the two kernels::

    K[i,j,m,o] = sum_{s,t,n} K1[i-s, j-t, m, n] * K2[s, t, n, o]
    s in [max(0, i-k1+1), min(k2-1, i)],  t in [max(0, j-k1+1), min(k2-1, j)]

with merged size ``k1 + k2 - 1``. Per-channel scalings (1x1 depthwise
convs, affine layers), biases and the identity shortcut fold in exactly.
All fusion arithmetic is done in float64 and cast back at the end.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractionError, FusionError, ProvenanceError, ShapeError
from .graph.spec import BlockSpec, ModelGraph


def compose_kernels(k1, k2, t_lower_uses="k1"):
    """Merged kernel of ``conv(conv(x, k1), k2)`` for stride-1 layers.

    ``t_lower_uses="k2"`` evaluates the variant whose lower ``t`` bound is
    ``max(0, j - k2 + 1)``; out-of-range ``k1`` taps then read as zero. With
    that zero reading it agrees with the correct bound when ``k1 <= k2`` and
    drops taps when ``k1 > k2``. It is kept so the two forms can be compared.
    """
    k1 = np.asarray(k1, dtype=np.float64)
    k2 = np.asarray(k2, dtype=np.float64)
    ka, _, c1, c2 = k1.shape
    kb, _, c2b, c3 = k2.shape
    if c2 != c2b:
        raise ShapeError(f"inner channel mismatch: first kernel outputs {c2}, second expects {c2b}", dim="c2")
    k = ka + kb - 1
    t_width = {"k1": ka, "k2": kb}[t_lower_uses]
    out = np.zeros((k, k, c1, c3))
    for i in range(k):
        for j in range(k):
            for s in range(max(0, i - ka + 1), min(kb - 1, i) + 1):
                for t in range(max(0, j - t_width + 1), min(kb - 1, j) + 1):
                    if j - t >= ka:
                        continue
                    out[i, j] += k1[i - s, j - t] @ k2[s, t]
    return out


def fuse_conv_pair(k1, b1, k2, b2):
    """``(K, b)`` with ``conv(conv(x, k1) + b1, k2) + b2 == conv(x, K) + b``.

    Exact when both layers have stride 1 and the second has zero padding;
    the merged padding is the first layer's padding.
    """
    merged = compose_kernels(k1, k2)
    if b1 is None and b2 is None:
        return merged, None
    k2 = np.asarray(k2, dtype=np.float64)
    bias = np.zeros(k2.shape[3]) if b2 is None else np.asarray(b2, dtype=np.float64).copy()
    if b1 is not None:
        bias += np.einsum("n,stno->o", np.asarray(b1, dtype=np.float64), k2)
    return merged, bias


def fuse_dense_pair(w1, b1, w2, b2):
    """``(W, b)`` with ``(x @ w1 + b1) @ w2 + b2 == x @ W + b``."""
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape[1] != w2.shape[0]:
        raise ShapeError(f"inner dim mismatch: {w1.shape[1]} vs {w2.shape[0]}", dim="d2")
    w = w1 @ w2
    if b1 is None and b2 is None:
        return w, None
    b = np.zeros(w2.shape[1]) if b2 is None else np.asarray(b2, dtype=np.float64).copy()
    if b1 is not None:
        b += np.asarray(b1, dtype=np.float64) @ w2
    return w, b


def fuse_depthwise(dw_kernel, dw_bias, kernel, bias):
    """Absorb a 1x1 depthwise conv (per-channel scale ``d``) into the following conv or dense layer."""
    dw_kernel = np.asarray(dw_kernel, dtype=np.float64)
    if dw_kernel.ndim == 4:
        if dw_kernel.shape[0] != 1 or dw_kernel.shape[1] != 1:
            raise FusionError(f"depthwise kernel size {dw_kernel.shape[0]} > 1 cannot be folded")
        d = dw_kernel.reshape(-1)
    else:
        d = dw_kernel.reshape(-1)
    return fold_affine(d, dw_bias, kernel, bias, position="pre")


def fold_affine(scale, shift, kernel, bias, position="post", padding=0):
    """Fold ``y = scale * x + shift`` (per channel) into an adjacent conv or dense layer.

    ``position="pre"``: the affine feeds the layer (scales input channels,
    routes the shift through the kernel into the bias). ``"post"``: the
    affine consumes the layer's output.
    """
    k = np.asarray(kernel, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    cin, cout = k.shape[-2], k.shape[-1]
    if position == "post":
        if scale.shape != (cout,):
            raise ShapeError(f"affine has {scale.shape[0]} channels, layer outputs {cout}", dim="C")
        b = np.zeros(cout) if bias is None else np.asarray(bias, dtype=np.float64)
        new_b = b * scale
        if shift is not None:
            new_b = new_b + np.asarray(shift, dtype=np.float64)
        return k * scale, new_b
    if position != "pre":
        raise ValueError(f"position must be 'pre' or 'post', got {position!r}")
    if scale.shape != (cin,):
        raise ShapeError(f"affine has {scale.shape[0]} channels, layer expects {cin}", dim="C")
    new_k = k * scale[:, None]
    if shift is None:
        return new_k, (None if bias is None else np.asarray(bias, dtype=np.float64))
    shift = np.asarray(shift, dtype=np.float64)
    if padding and np.any(shift):
        raise FusionError("a shifted affine before a padded conv is not exactly foldable")
    b = np.zeros(cout) if bias is None else np.asarray(bias, dtype=np.float64)
    taps = k.reshape(-1, cin, cout)
    return new_k, b + np.einsum("m,amo->o", shift, taps)


def fold_skip(kernel, bias):
    """Add the identity shortcut: ``conv(x, K') + b == conv(x, K) + b + x``."""
    k = np.array(kernel, dtype=np.float64)
    cin, cout = k.shape[-2], k.shape[-1]
    if cin != cout:
        raise ShapeError(f"skip needs c_in == c_out, got {cin} -> {cout}", dim="C")
    if k.ndim == 2:
        k += np.eye(cin)
        return k, bias
    kh, kw = k.shape[:2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"skip needs an odd kernel, got {kh}x{kw}", dim="kernel")
    k[kh // 2, kw // 2] += np.eye(cin)
    return k, bias


@dataclass
class _Linear:
    kind: str  # "conv", "dense", "scale"
    weight: np.ndarray
    bias: np.ndarray = None
    padding: int = 0


@dataclass
class FusionChain:
    """Linear layers of one block (activations already at slope 1 and dropped)."""

    layers: list
    skip: bool
    source: str
    target: object


def _dense_from_grouped(w, groups):
    kh, kw, cg, cout = w.shape
    og = cout // groups
    full = np.zeros((kh, kw, cg * groups, cout))
    for g in range(groups):
        full[:, :, g * cg:(g + 1) * cg, g * og:(g + 1) * og] = w[:, :, :, g * og:(g + 1) * og]
    return full


def build_chain(model, index):
    block = model.nodes[index]
    if not isinstance(block, BlockSpec):
        raise FusionError(f"node {index} is not a block")
    layers = []
    for j, layer in enumerate(block.layers):
        nid = f"{index}.{j}"
        if layer.kind == "activation":
            if layer.alpha != 1.0:
                raise ContractionError(f"node {nid}: activation slope {layer.alpha} < 1, block is not linear",
                                       node=nid)
            continue
        if layer.is_conv and layer.stride != 1:
            raise FusionError(f"node {nid}: stride {layer.stride} inside a block cannot be fused")
        if layer.kind in ("pool", "flatten"):
            raise FusionError(f"node {nid}: {layer.kind} inside a block cannot be fused")
        layers.append((layer, model.node_params(nid)))
    return FusionChain(layers, block.skip, str(index), block.replaces)


def _to_linear(layer, params):
    if layer.kind == "depthwise_conv2d":
        if layer.kernel != 1:
            raise FusionError(f"depthwise kernel size {layer.kernel} > 1 cannot be fused")
        return _Linear("scale", np.asarray(params["weight"], dtype=np.float64).reshape(-1), params.get("bias"))
    if layer.kind == "affine":
        return _Linear("scale", np.asarray(params["scale"], dtype=np.float64), params.get("shift"))
    if layer.kind == "dense":
        return _Linear("dense", np.asarray(params["weight"], dtype=np.float64), params.get("bias"))
    if layer.kind == "conv2d":
        w = np.asarray(params["weight"], dtype=np.float64)
        if layer.groups > 1:
            w = _dense_from_grouped(w, layer.groups)
        return _Linear("conv", w, params.get("bias"), layer.padding)
    raise FusionError(f"cannot fuse layer kind {layer.kind!r}")


def fuse_chain(chain):
    """Collapse a chain to ``(weight, bias, padding)`` of one conv or dense layer."""
    items = [_to_linear(layer, params) for layer, params in chain.layers]
    if not any(it.kind != "scale" for it in items):
        raise FusionError("chain has no conv or dense layer to fuse into")
    # per-channel scalings fold into the following layer, else the preceding one
    while any(it.kind == "scale" for it in items):
        idx = next(i for i, it in enumerate(items) if it.kind == "scale")
        sc = items[idx]
        if idx + 1 < len(items) and items[idx + 1].kind != "scale":
            tgt = items[idx + 1]
            w, b = fold_affine(sc.weight, sc.bias, tgt.weight, tgt.bias, "pre", tgt.padding)
            items[idx + 1] = _Linear(tgt.kind, w, b, tgt.padding)
        elif idx > 0:
            prev = items[idx - 1]
            w, b = fold_affine(sc.weight, sc.bias, prev.weight, prev.bias, "post")
            items[idx - 1] = _Linear(prev.kind, w, b, prev.padding)
        else:
            # leading run of scalings: merge into the next scaling
            follow = items[idx + 1]
            s = sc.weight * follow.weight
            t = None
            if sc.bias is not None or follow.bias is not None:
                t = np.zeros_like(s) if follow.bias is None else np.asarray(follow.bias, dtype=np.float64).copy()
                if sc.bias is not None:
                    t += follow.weight * np.asarray(sc.bias, dtype=np.float64)
            items[idx + 1] = _Linear("scale", s, t)
        del items[idx]
    kinds = {it.kind for it in items}
    if len(kinds) != 1:
        raise FusionError("cannot fuse a mix of conv and dense layers")
    acc = items[0]
    w, b, pad = acc.weight, acc.bias, acc.padding
    for it in items[1:]:
        if it.kind == "dense":
            w, b = fuse_dense_pair(w, b, it.weight, it.bias)
        else:
            if it.padding != 0:
                raise FusionError("only the first conv of a chain may carry padding for an exact fusion")
            w, b = fuse_conv_pair(w, b, it.weight, it.bias)
    if chain.skip:
        w, b = fold_skip(w, b)
    return w, b, pad


def _fused_params(chain, dtype):
    w, b, pad = fuse_chain(chain)
    target = chain.target
    if target is None:
        raise ContractionError(f"block {chain.source} does not record the layer it replaced", node=chain.source)
    want = target.param_shapes()["weight"]
    if target.is_conv and target.groups != 1:
        raise ContractionError(f"block {chain.source}: grouped contraction targets are unsupported",
                               node=chain.source)
    if tuple(w.shape) != tuple(want):
        raise ContractionError(f"block {chain.source}: fused weight {w.shape} does not match target {want}",
                               node=chain.source)
    if target.is_conv and pad != target.padding:
        raise ContractionError(f"block {chain.source}: fused padding {pad} != target padding {target.padding}",
                               node=chain.source)
    params = {"weight": w.astype(dtype)}
    if target.bias:
        params["bias"] = (np.zeros(w.shape[-1]) if b is None else b).astype(dtype)
    elif b is not None and np.any(b):
        raise ContractionError(f"block {chain.source}: fused bias is non-zero but the target layer has no bias",
                               node=chain.source)
    return params


def contract_model(model):
    """Replace every linearized block by the layer it replaced (exact up to rounding)."""
    if model.provenance == "contracted":
        return model.copy()
    if model.provenance != "expanded":
        raise ProvenanceError(f"contraction needs an expanded model, got provenance {model.provenance!r}")
    nodes = list(model.nodes)
    fused = {}
    for i, _ in model.blocks():
        chain = build_chain(model, i)
        fused[i] = (chain.target, _fused_params(chain, model.dtype))
    params = {k: v.copy() for k, v in model.params.items() if int(k.split("/")[0].split(".")[0]) not in fused}
    for i, (target, p) in fused.items():
        nodes[i] = target
        for name, arr in p.items():
            params[f"{i}/{name}"] = arr
    out = ModelGraph(model.name, nodes, model.input_shape, params, "contracted", model.dtype)
    out.validate_params()
    return out
