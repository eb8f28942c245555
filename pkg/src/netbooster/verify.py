"""Randomized oracle suites: fusion exactness, convolution, tape gradients.

Every case is generated from ``numpy.random.default_rng([seed, case])`` so
a suite run is reproducible case by case. Each case yields one
:class:`OracleReport`.
"""

import numpy as np

from .contraction import FusionChain, fuse_chain
from .engine import GradientTape, backward, conv2d_forward
from .engine import autograd as ag
from .errors import UsageError
from .graph.init import init_params
from .graph.runtime import forward, layer_forward
from .graph.spec import BlockSpec, LayerSpec, ModelGraph
from .oracle import TOLERANCE, OracleReport, finite_diff_grad, oracle_chain, oracle_conv, relative_error

SUITES = ("fusion", "conv", "gradients")
FUSION_RATIOS = (2, 4, 6, 8)
GRAD_TOLERANCE = 1e-4
GRAD_ALPHAS = (0.0, 0.5, 1.0)


def _cast(params, dtype):
    return {k: np.asarray(v).astype(dtype) for k, v in params.items()}


def random_fusion_chain(rng):
    """pointwise -> depthwise 1x1 -> pointwise with slope-1 activations, random biases, affines and skip."""
    r = int(rng.choice(FUSION_RATIOS))
    c1 = int(rng.integers(1, 9))
    skip = bool(rng.random() < 0.5)
    c2 = c1 if skip else int(rng.integers(1, 9))
    hidden = r * c1
    h, w = (int(v) for v in rng.integers(1, 17, size=2))
    n = int(rng.integers(1, 3))

    def maybe_bias(cout):
        return {"bias": rng.normal(size=cout)} if rng.random() < 0.5 else {}

    def maybe_affine(c):
        if rng.random() < 0.5:
            return [(LayerSpec.affine(c), {"scale": rng.uniform(0.5, 1.5, c), "shift": rng.normal(size=c)})]
        return []

    lin = LayerSpec.activation("relu", 1.0)
    layers = maybe_affine(c1)
    p = maybe_bias(hidden)
    layers.append((LayerSpec.conv(c1, hidden, 1, bias="bias" in p), {"weight": rng.normal(size=(1, 1, c1, hidden)), **p}))
    layers += maybe_affine(hidden) + [(lin, {})]
    p = maybe_bias(hidden)
    layers.append((LayerSpec.depthwise(hidden, 1, bias="bias" in p), {"weight": rng.normal(size=(1, 1, 1, hidden)), **p}))
    layers += maybe_affine(hidden) + [(lin, {})]
    p = maybe_bias(c2)
    layers.append((LayerSpec.conv(hidden, c2, 1, bias="bias" in p), {"weight": rng.normal(size=(1, 1, hidden, c2)), **p}))
    layers += maybe_affine(c2)
    x = rng.normal(size=(n, c1, h, w))
    desc = {"ratio": r, "c1": c1, "c2": c2, "spatial": [h, w], "batch": n, "skip": skip,
            "layers": [layer.kind for layer, _ in layers]}
    return layers, skip, x, desc


def fusion_error(layers, skip, x, dtype):
    """Relative error of the fused single conv (engine, ``dtype``) against the layer-by-layer oracle."""
    cast = [(layer, _cast(p, dtype)) for layer, p in layers]
    xd = np.asarray(x).astype(dtype)
    ref = oracle_chain(cast, xd, skip=skip)
    linear = [(layer, p) for layer, p in cast if layer.kind != "activation"]
    w, b, pad = fuse_chain(FusionChain(linear, skip, "case", None))
    y = conv2d_forward(xd, w.astype(dtype), None if b is None else b.astype(dtype), 1, pad, 1)
    return relative_error(y, ref), w.shape


def fusion_case(seed, case, dtype="float64"):
    rng = np.random.default_rng([seed, case])
    layers, skip, x, desc = random_fusion_chain(rng)
    err, shape = fusion_error(layers, skip, x, dtype)
    desc["fused_kernel"] = list(shape)
    tol = TOLERANCE[dtype]
    return OracleReport("fusion", case, desc, dtype, err, tol, err <= tol)


def conv_case(seed, case, dtype="float64"):
    rng = np.random.default_rng([seed, case])
    groups = int(rng.choice([1, 1, 2, 3]))
    cg = int(rng.integers(1, 4))
    og = int(rng.integers(1, 4))
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, k // 2 + 1))
    h, w = (int(v) for v in rng.integers(k, 11, size=2))
    n = int(rng.integers(1, 3))
    x = rng.normal(size=(n, cg * groups, h, w)).astype(dtype)
    kernel = rng.normal(size=(k, k, cg, og * groups)).astype(dtype)
    bias = rng.normal(size=og * groups).astype(dtype) if rng.random() < 0.5 else None
    y = conv2d_forward(x, kernel, bias, stride, padding, groups)
    ref = oracle_conv(x, kernel, bias, stride, padding, groups)
    err = relative_error(y, ref)
    tol = TOLERANCE[dtype]
    desc = {"input": list(x.shape), "kernel": list(kernel.shape), "stride": stride, "padding": padding,
            "groups": groups, "bias": bias is not None}
    return OracleReport("conv", case, desc, dtype, err, tol, err <= tol)


def gradient_model(rng, alpha, act):
    """Small 64-bit net covering conv, affine, activation, a skip block with depthwise conv, and dense."""
    cin = int(rng.integers(1, 3))
    c = int(rng.integers(2, 4))
    s = int(rng.integers(4, 6))
    k = 3
    a = LayerSpec.activation(act, alpha)
    block = BlockSpec(
        (LayerSpec.conv(c, 2 * c, 1, bias=True), a, LayerSpec.depthwise(2 * c, 3, bias=True), a,
         LayerSpec.conv(2 * c, c, 1, bias=True)),
        skip=True, replaces=LayerSpec.conv(c, c, 1, bias=True),
    )
    nodes = [LayerSpec.conv(cin, c, 3, stride=2, bias=True), LayerSpec.affine(c), a, block,
             LayerSpec.pool(), LayerSpec.flatten(), LayerSpec.dense(c, k, bias=True)]
    model = ModelGraph("gradcheck", nodes, (cin, s, s), {}, "expanded", "float64")
    init_params(model, rng)
    for key, p in model.params.items():
        if key.endswith("/bias") or key.endswith("/shift"):
            p[...] = rng.normal(0, 0.3, size=p.shape)
        elif key.endswith("/scale"):
            p[...] = rng.uniform(0.5, 1.5, size=p.shape)
    x = rng.normal(size=(2,) + model.input_shape) * (2.0 if act == "relu6" else 1.0)
    y = rng.integers(0, k, size=2)
    return model, x, y


def kink_pattern(model, x):
    """Which side of every activation kink each pre-activation sits on (slope-1 sites have none)."""
    masks = []

    def run(layer, nid, h):
        if layer.kind == "activation" and layer.alpha < 1.0:
            masks.append(h > 0)
            if layer.act == "relu6":
                masks.append(h < 6)
        return layer_forward(layer, nid, model, h)

    h = np.asarray(x, dtype=model.dtype)
    for i, node in enumerate(model.nodes):
        if isinstance(node, BlockSpec):
            z = h
            for j, layer in enumerate(node.layers):
                z = run(layer, f"{i}.{j}", z)
            h = z + h if node.skip else z
        else:
            h = run(node, str(i), h)
    return np.concatenate([m.ravel() for m in masks]) if masks else np.zeros(0, bool)


def _param_type(model, key):
    nid, pname = key.split("/")
    layer = model.layer(nid)
    if pname in ("bias", "shift"):
        return "bias" if pname == "bias" else "affine"
    if layer.kind == "depthwise_conv2d":
        return "depthwise"
    return {"conv2d": "conv", "dense": "dense", "affine": "affine"}[layer.kind]


def gradient_case(seed, case, h=1e-3, max_attempts=200):
    """Tape gradients vs central differences for every parameter of a random small net.

    Central differences are only meaningful when no pre-activation crosses a
    kink inside the +-h probe; cases where any probe flips a kink side are
    redrawn, and the number of redraws is reported.
    """
    alpha = GRAD_ALPHAS[case % len(GRAD_ALPHAS)]
    act = "relu" if (case // len(GRAD_ALPHAS)) % 2 == 0 else "relu6"
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, case, attempt])
        model, x, y = gradient_model(rng, alpha, act)
        base = kink_pattern(model, x)
        crossed = []

        def loss_fn(m):
            if not np.array_equal(kink_pattern(m, x), base):
                crossed.append(True)
            return float(ag.cross_entropy(forward(m, x), y))

        tape = GradientTape()
        loss = ag.cross_entropy(forward(model, x, tape), y, tape)
        grads = backward(tape, np.ones((), dtype=loss.dtype))
        errors = {}
        for key in sorted(model.params):
            fd = finite_diff_grad(model, loss_fn, key, h)
            if crossed:
                break
            kind = _param_type(model, key)
            errors[kind] = max(errors.get(kind, 0.0), relative_error(grads[key], fd))
        if not crossed:
            break
    else:
        raise UsageError(f"gradient case {case}: no kink-free draw in {max_attempts} attempts")
    err = max(errors.values())
    desc = {"alpha": alpha, "act": act, "input": list(x.shape), "redraws": attempt,
            "per_type": {k: errors[k] for k in sorted(errors)}}
    return OracleReport("gradients", case, desc, "float64", err, GRAD_TOLERANCE, err <= GRAD_TOLERANCE)


_CASES = {"fusion": fusion_case, "conv": conv_case}


def run_suite(suite, cases, seed=0, dtype="float64"):
    """Yield one report per case for ``suite`` (``fusion``, ``conv``, ``gradients``)."""
    if cases < 1:
        raise UsageError(f"--cases must be >= 1, got {cases}")
    if suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
    if dtype not in TOLERANCE:
        raise UsageError(f"dtype must be one of {sorted(TOLERANCE)}")
    for case in range(cases):
        if suite == "gradients":
            yield gradient_case(seed, case)
        else:
            yield _CASES[suite](seed, case, dtype)
