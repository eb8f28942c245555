import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netbooster.contraction import contract_model
from netbooster.errors import ExpansionError, ProvenanceError, ReceptiveFieldError
from netbooster.expansion import (
    ExpansionPlan,
    expand_layer,
    expand_model,
    expandable_layers,
    make_plan,
    receptive_field,
    select_targets,
)
from netbooster.graph import BlockSpec, LayerSpec, ModelGraph, count_complexity, desk_tnn, infer_shapes
from netbooster.graph.init import init_params
from netbooster.plt import block_activations, set_alphas


def pointwise_stack(e, c=4):
    nodes = []
    for _ in range(e):
        nodes += [LayerSpec.conv(c, c, 1), LayerSpec.activation()]
    return init_params(ModelGraph("stack", nodes, (c, 3, 3)), np.random.default_rng(0))


def ranks(model, targets):
    cands = expandable_layers(model)
    return [cands.index(t) for t in targets]


@pytest.mark.parametrize(
    "e,fraction,expected",
    [(16, 0.5, list(range(0, 16, 2))), (5, 1.0, [0, 1, 2, 3, 4]), (7, 0.5, [0, 1, 3, 5])],
)
def test_select_targets_examples(e, fraction, expected):
    m = pointwise_stack(e)
    assert ranks(m, select_targets(m, fraction)) == expected


def test_select_targets_zero_picks():
    with pytest.raises(ExpansionError):
        select_targets(pointwise_stack(3), 0.1)


def test_select_targets_no_candidates():
    m = ModelGraph("t", [LayerSpec.conv(1, 2, 3)], (1, 5, 5))
    with pytest.raises(ExpansionError):
        select_targets(m, 0.5)


@given(e=st.integers(1, 40), fraction=st.floats(0.01, 1.0))
def test_uniform_selection_is_evenly_spaced(e, fraction):
    n = int(np.floor(fraction * e + 0.5))
    if n == 0:
        return
    m = pointwise_stack(e, c=1)
    r = ranks(m, select_targets(m, fraction))
    assert r == sorted(set(r)) and len(r) == n and r[0] == 0
    gaps = np.diff(r + [r[0] + e])
    assert gaps.max() - gaps.min() <= 1
    assert select_targets(m, fraction) == select_targets(m, fraction)


@pytest.mark.parametrize("location,expected", [("first", [0, 1]), ("last", [3, 4]), ("middle", [1, 2])])
def test_location_variants(location, expected):
    m = pointwise_stack(5)
    assert ranks(m, select_targets(m, 0.4, location)) == expected


def test_expand_pointwise_without_skip():
    plan = ExpansionPlan((0,), expansion_ratio=6)
    block = expand_layer(LayerSpec.conv(4, 8, 1), plan)
    kinds = [(l.kind, l.in_channels, l.out_channels, l.kernel) for l in block.layers if l.kind != "activation"]
    assert kinds == [("conv2d", 4, 24, 1), ("depthwise_conv2d", 24, 24, 1), ("conv2d", 24, 8, 1)]
    assert [l.kind for l in block.layers] == ["conv2d", "activation", "depthwise_conv2d", "activation", "conv2d"]
    assert not block.skip


def test_expand_square_pointwise_adds_skip():
    block = expand_layer(LayerSpec.conv(8, 8, 1), ExpansionPlan((0,)))
    assert block.skip and block.layers[0].out_channels == 48
    assert not expand_layer(LayerSpec.conv(8, 8, 1), ExpansionPlan((0,), include_skip=False)).skip


def test_expand_dense_layer():
    block = expand_layer(LayerSpec.dense(10, 20), ExpansionPlan((0,), expansion_ratio=6))
    assert [l.kind for l in block.layers] == ["dense", "activation", "dense"]
    assert [(l.in_channels, l.out_channels) for l in block.layers[::2]] == [(10, 60), (60, 20)]


@pytest.mark.parametrize("layer", [LayerSpec.conv(4, 4, 1, stride=2), LayerSpec.depthwise(4, 3),
                                   LayerSpec.activation(), LayerSpec.conv(4, 4, 1, groups=2)])
def test_non_expandable_layers(layer):
    with pytest.raises(ExpansionError):
        expand_layer(layer, ExpansionPlan((0,)))


def test_receptive_field_examples():
    c = LayerSpec.conv(2, 2, 1)
    assert receptive_field(BlockSpec((c, c, c), False, c)) == 1
    k3 = LayerSpec.conv(2, 2, 3)
    assert receptive_field(BlockSpec((k3, k3), False, c)) == 5
    assert receptive_field(BlockSpec((c, LayerSpec.depthwise(2, 3), c), False, c)) == 3


def test_receptive_field_rejects_stride_inside_block():
    c = LayerSpec.conv(2, 2, 1)
    with pytest.raises(ReceptiveFieldError):
        receptive_field(BlockSpec((c, LayerSpec.conv(2, 2, 1, stride=2)), False, c))


def test_basic_block_expansion_is_rejected():
    m = desk_tnn()
    plan = ExpansionPlan((3,), block_type="basic")
    with pytest.raises(ReceptiveFieldError, match="node 3"):
        expand_model(m, plan)


def test_depthwise_3x3_inside_block_is_rejected():
    with pytest.raises(ReceptiveFieldError):
        expand_model(desk_tnn(), ExpansionPlan((3,), dw_kernel=3))


def test_desk_plan_and_complexity():
    m = desk_tnn()
    plan = make_plan(m, 0.5, 6)
    assert len(expandable_layers(m)) == 8
    assert plan.targets == (3, 15, 27, 35)
    g = expand_model(m, plan)
    assert g.provenance == "expanded"
    ex, va = count_complexity(g), count_complexity(m)
    assert ex.flops > va.flops
    assert (ex.flops, ex.params) == (456808, 29298)


def test_expand_keeps_untouched_nodes_and_io_shapes():
    m = desk_tnn()
    plan = make_plan(m, 0.5, 4)
    g = expand_model(m, plan)
    assert infer_shapes(g)[-1] == infer_shapes(m)[-1]
    assert g.input_shape == m.input_shape
    for i, node in enumerate(m.nodes):
        if i not in plan.targets:
            assert g.nodes[i] == node
            for k, v in m.node_params(str(i)).items():
                np.testing.assert_array_equal(g.params[f"{i}/{k}"], v)
    for i in plan.targets:
        assert receptive_field(g.nodes[i]) == receptive_field(m.nodes[i])


def test_expand_twice_rejected():
    m = desk_tnn()
    g = expand_model(m, make_plan(m))
    with pytest.raises(ProvenanceError):
        expand_model(g, make_plan(m))


@pytest.mark.parametrize("ratio", [1, 2, 4, 6, 8])
@pytest.mark.parametrize("fraction", [0.25, 0.5, 1.0])
def test_expand_then_contract_restores_architecture(ratio, fraction):
    m = desk_tnn()
    g = expand_model(m, make_plan(m, fraction, ratio))
    lin = set_alphas(g, block_activations(g), 1.0)
    c = contract_model(lin)
    assert c.architecture_hash() == m.architecture_hash()
    assert count_complexity(c).to_dict() == count_complexity(m).to_dict()


def test_plan_rejects_bad_ratio_and_kernel():
    with pytest.raises(ExpansionError):
        ExpansionPlan((0,), expansion_ratio=0)
    with pytest.raises(ExpansionError):
        ExpansionPlan((0,), dw_kernel=2)


def test_zero_init_residual_starts_skip_blocks_as_identity():
    m = desk_tnn()
    plan = make_plan(m, 1.0, 4, zero_init_residual=True)
    g = expand_model(m, plan)
    skips = [t for t in plan.targets if g.nodes[t].skip]
    plain = [t for t in plan.targets if not g.nodes[t].skip]
    assert skips and plain
    c = contract_model(set_alphas(g, block_activations(g), 1.0))
    for t in skips:
        w = c.params[f"{t}/weight"]
        eye = np.eye(w.shape[-1], dtype=w.dtype)
        np.testing.assert_array_equal(w.reshape(eye.shape), eye)
        last = len(g.nodes[t].layers) - 1
        assert np.any(g.params[f"{t}.0/weight"] != 0)
        assert not np.any(g.params[f"{t}.{last}/weight"])
    for t in plain:
        last = len(g.nodes[t].layers) - 1
        assert np.any(g.params[f"{t}.{last}/weight"] != 0)
    # without the flag every block keeps its random init
    g0 = expand_model(m, make_plan(m, 1.0, 4))
    for t in skips:
        assert np.any(g0.params[f"{t}.{len(g0.nodes[t].layers) - 1}/weight"] != 0)
