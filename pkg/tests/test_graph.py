import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netbooster.errors import ModelFormatError, ShapeError, UnknownLayerKindError, VersionError
from netbooster.graph import (
    LayerSpec,
    ModelGraph,
    count_complexity,
    desk_tnn,
    infer_shapes,
    load_model,
    save_model,
)
from netbooster.graph.init import init_params
from netbooster.graph.io import model_from_bytes, model_to_bytes
from netbooster.graph.spec import structurally_equal

# hand-traced per-node output shapes of the default desk TNN (1x12x12 input, width 8)
DESK_SHAPES = (
    [(8, 12, 12)] * 3 + [(16, 12, 12)] * 3 + [(16, 6, 6)] * 3 + [(16, 6, 6)] * 3 + [(16, 6, 6)] * 3
    + [(24, 6, 6)] * 3 + [(24, 3, 3)] * 3 + [(24, 3, 3)] * 3 + [(24, 3, 3)] * 3 + [(32, 3, 3)] * 3
    + [(32, 3, 3)] * 3 + [(32, 1, 1), (32,), (32,), (32,), (10,)]
)


def _model(nodes, shape, seed=0, dtype="float64"):
    return init_params(ModelGraph("t", nodes, shape, dtype=dtype), np.random.default_rng(seed))


def test_same_padding_keeps_extent():
    m = ModelGraph("t", [LayerSpec.conv(3, 5, 3, padding=1)], (3, 8, 8))
    assert infer_shapes(m) == [(5, 8, 8)]


def test_pointwise_channel_extent():
    m = ModelGraph("t", [LayerSpec.conv(4, 16, 1)], (4, 6, 6))
    assert infer_shapes(m)[-1][0] == 16


def test_desk_tnn_shape_table():
    assert infer_shapes(desk_tnn()) == DESK_SHAPES


def test_shape_mismatch_names_node():
    m = ModelGraph("t", [LayerSpec.conv(3, 4, 1), LayerSpec.conv(5, 2, 1)], (3, 4, 4))
    with pytest.raises(ShapeError, match="node 1"):
        infer_shapes(m)


def test_pointwise_complexity():
    m = ModelGraph("t", [LayerSpec.conv(4, 8, 1)], (4, 8, 8))
    r = count_complexity(m)
    assert (r.flops, r.params) == (2048, 32)
    rb = count_complexity(ModelGraph("t", [LayerSpec.conv(4, 8, 1, bias=True)], (4, 8, 8)))
    assert rb.params == 40


def test_depthwise_complexity():
    r = count_complexity(ModelGraph("t", [LayerSpec.depthwise(8, 3)], (8, 8, 8)))
    assert (r.flops, r.params) == (4608, 72)


def test_complexity_totals_are_additive():
    r = count_complexity(desk_tnn())
    assert r.flops == sum(row["flops"] for row in r.per_node)
    assert r.params == sum(row["params"] for row in r.per_node)
    assert (r.flops, r.params) == (96312, 5778)


@given(seed=st.integers(0, 10_000))
def test_complexity_ignores_parameter_values(seed):
    a, b = desk_tnn(seed=0), desk_tnn(seed=seed)
    assert count_complexity(a).to_dict() == count_complexity(b).to_dict()


@pytest.mark.parametrize("kernel", [0, 2, 4])
def test_even_or_zero_kernels_rejected(kernel):
    with pytest.raises((ShapeError, ValueError)):
        LayerSpec.conv(2, 2, kernel)


def test_activation_alpha_must_be_in_unit_interval():
    with pytest.raises(ValueError):
        LayerSpec.activation("relu", 1.5)


def test_save_load_round_trip(tmp_path):
    m = desk_tnn(seed=3)
    path = tmp_path / "m.nbm"
    save_model(m, path)
    back = load_model(path)
    assert structurally_equal(m, back)
    assert back.architecture_hash() == m.architecture_hash()


@given(seed=st.integers(0, 2**31), dtype=st.sampled_from(["float32", "float64"]))
def test_round_trip_is_identity(seed, dtype):
    m = desk_tnn(seed=seed, dtype=dtype)
    back = model_from_bytes(model_to_bytes(m))
    assert structurally_equal(m, back)


def test_truncated_blob_is_rejected():
    data = model_to_bytes(desk_tnn())
    with pytest.raises(ModelFormatError, match="truncated") as exc:
        model_from_bytes(data[:-5])
    assert exc.value.offset == len(data) - 5


def test_truncated_header_is_rejected():
    data = model_to_bytes(desk_tnn())
    with pytest.raises(ModelFormatError):
        model_from_bytes(data[:40])


def test_bad_magic_reports_offset_zero():
    data = bytearray(model_to_bytes(desk_tnn()))
    data[0:4] = b"XXXX"
    with pytest.raises(ModelFormatError) as exc:
        model_from_bytes(bytes(data))
    assert exc.value.offset == 0


def _rewrite_header(data, edit):
    _, version, hlen = struct.unpack_from("<4sIQ", data, 0)
    header = json.loads(data[16:16 + hlen])
    edit(header)
    hb = json.dumps(header).encode()
    return struct.pack("<4sIQ", b"NBM\x00", version, len(hb)) + hb + data[16 + hlen:]


def test_unknown_layer_kind_is_named():
    data = model_to_bytes(desk_tnn())

    def edit(h):
        h["nodes"][0]["kind"] = "deformable_conv"

    with pytest.raises(UnknownLayerKindError, match="deformable_conv"):
        model_from_bytes(_rewrite_header(data, edit))


def test_version_mismatch():
    data = bytearray(model_to_bytes(desk_tnn()))
    struct.pack_into("<I", data, 4, 99)
    with pytest.raises(VersionError):
        model_from_bytes(bytes(data))


def test_architecture_hash_ignores_weights_and_name():
    a, b = desk_tnn(seed=1), desk_tnn(seed=2)
    b.name = "other"
    assert a.architecture_hash() == b.architecture_hash()
    c = desk_tnn(width=4)
    assert c.architecture_hash() != a.architecture_hash()


def test_validate_params_catches_missing_tensor():
    m = _model([LayerSpec.conv(2, 3, 1, bias=True)], (2, 4, 4))
    del m.params["0/bias"]
    with pytest.raises(ShapeError):
        m.validate_params()
