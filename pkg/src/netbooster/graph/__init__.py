"""Model representation: layer specs, shape inference, complexity, file format."""

from .io import load_model, save_model
from .presets import desk_tnn
from .runtime import forward, predict
from .shapes import ComplexityReport, count_complexity, infer_shapes
from .spec import BlockSpec, LayerSpec, ModelGraph

__all__ = [
    "BlockSpec",
    "ComplexityReport",
    "LayerSpec",
    "ModelGraph",
    "count_complexity",
    "desk_tnn",
    "forward",
    "infer_shapes",
    "load_model",
    "predict",
    "save_model",
]
