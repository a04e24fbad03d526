"""Bitlayer-decomposed quantized inference."""

from ._core import (
    Dataset,
    Model,
    QuantizedLayer,
    decompose,
    eval_accuracy,
    float_matvec,
    int_matvec,
    load_dataset,
    load_model,
    matvec,
    optimize_clip,
    quantize_round,
)

__all__ = [
    "Dataset",
    "Model",
    "QuantizedLayer",
    "decompose",
    "eval_accuracy",
    "float_matvec",
    "int_matvec",
    "load_dataset",
    "load_model",
    "matvec",
    "optimize_clip",
    "quantize_round",
]
