"""Batch predictors bridging trained models to the evaluation loop."""

from __future__ import annotations

import numpy as np

from .network import NetworkSpec, forward
from .quantize import IntegerModel, fq_forward, int_forward


def float_predictor(spec: NetworkSpec, weights: list):
    def predict(X):
        return forward(spec, weights, np.asarray(X, dtype=weights_dtype))
    weights_dtype = next(w[0].dtype for w in weights if w is not None)
    return predict


def fakequant_predictor(spec: NetworkSpec, fq_weights: list, qparams: list,
                        input_exponent: int = 0):
    def predict(X):
        out, _ = fq_forward(spec, fq_weights, qparams, X, input_exponent)
        return out
    return predict


def integer_predictor(model: IntegerModel):
    def predict(X):
        _, dequant = int_forward(model, X)
        return dequant
    return predict
