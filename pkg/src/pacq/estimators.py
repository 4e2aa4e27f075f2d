"""scikit-learn style wrappers: an RTN weight quantizer and a packed-weight GEMM."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import dataflow, quantpack
from .pmul import AccumulatorPolicy, DpConfig
from .quantpack import GroupSpec, PackSpec


class RTNQuantizer(TransformerMixin, BaseEstimator):
    """Round-to-nearest group quantizer for a ``[k, n]`` weight matrix.

    ``fit`` computes the FP16 group scales, ``transform`` returns the signed
    integer codes and ``inverse_transform`` the FP16-dequantized weights.
    """

    def __init__(self, bits: int = 4, group="32x4"):
        self.bits = bits
        self.group = group

    def fit(self, W, y=None):
        W = check_array(W, dtype=np.float64)
        q = quantpack.rtn_quantize(W, self.bits, self.group)
        self.scales_ = q.scales
        self.group_ = q.group
        self.n_features_in_ = W.shape[1]
        self.shape_ = W.shape
        return self

    def _quantized(self, W) -> quantpack.QuantizedWeights:
        check_is_fitted(self, "scales_")
        W = check_array(W, dtype=np.float64)
        if W.shape != self.shape_:
            raise ValueError(f"expected weights of shape {self.shape_}, got {W.shape}")
        g = self.group_
        lo, hi = quantpack.qrange(self.bits)
        scales = self.scales_.view(np.float16).astype(np.float64)
        full = np.repeat(np.repeat(scales, g.gk, axis=0), g.gn, axis=1)
        vals = np.clip(np.rint(W / full), lo, hi).astype(np.int8)
        return quantpack.QuantizedWeights(vals, self.scales_, self.bits, g)

    def transform(self, W):
        return self._quantized(W).values

    def inverse_transform(self, Q):
        check_is_fitted(self, "scales_")
        Q = check_array(Q, dtype=np.int64)
        q = quantpack.QuantizedWeights(Q.astype(np.int8), self.scales_, self.bits, self.group_)
        return quantpack.dequantize(q)

    def quantized(self, W) -> quantpack.QuantizedWeights:
        return self._quantized(W)


class PackedGEMM(BaseEstimator):
    """FP16 activations times quantized, packed weights on a simulated flow.

    ``fit(W)`` quantizes and packs ``W`` (``[k, n]``); ``predict(A)`` returns
    ``A @ W`` as float16 computed bit-exactly by the chosen flow.  The
    counters and arithmetic flags of the last call are kept in
    ``counters_`` and ``flags_``.
    """

    def __init__(self, flow="npack", bits: int = 4, group="32x4", acc="wide",
                 dup_factor: int = 2, dp_width: int = 4):
        self.flow = flow
        self.bits = bits
        self.group = group
        self.acc = acc
        self.dup_factor = dup_factor
        self.dp_width = dp_width

    def _hw(self) -> dataflow.HwConfig:
        return dataflow.HwConfig(dp=DpConfig(dp_width=self.dp_width, dup_factor=self.dup_factor),
                                 acc=AccumulatorPolicy.parse(self.acc))

    def fit(self, W, y=None):
        W = check_array(W, dtype=np.float64)
        flow = dataflow.FlowKind.parse(self.flow)
        GroupSpec.parse(self.group).check(*W.shape)
        self.quantized_ = quantpack.rtn_quantize(W, self.bits, self.group)
        dim = flow.pack_dim or "n"
        self.packed_ = quantpack.pack(self.quantized_, PackSpec(self.bits, dim))
        self.n_features_in_ = W.shape[0]
        self.flow_ = flow
        return self

    def predict(self, A):
        check_is_fitted(self, "packed_")
        A = np.asarray(A)
        if A.dtype not in (np.float16, np.uint16):
            A = check_array(A, dtype=np.float64).astype(np.float16)
        if A.ndim != 2 or A.shape[1] != self.n_features_in_:
            raise ValueError(f"expected activations with {self.n_features_in_} columns, "
                             f"got shape {A.shape}")
        k, n = self.packed_.shape
        shape = dataflow.GemmShape(A.shape[0], n, k)
        res = dataflow.simulate(shape, self.flow_, self._hw(), A, self.packed_)
        self.counters_ = res.counters
        self.flags_ = res.flags
        return res.C.view(np.float16)

    transform = predict
