"""Spiking inference: rate-based conversion of a trained CNN plus
fixed-point weight quantization.

The converted network uses integrate-and-fire units with reset by
subtraction: each time step a neuron adds its input current to a membrane
potential, and whenever the potential reaches the threshold it emits a
spike and the threshold value is subtracted. The hidden layer is driven by
the analog input (constant current each step); the output layer integrates
the hidden spike train, and the bin with the most output spikes wins.

Conversion rescales each layer so that the chosen activation percentile of
the source network maps onto a threshold of 1; layers whose activations
already stay within 1 are left untouched.
"""

import copy
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .decoders import CnnDecoder, _as_grids
from .errors import InvalidArgument

DEFAULT_TIME_STEPS = 32
DEFAULT_PERCENTILE = 99.9


def quantize_array(weights: np.ndarray, bits: int):
    """Symmetric per-array fixed point: ``q = round(w / scale * (2^(b-1)-1))``.

    Returns ``(q, scale)`` with ``q`` int16. An all-zero array keeps scale 0
    and stays all zero.
    """
    if not 2 <= bits <= 16:
        raise InvalidArgument(f"bit width must lie in [2, 16], got {bits}")
    weights = np.asarray(weights, dtype=float)
    scale = float(np.max(np.abs(weights))) if weights.size else 0.0
    if scale == 0.0:
        return np.zeros(weights.shape, dtype=np.int16), 0.0
    levels = (1 << (bits - 1)) - 1
    q = np.rint(weights / scale * levels).astype(np.int16)
    return q, scale


def dequantize_array(q: np.ndarray, scale: float, bits: int) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(np.asarray(q).shape, dtype=float)
    levels = (1 << (bits - 1)) - 1
    return np.asarray(q, dtype=float) * (scale / levels)


def quantize(model, bits: int):
    """Return a copy of a fitted decoder with every weight array quantized.

    Arithmetic keeps using the dequantized float values; the integer codes
    and per-array scales are what a fixed-point implementation would store.
    """
    if not 2 <= bits <= 16:
        raise InvalidArgument(f"bit width must lie in [2, 16], got {bits}")
    out = copy.deepcopy(model)
    scales = {}
    for attr in model._weight_attrs:
        q, scale = quantize_array(getattr(model, attr), bits)
        scales[attr] = scale
        setattr(out, attr, dequantize_array(q, scale, bits))
    out.bits_ = bits
    out.scales_ = scales
    return out


def iaf_step(potential: np.ndarray, current: np.ndarray, threshold: float):
    """One integrate-and-fire step with reset by subtraction.

    Adds the current, emits at most one spike per neuron, subtracts the
    threshold where a spike fired. Returns the spike matrix (float 0/1).
    """
    potential += current
    spikes = (potential >= threshold).astype(float)
    potential -= spikes * threshold
    return spikes


class SnnDecoder(BaseEstimator, ClassifierMixin):
    """Integrate-and-fire network converted from a trained categorical CNN."""

    _weight_attrs = ("conv_w_", "conv_b_", "fc_w_", "fc_b_")

    def __init__(
        self,
        time_steps: int = DEFAULT_TIME_STEPS,
        bits: int = 0,
        percentile: float = DEFAULT_PERCENTILE,
        kernel: int = 3,
    ):
        self.time_steps = time_steps
        self.bits = bits
        self.percentile = percentile
        self.kernel = kernel

    @classmethod
    def from_cnn(
        cls,
        cnn: CnnDecoder,
        calibration_inputs,
        time_steps: int = DEFAULT_TIME_STEPS,
        bits: int = 0,
        percentile: float = DEFAULT_PERCENTILE,
    ) -> "SnnDecoder":
        """Convert a trained CNN using data-based threshold normalization.

        ``calibration_inputs`` must come from the training split; their
        rectified activations set the per-layer scale so the given
        percentile of each layer maps to a threshold of 1. Optionally
        quantizes the rescaled weights to ``bits``.
        """
        if time_steps < 1:
            raise InvalidArgument("time_steps must be >= 1")
        if cnn.encoding != "categorical":
            raise InvalidArgument("spike-count readout needs a categorical source network")
        hidden = cnn.hidden_activations(calibration_inputs)
        out_raw = hidden @ cnn.fc_w_ + cnn.fc_b_
        lam_in = 1.0
        lam_hidden = max(1.0, float(np.percentile(hidden, percentile)))
        lam_out = max(1.0, float(np.percentile(np.maximum(out_raw, 0.0), percentile)))

        snn = cls(time_steps=time_steps, bits=bits, percentile=percentile, kernel=cnn.kernel)
        snn.conv_w_ = cnn.conv_w_ * (lam_in / lam_hidden)
        snn.conv_b_ = cnn.conv_b_ / lam_hidden
        snn.fc_w_ = cnn.fc_w_ * (lam_hidden / lam_out)
        snn.fc_b_ = cnn.fc_b_ / lam_out
        snn.thresholds_ = np.array([1.0, 1.0])
        snn.side_ = cnn.side_
        snn.filters_ = cnn.filters
        snn.bits_ = 0
        snn.scales_ = {}
        if bits:
            quantized = quantize(snn, bits)
            for attr in cls._weight_attrs:
                setattr(snn, attr, getattr(quantized, attr))
            snn.bits_ = quantized.bits_
            snn.scales_ = quantized.scales_
        return snn

    def _input_current(self, X) -> np.ndarray:
        grids = _as_grids(X)
        if grids.shape[1] != self.side_:
            raise InvalidArgument(
                f"expected {self.side_}x{self.side_} inputs, got {grids.shape[1:]}"
            )
        view = np.lib.stride_tricks.sliding_window_view(
            grids, (self.kernel, self.kernel), axis=(1, 2)
        )
        n = len(grids)
        patches = view.reshape(n, -1, self.kernel * self.kernel)
        return (patches @ self.conv_w_ + self.conv_b_).reshape(n, -1)

    def spike_counts(self, X) -> np.ndarray:
        """Output spike counts over the configured number of time steps."""
        current = self._input_current(X)
        n = len(current)
        out_dim = self.fc_w_.shape[1]
        pot_hidden = np.zeros_like(current)
        pot_out = np.zeros((n, out_dim))
        counts = np.zeros((n, out_dim), dtype=np.int64)
        th_hidden, th_out = self.thresholds_
        for _ in range(self.time_steps):
            spikes = iaf_step(pot_hidden, current, th_hidden)
            out_spikes = iaf_step(pot_out, spikes @ self.fc_w_ + self.fc_b_, th_out)
            counts += out_spikes.astype(np.int64)
        return counts

    def decision_scores(self, X) -> np.ndarray:
        return self.spike_counts(X).astype(float)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.spike_counts(X), axis=1)
