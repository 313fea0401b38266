"""Position decoders over extracted traces.

Input construction: the strongest contours (by peak trace) are arranged
into a square grid and min-max normalized to [0, 1] using training-split
bounds only. Two output encodings are supported for the 24 track bins:

* categorical — 24 nodes, softmax cross-entropy, argmax readout;
* ordinal — 12 nodes forming a thermometer-style code: bins 0..11 map to
  a growing prefix of 1s, bins 12..23 to a growing prefix of 0s, and the
  leading-run length of the thresholded outputs identifies the bin.

The decoders themselves are small scikit-learn style estimators trained
with plain momentum SGD; training is bit-for-bit reproducible for a given
(data, hyperparameters, seed).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .core import POSITION_BINS
from .errors import DivergedTraining, InvalidArgument, NotEnoughCells

ORDINAL_NODES = POSITION_BINS // 2


@dataclass
class PositionPrediction:
    """Decoded bin plus the raw output vector it came from."""

    bin: int
    scores: np.ndarray


@dataclass
class DecoderInput:
    """A normalized square grid of trace values plus its contour order."""

    grid: np.ndarray
    ids: Tuple[int, ...]


# ---------------------------------------------------------------------------
# output encodings

def encode_ordinal(bin_index: int) -> np.ndarray:
    """12-bit leading-run code: 1^(b+1) 0^(11-b) for b<=11, else 0^(b-11) 1^(23-b)."""
    if not 0 <= bin_index < POSITION_BINS:
        raise InvalidArgument(f"bin must lie in [0, {POSITION_BINS})")
    code = np.zeros(ORDINAL_NODES)
    if bin_index < ORDINAL_NODES:
        code[: bin_index + 1] = 1.0
    else:
        code[bin_index - ORDINAL_NODES + 1 :] = 1.0
    return code


def encode_ordinal_batch(bins) -> np.ndarray:
    return np.stack([encode_ordinal(int(b)) for b in np.asarray(bins).ravel()])


def decode_ordinal_bits(bits: np.ndarray) -> np.ndarray:
    """Leading-run decode of thresholded output rows (n, 12) -> bins."""
    bits = np.atleast_2d(np.asarray(bits, dtype=bool))
    has_zero = ~bits.all(axis=1)
    first_zero = np.where(has_zero, np.argmax(~bits, axis=1), ORDINAL_NODES)
    has_one = bits.any(axis=1)
    first_one = np.where(has_one, np.argmax(bits, axis=1), ORDINAL_NODES)
    return np.where(bits[:, 0], first_zero - 1, ORDINAL_NODES + first_one - 1)


def decode_ordinal(outputs) -> PositionPrediction:
    """Threshold the 12 node outputs at 0.5 and decode the leading run."""
    outputs = np.asarray(outputs, dtype=float).ravel()
    if outputs.shape != (ORDINAL_NODES,):
        raise InvalidArgument(f"ordinal decode expects {ORDINAL_NODES} outputs")
    bin_index = int(decode_ordinal_bits(outputs >= 0.5)[0])
    return PositionPrediction(bin_index, outputs)


def argmax_bin(scores) -> int:
    """Categorical readout: maximum output wins, ties to the lowest index."""
    return int(np.argmax(np.asarray(scores)))


def infer_categorical(model, x) -> PositionPrediction:
    """Run one input through a categorical decoder and take the argmax."""
    scores = model.decision_scores(np.asarray(x)[None])[0]
    return PositionPrediction(argmax_bin(scores), scores)


# ---------------------------------------------------------------------------
# input construction

def select_cells(traces: np.ndarray, ids: Sequence[int], grid_side: int):
    """Pick the grid_side^2 contours with the largest peak trace values.

    Sorting is by peak descending with ties broken by contour id ascending;
    the returned ids fill the input grid row-major in that order.
    """
    traces = np.asarray(traces)
    needed = grid_side * grid_side
    if traces.shape[1] < needed:
        raise NotEnoughCells(
            f"need {needed} contours for a {grid_side}x{grid_side} grid, "
            f"have {traces.shape[1]}"
        )
    peaks = traces.max(axis=0).astype(float)
    order = sorted(range(len(ids)), key=lambda i: (-peaks[i], ids[i]))
    return [ids[i] for i in order[:needed]]


def largest_grid_side(n_contours: int) -> int:
    return int(math.isqrt(n_contours))


def central_tile_columns(grid_rows: int = 32, grid_cols: int = 32, keep: int = 30):
    """Row-major indices of the central keep x keep block of the tile grid.

    Border tiles carry mostly vignette and edge artifacts; dropping one
    ring turns the default 32 x 32 grid into 900 decoder inputs.
    """
    if keep > min(grid_rows, grid_cols):
        raise InvalidArgument("keep exceeds the tile grid")
    r0 = (grid_rows - keep) // 2
    c0 = (grid_cols - keep) // 2
    return [
        tr * grid_cols + tc
        for tr in range(r0, r0 + keep)
        for tc in range(c0, c0 + keep)
    ]


def normalize_traces(values, mins, maxs) -> np.ndarray:
    """Min-max map to [0, 1]; constant contours map to 0, excursions clamp."""
    values = np.asarray(values, dtype=float)
    span = np.asarray(maxs, dtype=float) - np.asarray(mins, dtype=float)
    safe = np.where(span > 0, span, 1.0)
    out = (values - mins) / safe
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


def build_input(trace_vector, selection, bounds) -> DecoderInput:
    """Assemble one decoder input from a trace vector.

    ``selection`` is the ordered contour-id list; ``bounds`` the per-id
    (mins, maxs) arrays computed on the training split.
    """
    index = {cid: i for i, cid in enumerate(trace_vector.ids)}
    values = np.array([float(trace_vector.values[index[cid]]) for cid in selection])
    mins, maxs = bounds
    side = math.isqrt(len(selection))
    grid = normalize_traces(values, mins, maxs).reshape(side, side)
    return DecoderInput(grid, tuple(selection))


class TraceImageBuilder(BaseEstimator, TransformerMixin):
    """Turn raw trace matrices into normalized square input grids.

    ``columns`` pins an explicit column order (tile-based decoding uses the
    central tile block); otherwise the builder selects ``grid_side ** 2``
    columns by peak value on fit. Normalization bounds always come from the
    fitted (training) data.
    """

    def __init__(self, grid_side: Optional[int] = None, columns=None):
        self.grid_side = grid_side
        self.columns = columns

    def fit(self, X, y=None):
        X = np.asarray(X)
        if self.columns is not None:
            cols = list(self.columns)
            side = math.isqrt(len(cols))
            if side * side != len(cols):
                raise InvalidArgument("explicit column list must be a square count")
        else:
            side = self.grid_side or largest_grid_side(X.shape[1])
            cols = select_cells(X, list(range(X.shape[1])), side)
        self.columns_ = np.asarray(cols, dtype=np.int64)
        self.side_ = side
        selected = X[:, self.columns_].astype(float)
        self.mins_ = selected.min(axis=0)
        self.maxs_ = selected.max(axis=0)
        return self

    def transform(self, X):
        X = np.asarray(X)
        selected = X[:, self.columns_].astype(float)
        grids = normalize_traces(selected, self.mins_, self.maxs_)
        return grids.reshape(len(X), self.side_, self.side_)


# ---------------------------------------------------------------------------
# training machinery

def _as_flat(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        return X.reshape(len(X), -1)
    if X.ndim == 2:
        return X
    raise InvalidArgument("inputs must be (n, features) or (n, side, side)")


def _as_grids(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        side = math.isqrt(X.shape[1])
        if side * side != X.shape[1]:
            raise InvalidArgument("flat inputs must have a square feature count")
        return X.reshape(len(X), side, side)
    if X.ndim == 3:
        if X.shape[1] != X.shape[2]:
            raise InvalidArgument("input grids must be square")
        return X
    raise InvalidArgument("inputs must be (n, features) or (n, side, side)")


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size and (y.min() < 0 or y.max() >= POSITION_BINS):
        raise InvalidArgument(f"labels must lie in [0, {POSITION_BINS})")
    return y


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def _output_grad(Z, y, targets, encoding):
    """Loss and dL/dZ for one batch; mean over the batch either way."""
    n = len(Z)
    if encoding == "categorical":
        shifted = Z - Z.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(probs[np.arange(n), y] + 1e-300))
        grad = probs
        grad[np.arange(n), y] -= 1.0
        return loss, grad / n
    sig = 1.0 / (1.0 + np.exp(-Z))
    eps = 1e-12
    loss = -np.mean(
        np.sum(
            targets * np.log(sig + eps) + (1 - targets) * np.log(1 - sig + eps),
            axis=1,
        )
    )
    return loss, (sig - targets) / n


def _sgd_epochs(n, batch_size, epochs, rng):
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def _check_encoding(encoding):
    if encoding not in ("categorical", "ordinal"):
        raise InvalidArgument(f"unknown encoding {encoding!r}")
    return POSITION_BINS if encoding == "categorical" else ORDINAL_NODES


class AnnDecoder(BaseEstimator, ClassifierMixin):
    """Two hidden layers of 32 rectifier nodes; categorical or ordinal head."""

    _weight_attrs = ("w1_", "b1_", "w2_", "b2_", "w3_", "b3_")

    def __init__(
        self,
        encoding: str = "categorical",
        hidden: int = 32,
        learning_rate: float = 0.01,
        momentum: float = 0.9,
        batch_size: int = 64,
        epochs: int = 100,
        seed: int = 0,
    ):
        self.encoding = encoding
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = _as_flat(X)
        y = _check_labels(y)
        out_dim = _check_encoding(self.encoding)
        targets = encode_ordinal_batch(y) if self.encoding == "ordinal" else None
        rng = np.random.default_rng(self.seed)
        d, h = X.shape[1], self.hidden

        w1, b1 = _glorot(rng, d, h), np.zeros(h)
        w2, b2 = _glorot(rng, h, h), np.zeros(h)
        w3, b3 = _glorot(rng, h, out_dim), np.zeros(out_dim)
        params = [w1, b1, w2, b2, w3, b3]
        velocity = [np.zeros_like(p) for p in params]

        for idx in _sgd_epochs(len(X), self.batch_size, self.epochs, rng):
            xb, yb = X[idx], y[idx]
            tb = targets[idx] if targets is not None else None
            h1 = np.maximum(xb @ w1 + b1, 0.0)
            h2 = np.maximum(h1 @ w2 + b2, 0.0)
            z = h2 @ w3 + b3
            loss, dz = _output_grad(z, yb, tb, self.encoding)
            if not np.isfinite(loss):
                raise DivergedTraining(f"loss became {loss}")
            dw3, db3 = h2.T @ dz, dz.sum(axis=0)
            dh2 = (dz @ w3.T) * (h2 > 0)
            dw2, db2 = h1.T @ dh2, dh2.sum(axis=0)
            dh1 = (dh2 @ w2.T) * (h1 > 0)
            dw1, db1 = xb.T @ dh1, dh1.sum(axis=0)
            for p, v, g in zip(params, velocity, [dw1, db1, dw2, db2, dw3, db3]):
                v *= self.momentum
                v -= self.learning_rate * g
                p += v

        self.w1_, self.b1_, self.w2_, self.b2_, self.w3_, self.b3_ = params
        self.n_features_in_ = d
        self.bits_ = 0
        return self

    def decision_scores(self, X) -> np.ndarray:
        """Raw head outputs: logits (categorical) or sigmoid values (ordinal)."""
        X = _as_flat(X)
        h1 = np.maximum(X @ self.w1_ + self.b1_, 0.0)
        h2 = np.maximum(h1 @ self.w2_ + self.b2_, 0.0)
        z = h2 @ self.w3_ + self.b3_
        if self.encoding == "ordinal":
            return 1.0 / (1.0 + np.exp(-z))
        return z

    def predict(self, X) -> np.ndarray:
        scores = self.decision_scores(X)
        if self.encoding == "ordinal":
            return decode_ordinal_bits(scores >= 0.5)
        return np.argmax(scores, axis=1)


class CnnDecoder(BaseEstimator, ClassifierMixin):
    """Six 3x3 rectifier filters feeding a dense categorical/ordinal head."""

    _weight_attrs = ("conv_w_", "conv_b_", "fc_w_", "fc_b_")

    def __init__(
        self,
        encoding: str = "categorical",
        filters: int = 6,
        kernel: int = 3,
        learning_rate: float = 0.01,
        momentum: float = 0.9,
        batch_size: int = 64,
        epochs: int = 100,
        seed: int = 0,
    ):
        self.encoding = encoding
        self.filters = filters
        self.kernel = kernel
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def _patches(self, grids):
        view = np.lib.stride_tricks.sliding_window_view(
            grids, (self.kernel, self.kernel), axis=(1, 2)
        )
        n, oh, ow = view.shape[:3]
        return view.reshape(n, oh * ow, self.kernel * self.kernel), oh, ow

    def fit(self, X, y):
        grids = _as_grids(X)
        y = _check_labels(y)
        out_dim = _check_encoding(self.encoding)
        targets = encode_ordinal_batch(y) if self.encoding == "ordinal" else None
        rng = np.random.default_rng(self.seed)
        side = grids.shape[1]
        if side <= self.kernel - 1:
            raise InvalidArgument(f"grid side {side} too small for {self.kernel}x{self.kernel} filters")
        k2 = self.kernel * self.kernel
        feat = (side - self.kernel + 1) ** 2 * self.filters

        conv_w, conv_b = _glorot(rng, k2, self.filters), np.zeros(self.filters)
        fc_w, fc_b = _glorot(rng, feat, out_dim), np.zeros(out_dim)
        params = [conv_w, conv_b, fc_w, fc_b]
        velocity = [np.zeros_like(p) for p in params]

        for idx in _sgd_epochs(len(grids), self.batch_size, self.epochs, rng):
            xb, yb = grids[idx], y[idx]
            tb = targets[idx] if targets is not None else None
            patches, oh, ow = self._patches(xb)
            zc = patches @ conv_w + conv_b          # (n, oh*ow, filters)
            a = np.maximum(zc, 0.0)
            flat = a.reshape(len(xb), -1)
            z = flat @ fc_w + fc_b
            loss, dz = _output_grad(z, yb, tb, self.encoding)
            if not np.isfinite(loss):
                raise DivergedTraining(f"loss became {loss}")
            dfc_w, dfc_b = flat.T @ dz, dz.sum(axis=0)
            da = (dz @ fc_w.T).reshape(a.shape)
            dzc = da * (zc > 0)
            dconv_w = patches.reshape(-1, patches.shape[2]).T @ dzc.reshape(-1, self.filters)
            dconv_b = dzc.sum(axis=(0, 1))
            for p, v, g in zip(params, velocity, [dconv_w, dconv_b, dfc_w, dfc_b]):
                v *= self.momentum
                v -= self.learning_rate * g
                p += v

        self.conv_w_, self.conv_b_, self.fc_w_, self.fc_b_ = params
        self.side_ = side
        self.n_features_in_ = side * side
        self.bits_ = 0
        return self

    def hidden_activations(self, X) -> np.ndarray:
        """Post-rectifier conv features, flattened; used by the spiking converter."""
        grids = _as_grids(X)
        patches, _, _ = self._patches(grids)
        zc = patches @ self.conv_w_ + self.conv_b_
        return np.maximum(zc, 0.0).reshape(len(grids), -1)

    def decision_scores(self, X) -> np.ndarray:
        flat = self.hidden_activations(X)
        z = flat @ self.fc_w_ + self.fc_b_
        if self.encoding == "ordinal":
            return 1.0 / (1.0 + np.exp(-z))
        return z

    def predict(self, X) -> np.ndarray:
        scores = self.decision_scores(X)
        if self.encoding == "ordinal":
            return decode_ordinal_bits(scores >= 0.5)
        return np.argmax(scores, axis=1)
