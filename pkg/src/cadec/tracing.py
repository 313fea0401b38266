"""Reference trace extraction: the masked-sum semantics every other
implementation (streaming, cycle simulator) must reproduce exactly.

A contour's trace for one frame is the sum of all pixel values that fall on
set mask bits inside its window. Accumulation is done in 64-bit arithmetic
and the 16-bit output bound is checked at the end; window pixels outside the
frame contribute nothing because they are never scanned.
"""

from typing import Iterable, Sequence

import numpy as np

from .core import Contour, Frame, PixelEvent, TraceVector, TRACE_MAX, window_indices
from .errors import TraceOverflow


def _window_slices(contour: Contour, height: int, width: int):
    """Frame-space and mask-space slices of the in-frame part of the window."""
    half = contour.window // 2
    row, col = contour.center
    r0, r1 = max(0, row - half), min(height, row + half + 1)
    c0, c1 = max(0, col - half), min(width, col + half + 1)
    if r0 >= r1 or c0 >= c1:
        return None
    mr0 = r0 - (row - half)
    mc0 = c0 - (col - half)
    return (
        slice(r0, r1),
        slice(c0, c1),
        slice(mr0, mr0 + (r1 - r0)),
        slice(mc0, mc0 + (c1 - c0)),
    )


def _check_bound(values: np.ndarray, ids) -> np.ndarray:
    over = values > TRACE_MAX
    if over.any():
        bad = int(np.argmax(over))
        raise TraceOverflow(
            f"trace for contour {ids[bad]} is {int(values[bad])}, "
            f"exceeding the 16-bit limit {TRACE_MAX}; the contour's mask "
            "violates the popcount bound"
        )
    return values.astype(np.uint16)


def extract_reference(frame: Frame, contours: Sequence[Contour]) -> TraceVector:
    """Masked-sum trace per contour, straight from the definition."""
    pixels = frame.pixels
    h, w = pixels.shape
    acc = np.zeros(len(contours), dtype=np.int64)
    for i, contour in enumerate(contours):
        slices = _window_slices(contour, h, w)
        if slices is None:
            continue
        fr, fc, mr, mc = slices
        acc[i] = np.sum(
            pixels[fr, fc].astype(np.int64) * contour.mask[mr, mc]
        )
    ids = [ct.id for ct in contours]
    return TraceVector(frame.index, tuple(ids), _check_bound(acc, ids))


def extract_traces(frames: np.ndarray, contours: Sequence[Contour]) -> np.ndarray:
    """Batch form of :func:`extract_reference` over a (n, h, w) frame stack.

    Returns a (n, n_contours) uint16 matrix; column order follows the
    contour list.
    """
    frames = np.asarray(frames)
    n, h, w = frames.shape
    out = np.zeros((n, len(contours)), dtype=np.int64)
    for i, contour in enumerate(contours):
        slices = _window_slices(contour, h, w)
        if slices is None:
            continue
        fr, fc, mr, mc = slices
        mask = contour.mask[mr, mc]
        out[:, i] = np.tensordot(
            frames[:, fr, fc].astype(np.int64), mask, axes=([1, 2], [0, 1])
        )
    ids = [ct.id for ct in contours]
    over = out > TRACE_MAX
    if over.any():
        frame_i, ct_i = np.unravel_index(int(np.argmax(over)), over.shape)
        raise TraceOverflow(
            f"trace for contour {ids[ct_i]} in frame {frame_i} exceeds "
            f"the 16-bit limit {TRACE_MAX}"
        )
    return out.astype(np.uint16)


def extract_streaming(
    events: Iterable[PixelEvent],
    contours: Sequence[Contour],
    frame_index: int = 0,
) -> TraceVector:
    """Event-at-a-time extraction with one accumulator per contour.

    Functionally identical to :func:`extract_reference` on a complete
    row-major scan; on a truncated scan the accumulators hold the prefix
    sums of the pixels seen so far.
    """
    acc = [0] * len(contours)
    centers = [ct.center for ct in contours]
    masks = [ct.mask for ct in contours]
    windows = [ct.window for ct in contours]
    for ev in events:
        for i in range(len(contours)):
            hit = window_indices(ev.r, ev.c, centers[i][0], centers[i][1], windows[i])
            if hit is not None and masks[i][hit]:
                acc[i] += ev.v
    ids = [ct.id for ct in contours]
    return TraceVector(
        frame_index, tuple(ids), _check_bound(np.asarray(acc, dtype=np.int64), ids)
    )
