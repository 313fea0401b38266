"""Domain types and pixel/window geometry.

Everything downstream (allocation, the cycle simulator, the decoders) is
defined in terms of these types and the three geometry primitives
``scan_order``, ``window_indices`` and ``windows_overlap``.
"""

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from .errors import InvalidGeometry

DEFAULT_FRAME_SIZE = 512
DEFAULT_WINDOW = 25       # side of the square mask stored per contour
POSITION_BINS = 24        # linear track discretization
TRACE_MAX = 0xFFFF        # traces are 16-bit unsigned

CONTOUR_KINDS = ("cell", "tile")


@dataclass(frozen=True)
class PixelEvent:
    """One scanned pixel: 8-bit value plus its row/column indices."""

    v: int
    r: int
    c: int


@dataclass
class Frame:
    """A single 8-bit intensity image plus its sequence number."""

    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise InvalidGeometry("frame pixels must be a 2-D grid")
        if self.pixels.dtype != np.uint8:
            if self.pixels.min() < 0 or self.pixels.max() > 255:
                raise InvalidGeometry("frame intensities must fit 8 bits")
            self.pixels = self.pixels.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class Contour:
    """A square binary mask plus its center location on the frame.

    ``kind`` records whether the contour came from cell detection or from
    the fixed tile grid; both behave identically during extraction.
    """

    id: int
    center: Tuple[int, int]
    mask: np.ndarray
    kind: str = "cell"

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.mask.ndim != 2 or self.mask.shape[0] != self.mask.shape[1]:
            raise InvalidGeometry("contour mask must be square")
        if self.mask.shape[0] % 2 == 0:
            raise InvalidGeometry("contour window size must be odd")
        if not np.isin(self.mask, (0, 1)).all():
            raise InvalidGeometry("contour mask entries must be 0/1")
        if int(self.mask.sum()) < 1:
            raise InvalidGeometry("contour mask must contain at least one pixel")
        if self.kind not in CONTOUR_KINDS:
            raise InvalidGeometry(f"unknown contour kind {self.kind!r}")
        self.center = (int(self.center[0]), int(self.center[1]))

    @property
    def window(self) -> int:
        return self.mask.shape[0]

    @property
    def popcount(self) -> int:
        return int(self.mask.sum())


@dataclass
class Session:
    """An ordered stack of frames with per-frame position labels."""

    frames: np.ndarray          # (n_frames, height, width) uint8
    positions: np.ndarray       # (n_frames,) ints in [0, POSITION_BINS)
    contours: list = field(default_factory=list)
    frame_rate: float = 20.0
    seed: int = 0
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.frames.ndim != 3:
            raise InvalidGeometry("session frames must be (n, height, width)")
        if len(self.positions) != len(self.frames):
            raise InvalidGeometry("one position label per frame required")
        if len(self.positions) and (
            self.positions.min() < 0 or self.positions.max() >= POSITION_BINS
        ):
            raise InvalidGeometry(f"positions must lie in [0, {POSITION_BINS})")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def frame(self, i: int) -> Frame:
        return Frame(self.frames[i], index=i)

    def __eq__(self, other):
        if not isinstance(other, Session):
            return NotImplemented
        return (
            np.array_equal(self.frames, other.frames)
            and np.array_equal(self.positions, other.positions)
            and self.frame_rate == other.frame_rate
            and self.seed == other.seed
            and self.window == other.window
            and len(self.contours) == len(other.contours)
            and all(
                a.id == b.id
                and a.center == b.center
                and a.kind == b.kind
                and np.array_equal(a.mask, b.mask)
                for a, b in zip(self.contours, other.contours)
            )
        )


@dataclass
class TraceVector:
    """Per-contour 16-bit trace values for one frame."""

    frame_index: int
    ids: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint16)
        self.ids = tuple(int(i) for i in self.ids)
        if len(self.ids) != len(self.values):
            raise InvalidGeometry("one trace value per contour id required")

    def __eq__(self, other):
        if not isinstance(other, TraceVector):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.ids == other.ids
            and np.array_equal(self.values, other.values)
        )


def scan_order(frame: Frame) -> Iterator[PixelEvent]:
    """Yield the frame's pixels in row-major scan order.

    The scan index of the event for pixel (r, c) is ``r * width + c``.
    """
    pixels = frame.pixels
    for r in range(frame.height):
        row = pixels[r]
        for c in range(frame.width):
            yield PixelEvent(int(row[c]), r, c)


def window_indices(
    r: int, c: int, row: int, col: int, window: int
) -> Optional[Tuple[int, int]]:
    """Map a scanned pixel into a contour's local mask coordinates.

    Returns ``(dr, dc)`` with ``dr = r - row + window // 2`` (likewise for
    columns) when both land inside ``[0, window)``, else ``None``: the pixel
    lies outside the contour's window.
    """
    half = window // 2
    dr = r - row + half
    if dr < 0 or dr >= window:
        return None
    dc = c - col + half
    if dc < 0 or dc >= window:
        return None
    return dr, dc


def windows_overlap(a: Contour, b: Contour, window: Optional[int] = None) -> bool:
    """True when the two contours' square windows share at least one pixel.

    Overlap is a property of the full windows, not of the mask support: a
    tracing element fetches a mask bit for every pixel inside the window,
    so two same-element contours conflict whenever their windows intersect.
    """
    if window is None:
        window = a.window
    return (
        abs(a.center[0] - b.center[0]) < window
        and abs(a.center[1] - b.center[1]) < window
    )
