"""Synthetic linear-track sessions with known ground truth.

A simulated animal sweeps back and forth over 24 position bins; place cells
with Gaussian tuning fire Poisson-like transients that decay like calcium,
and each cell renders an isotropic footprint into 8-bit frames on top of a
noisy baseline. The generator is fully determined by its parameters: four
independent seeded streams (trajectory, cell layout, activations, noise)
make the output independent of the rendering chunk size.
"""

import math
from dataclasses import dataclass, asdict
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import Contour, POSITION_BINS, Session
from .errors import InvalidParams

RENDER_CHUNK = 256  # frames rendered per batch; output does not depend on it


@dataclass(frozen=True)
class GeneratorParams:
    n_cells: int = 300
    n_frames: int = 8000
    width: int = 512
    height: int = 512
    field_width: float = 1.5       # place-field std in bins
    decay: float = 0.95            # calcium transient decay per frame
    gain: float = 18.0             # intensity added per activation unit
    peak_rate: float = 0.4         # mean activations/frame at the field center
    footprint_radius: int = 6      # px
    noise_std: float = 2.0
    baseline: float = 20.0
    speed: float = 0.05            # bins/frame
    jitter_std: float = 0.15       # bins
    min_separation: int = 4        # px between cell centers
    neuropil: float = 0.05         # diffuse background glow per unit calcium
    window: int = 25
    frame_rate: float = 20.0
    seed: int = 0
    stochastic: bool = True        # False: activation = tuning rate (closed-form render)

    def __post_init__(self):
        if not (0 <= self.decay < 1):
            raise InvalidParams("decay must lie in [0, 1)")
        if min(self.width, self.height, self.n_frames) <= 0:
            raise InvalidParams("dimensions and frame count must be positive")
        if self.n_cells < 0:
            raise InvalidParams("n_cells must be >= 0")
        if self.speed <= 0:
            raise InvalidParams("speed must be positive")
        if self.window % 2 == 0 or self.window < 1:
            raise InvalidParams("window must be odd and positive")
        if self.noise_std < 0 or self.field_width <= 0:
            raise InvalidParams("noise_std must be >= 0 and field_width > 0")
        if self.footprint_radius < 1:
            raise InvalidParams("footprint_radius must be >= 1")


def _streams(params: GeneratorParams):
    children = np.random.SeedSequence(params.seed).spawn(4)
    return tuple(np.random.default_rng(s) for s in children)


def make_trajectory(params: GeneratorParams, rng=None) -> Tuple[np.ndarray, np.ndarray]:
    """Triangle-wave sweep over the track plus seeded jitter.

    Returns ``(positions, bins)``: the continuous jittered position driving
    the tuning curves and the integer bin labels.
    """
    if rng is None:
        rng = _streams(params)[0]
    top = POSITION_BINS - 1
    pos = np.empty(params.n_frames)
    p, direction = 0.0, 1.0
    for t in range(params.n_frames):
        pos[t] = p
        p += direction * params.speed
        if p > top:
            p, direction = top - (p - top), -1.0
        elif p < 0:
            p, direction = -p, 1.0
    jittered = np.clip(pos + rng.normal(0.0, params.jitter_std, params.n_frames), 0, top)
    return jittered, np.rint(jittered).astype(np.int64)


def _footprint(params: GeneratorParams) -> np.ndarray:
    radius = params.footprint_radius
    coords = np.arange(-radius, radius + 1)
    d2 = coords[:, None] ** 2 + coords[None, :] ** 2
    sigma = radius / 2.0
    kernel = np.exp(-d2 / (2 * sigma * sigma))
    kernel[d2 > radius * radius] = 0.0
    return kernel


def make_cells(params: GeneratorParams, rng=None):
    """Random cell centers (min-separation enforced) and preferred positions."""
    if rng is None:
        rng = _streams(params)[1]
    margin = params.footprint_radius
    centers: List[Tuple[int, int]] = []
    guard = 0
    while len(centers) < params.n_cells:
        guard += 1
        if guard > 1000 * max(1, params.n_cells):
            raise InvalidParams(
                "could not place cells with the requested separation; "
                "frame too small for n_cells"
            )
        r = int(rng.integers(margin, params.height - margin))
        c = int(rng.integers(margin, params.width - margin))
        if all(
            max(abs(r - rr), abs(c - cc)) >= params.min_separation
            for rr, cc in centers
        ):
            centers.append((r, c))
    preferred = rng.uniform(0, POSITION_BINS - 1, params.n_cells)
    return centers, preferred


def ground_truth_contours(params: GeneratorParams, centers) -> List[Contour]:
    """Footprints thresholded at half peak, embedded in the standard window."""
    kernel = _footprint(params)
    fp_mask = (kernel >= 0.5).astype(np.uint8)
    radius = params.footprint_radius
    half = params.window // 2
    mask = np.zeros((params.window, params.window), dtype=np.uint8)
    lo = half - radius
    mask[lo : lo + fp_mask.shape[0], lo : lo + fp_mask.shape[1]] = fp_mask
    return [
        Contour(id=i, center=center, mask=mask.copy(), kind="cell")
        for i, center in enumerate(centers)
    ]


def _activations(params, rates, rng):
    if params.stochastic:
        return rng.poisson(rates * params.peak_rate).astype(np.float64)
    return rates * params.peak_rate


NEUROPIL_COARSE = 16      # px per coarse grid cell for the diffuse glow
NEUROPIL_SIGMA = 2.5      # glow width in coarse cells


def _neuropil_profiles(params: GeneratorParams, centers) -> Optional[np.ndarray]:
    """Per-cell diffuse glow on a coarse grid, later upsampled per frame.

    Out-of-focus fluorescence follows nearby population activity; modeling
    it coarsely keeps rendering cheap while giving every image region a
    position-tuned background component.
    """
    if params.neuropil <= 0 or not centers:
        return None
    rows = -(-params.height // NEUROPIL_COARSE)
    cols = -(-params.width // NEUROPIL_COARSE)
    gr = np.arange(rows)[None, :, None]
    gc = np.arange(cols)[None, None, :]
    cell_r = np.array([c[0] / NEUROPIL_COARSE for c in centers])[:, None, None]
    cell_c = np.array([c[1] / NEUROPIL_COARSE for c in centers])[:, None, None]
    d2 = (gr - cell_r) ** 2 + (gc - cell_c) ** 2
    return params.neuropil * np.exp(-d2 / (2 * NEUROPIL_SIGMA**2))


def iter_frames(
    params: GeneratorParams, chunk: int = RENDER_CHUNK
) -> Iterator[Tuple[int, np.ndarray]]:
    """Render the session lazily as ``(start_index, frames_uint8)`` chunks."""
    rng_traj, rng_cells, rng_act, rng_noise = _streams(params)
    positions, _ = make_trajectory(params, rng_traj)
    centers, preferred = make_cells(params, rng_cells)
    kernel = _footprint(params)
    radius = params.footprint_radius
    glow = _neuropil_profiles(params, centers)

    calcium = np.zeros(params.n_cells)
    for start in range(0, params.n_frames, chunk):
        stop = min(start + chunk, params.n_frames)
        m = stop - start
        if params.n_cells:
            dist = positions[start:stop, None] - preferred[None, :]
            rates = np.exp(-(dist * dist) / (2 * params.field_width**2))
            acts = _activations(params, rates, rng_act)
            levels = np.empty((m, params.n_cells))
            for t in range(m):
                calcium = params.decay * calcium + acts[t] * params.gain
                levels[t] = calcium
        frames = np.full((m, params.height, params.width), params.baseline, dtype=np.float64)
        if params.noise_std > 0:
            frames += rng_noise.normal(0.0, params.noise_std, frames.shape)
        if glow is not None:
            coarse = (levels @ glow.reshape(params.n_cells, -1)).reshape(
                m, glow.shape[1], glow.shape[2]
            )
            field = np.repeat(
                np.repeat(coarse, NEUROPIL_COARSE, axis=1), NEUROPIL_COARSE, axis=2
            )
            frames += field[:, : params.height, : params.width]
        for i in range(params.n_cells):
            r, c = centers[i]
            frames[:, r - radius : r + radius + 1, c - radius : c + radius + 1] += (
                levels[:, i, None, None] * kernel
            )
        yield start, np.clip(frames, 0, 255).astype(np.uint8)


def generate_session(params: GeneratorParams) -> Session:
    """Materialize the full session: frames, labels, ground-truth contours.

    The default parameters produce roughly 2 GB of frames; use
    :func:`iter_frames` plus on-the-fly extraction when only traces are
    needed.
    """
    rng_traj, rng_cells = _streams(params)[:2]
    _, bins = make_trajectory(params, rng_traj)
    centers, _ = make_cells(params, rng_cells)
    contours = ground_truth_contours(params, centers)
    frames = np.empty((params.n_frames, params.height, params.width), dtype=np.uint8)
    for start, chunk in iter_frames(params):
        frames[start : start + len(chunk)] = chunk
    return Session(
        frames=frames,
        positions=bins,
        contours=contours,
        frame_rate=params.frame_rate,
        seed=params.seed,
        window=params.window,
    )


def collect_traces(
    params: GeneratorParams,
    contour_sets: dict,
    chunk: int = RENDER_CHUNK,
):
    """Stream-render the session and extract traces for several contour sets.

    Returns ``(bins, {name: uint16 trace matrix})`` without ever holding
    more than one chunk of frames in memory.
    """
    from .tracing import extract_traces

    rng_traj = _streams(params)[0]
    _, bins = make_trajectory(params, rng_traj)
    out = {
        name: np.empty((params.n_frames, len(contours)), dtype=np.uint16)
        for name, contours in contour_sets.items()
    }
    for start, frames in iter_frames(params, chunk):
        for name, contours in contour_sets.items():
            out[name][start : start + len(frames)] = extract_traces(frames, contours)
    return bins, out
