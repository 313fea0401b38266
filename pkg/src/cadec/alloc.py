"""Conflict-free assignment of contours to tracing elements.

A tracing element (TE) holds several contour slots behind a single-read-port
buffer, so two contours stored in one TE must never need a mask bit in the
same cycle; with row-major scanning that is guaranteed exactly when their
windows do not overlap. This module produces assignments with that property:

* :func:`allocate_cells` — randomized swap repair for arbitrary cell
  contours, starting from a round-robin default placement;
* :func:`map_tiles` — the deterministic diagonal mapping for the regular
  tile grid;
* :func:`segment_regions` / :func:`build_fast_forward_table` — the
  per-round scan-bound and background-skip precomputations consumed by the
  latency model.
"""

import math
import random
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Contour, DEFAULT_FRAME_SIZE, DEFAULT_WINDOW, windows_overlap
from .errors import AllocationInfeasible, ConflictDetected, InvalidGeometry, InvalidShape

DEFAULT_MIN_SKIP = 8          # background runs shorter than this are not worth a table entry
DEFAULT_MAX_ATTEMPTS = 10_000  # swap trials per conflicting contour


@dataclass(frozen=True)
class AcceleratorShape:
    """Geometry of the TE chain: length, slots per TE, reuse rounds."""

    te_count: int = 32
    slots_per_te: int = 8
    rounds: int = 1

    def __post_init__(self):
        if self.te_count < 1 or self.slots_per_te < 1 or self.rounds < 1:
            raise InvalidShape("te_count, slots_per_te and rounds must all be >= 1")

    @property
    def capacity(self) -> int:
        return self.te_count * self.slots_per_te * self.rounds


@dataclass
class FastForwardTable:
    """Sorted, disjoint half-open scan-index ranges safe to skip."""

    ranges: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        prev = -1
        for lo, hi in self.ranges:
            if lo >= hi or lo <= prev:
                raise InvalidGeometry("skip ranges must be sorted, disjoint, non-empty")
            prev = hi

    def skipped_within(self, start: int, stop: int) -> int:
        """Pixels skipped inside the half-open scan interval [start, stop)."""
        total = 0
        for lo, hi in self.ranges:
            total += max(0, min(hi, stop) - max(lo, start))
        return total

    @property
    def total(self) -> int:
        return sum(hi - lo for lo, hi in self.ranges)


@dataclass
class RoundPlan:
    """Per-round scan bounds (inclusive rows) and background-skip table."""

    bounds: Tuple[int, int]
    fast_forward: FastForwardTable


@dataclass
class Allocation:
    """Contour -> (round, TE, slot) assignment plus per-round scan plans.

    ``contours`` fixes the trace output order; ``placement[i]`` is the
    (round, te, slot) triple of ``contours[i]``.
    """

    shape: AcceleratorShape
    width: int
    height: int
    window: int
    contours: List[Contour]
    placement: List[Tuple[int, int, int]]
    rounds: List[RoundPlan]

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def round_members(self, rnd: int) -> List[int]:
        """Indices of the contours assigned to round ``rnd``."""
        return [i for i, (r, _, _) in enumerate(self.placement) if r == rnd]

    def te_groups(self, rnd: int):
        """Map TE index -> contour indices for one round."""
        groups = {}
        for i, (r, te, _) in enumerate(self.placement):
            if r == rnd:
                groups.setdefault(te, []).append(i)
        return groups


def _common_window(contours: Sequence[Contour]) -> int:
    if not contours:
        return DEFAULT_WINDOW
    window = contours[0].window
    for ct in contours:
        if ct.window != window:
            raise InvalidGeometry("all contours in one allocation must share a window size")
    return window


def build_fast_forward_table(
    contours: Sequence[Contour],
    width: int,
    height: int,
    min_skip: int = DEFAULT_MIN_SKIP,
) -> FastForwardTable:
    """Maximal background runs of the row-major scan, as skip ranges.

    A scan index is background when it lies inside no contour's window.
    Runs shorter than ``min_skip`` are dropped: a hardware skip has fixed
    overhead, so tiny gaps are not worth a table entry.
    """
    covered = np.zeros((height, width), dtype=bool)
    for ct in contours:
        half = ct.window // 2
        row, col = ct.center
        r0, r1 = max(0, row - half), min(height, row + half + 1)
        c0, c1 = max(0, col - half), min(width, col + half + 1)
        if r0 < r1 and c0 < c1:
            covered[r0:r1, c0:c1] = True
    background = (~covered).ravel().astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], background, [0]))))
    starts, stops = edges[0::2], edges[1::2]
    ranges = [
        (int(a), int(b)) for a, b in zip(starts, stops) if b - a >= max(1, min_skip)
    ]
    return FastForwardTable(ranges)


def segment_regions(
    contours: Sequence[Contour],
    shape: AcceleratorShape,
    height: int = DEFAULT_FRAME_SIZE,
):
    """Partition contours into per-round row bands of balanced size.

    Rounds are contiguous center-row intervals (cuts fall only between
    distinct rows), sized as evenly as possible subject to the per-round
    capacity ``te_count * slots_per_te``: the partition minimizes the
    largest round, found by binary search over the size limit. Rounds that
    would come out empty are dropped, so the result may have fewer rounds
    than requested. Returns ``(groups, bounds)`` where each bound is the
    round's window hull over center rows, clipped to the frame.
    """
    contours = list(contours)
    capacity = shape.te_count * shape.slots_per_te
    window = _common_window(contours)
    half = window // 2
    if not contours:
        return [[]], [(0, height - 1)]

    order = sorted(contours, key=lambda ct: (ct.center[0], ct.id))
    n = len(order)

    # Row blocks: contours sharing a center row are indivisible.
    blocks = []
    start = 0
    for i in range(1, n + 1):
        if i == n or order[i].center[0] != order[start].center[0]:
            blocks.append(order[start:i])
            start = i
    sizes = [len(blk) for blk in blocks]

    def parts_needed(limit):
        count, current = 1, 0
        for s in sizes:
            if current + s > limit:
                count += 1
                current = s
            else:
                current += s
        return count

    if max(sizes) > capacity or parts_needed(capacity) > shape.rounds:
        raise AllocationInfeasible(
            f"cannot split {n} contours into {shape.rounds} row bands "
            f"of capacity {capacity}"
        )
    lo, hi = max(sizes), min(capacity, n)
    while lo < hi:
        mid = (lo + hi) // 2
        if parts_needed(mid) <= shape.rounds:
            hi = mid
        else:
            lo = mid + 1

    groups, current = [], []
    count = 0
    for blk, s in zip(blocks, sizes):
        if count + s > lo:
            groups.append(current)
            current, count = [], 0
        current.extend(blk)
        count += s
    groups.append(current)

    bounds = []
    for group in groups:
        rows = [ct.center[0] for ct in group]
        bounds.append(
            (max(0, min(rows) - half), min(height - 1, max(rows) + half))
        )
    return groups, bounds


def _repair_conflicts(group, te_of, slot_of, te_members, rng, max_attempts):
    """Algorithm core: walk every contour, swap conflicting ones away.

    A conflicting contour is exchanged with a randomly picked contour from
    another TE; the swap is accepted only when both moved contours are
    overlap-free against their new TE-mates.
    """
    n = len(group)

    def has_conflict(i):
        return any(
            m != i and windows_overlap(group[i], group[m])
            for m in te_members[te_of[i]]
        )

    for i in range(n):
        if not has_conflict(i):
            continue
        others = [m for m in range(n) if te_of[m] != te_of[i]]
        if not others:
            raise AllocationInfeasible(
                f"contour {group[i].id} conflicts and no other TE holds contours"
            )
        for _ in range(max_attempts):
            j = others[rng.randrange(len(others))]
            te_i, te_j = te_of[i], te_of[j]
            ok_i = not any(
                m != j and windows_overlap(group[i], group[m]) for m in te_members[te_j]
            )
            ok_j = ok_i and not any(
                m != i and windows_overlap(group[j], group[m]) for m in te_members[te_i]
            )
            if ok_j:
                te_members[te_i].remove(i)
                te_members[te_j].remove(j)
                te_members[te_i].append(j)
                te_members[te_j].append(i)
                te_of[i], te_of[j] = te_j, te_i
                slot_of[i], slot_of[j] = slot_of[j], slot_of[i]
                break
        else:
            raise AllocationInfeasible(
                f"no conflict-free swap found for contour {group[i].id} "
                f"within {max_attempts} trials; contour density too high"
            )


def _place_group(group, shape, rng, max_attempts):
    """Round-robin default placement followed by conflict repair."""
    n = len(group)
    te_of = [i % shape.te_count for i in range(n)]
    slot_of = [i // shape.te_count for i in range(n)]
    te_members = {te: [] for te in range(shape.te_count)}
    for i in range(n):
        te_members[te_of[i]].append(i)
    _repair_conflicts(group, te_of, slot_of, te_members, rng, max_attempts)
    return list(zip(te_of, slot_of))


def allocate_cells(
    contours: Sequence[Contour],
    shape: AcceleratorShape,
    seed: int = 0,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    width: int = DEFAULT_FRAME_SIZE,
    height: int = DEFAULT_FRAME_SIZE,
    min_skip: int = DEFAULT_MIN_SKIP,
) -> Allocation:
    """Allocate cell contours to the TE chain without slot conflicts.

    Contours are first split into row bands (one accelerator round each),
    then placed round-robin within their round and repaired by randomized
    swaps until no TE holds two overlapping windows. Deterministic for a
    given (contours, shape, seed).

    Raises :class:`InvalidShape` when the chain cannot hold the contours at
    all and :class:`AllocationInfeasible` when the swap search gives up.
    """
    contours = list(contours)
    window = _common_window(contours)
    if len(contours) > shape.capacity:
        raise InvalidShape(
            f"{len(contours)} contours exceed capacity "
            f"{shape.te_count}x{shape.slots_per_te}x{shape.rounds}"
        )
    rng = random.Random(seed)
    groups, bounds = segment_regions(contours, shape, height=height)

    placement_by_id = {}
    plans = []
    for rnd, (group, bnd) in enumerate(zip(groups, bounds)):
        for ct, (te, slot) in zip(group, _place_group(group, shape, rng, max_attempts)):
            placement_by_id[ct.id] = (rnd, te, slot)
        plans.append(
            RoundPlan(bnd, build_fast_forward_table(group, width, height, min_skip))
        )
    placement = [placement_by_id[ct.id] for ct in contours] if contours else []
    return Allocation(shape, width, height, window, contours, placement, plans)


def generate_tile_contours(
    width: int = DEFAULT_FRAME_SIZE,
    height: int = DEFAULT_FRAME_SIZE,
    tile: int = 16,
    window: int = DEFAULT_WINDOW,
) -> List[Contour]:
    """Regular grid of tile contours covering the frame.

    Each tile contributes one contour whose mask has a solid ``tile x tile``
    block of ones positioned so that, under the scan-index mapping, the
    block covers exactly the tile's own pixels. For the defaults (16 in a
    25 window) the block occupies mask offsets 4..19 in both axes.
    """
    if width % tile or height % tile:
        raise InvalidGeometry(f"frame {width}x{height} not divisible by tile {tile}")
    if window < tile:
        raise InvalidGeometry("window must be at least the tile size")
    if window % 2 == 0:
        raise InvalidGeometry("window size must be odd")
    offset = window // 2 - tile // 2
    mask = np.zeros((window, window), dtype=np.uint8)
    mask[offset : offset + tile, offset : offset + tile] = 1
    tiles_per_row = width // tile
    contours = []
    for tr in range(height // tile):
        for tc in range(tiles_per_row):
            contours.append(
                Contour(
                    id=tr * tiles_per_row + tc,
                    center=(tile * tr + tile // 2, tile * tc + tile // 2),
                    mask=mask.copy(),
                    kind="tile",
                )
            )
    return contours


def map_tiles(
    tiles: Sequence[Contour],
    te_count: int = 32,
    min_skip: int = DEFAULT_MIN_SKIP,
) -> Allocation:
    """Deterministic conflict-free mapping of the tile grid onto the chain.

    Tile (tr, tc) goes to TE ``(tc + 2*tr) % te_count``: along a row,
    same-TE tiles sit a full chain apart; between adjacent rows the column
    shift of 2 tiles keeps same-TE windows disjoint. Slots fill in
    row-major discovery order. The result is validated and a
    :class:`ConflictDetected` is raised if the geometry ever defeats the
    formula (possible for very small ``te_count``).
    """
    tiles = list(tiles)
    if te_count < 3:
        raise InvalidShape("tile mapping needs at least 3 tracing elements")
    if not tiles:
        raise InvalidGeometry("no tiles to map")
    window = _common_window(tiles)
    rows = sorted({ct.center[0] for ct in tiles})
    cols = sorted({ct.center[1] for ct in tiles})
    pitch = rows[1] - rows[0] if len(rows) > 1 else (cols[1] - cols[0] if len(cols) > 1 else 2 * rows[0])
    width = pitch * len(cols)
    height = pitch * len(rows)

    slot_next = [0] * te_count
    placement = []
    for ct in tiles:
        tr = (ct.center[0] - rows[0]) // pitch
        tc = (ct.center[1] - cols[0]) // pitch
        te = (tc + 2 * tr) % te_count
        placement.append((0, te, slot_next[te]))
        slot_next[te] += 1

    shape = AcceleratorShape(te_count, max(slot_next), 1)
    half = window // 2
    centers_r = [ct.center[0] for ct in tiles]
    bounds = (max(0, min(centers_r) - half), min(height - 1, max(centers_r) + half))
    plan = RoundPlan(bounds, build_fast_forward_table(tiles, width, height, min_skip))
    allocation = Allocation(shape, width, height, window, tiles, placement, [plan])

    for te, members in allocation.te_groups(0).items():
        for a_pos, a in enumerate(members):
            for b in members[a_pos + 1 :]:
                if windows_overlap(tiles[a], tiles[b]):
                    raise ConflictDetected(
                        f"tiles {tiles[a].id} and {tiles[b].id} overlap in TE {te}",
                        te=te,
                    )
    return allocation


def empty_allocation(
    shape: AcceleratorShape,
    width: int = DEFAULT_FRAME_SIZE,
    height: int = DEFAULT_FRAME_SIZE,
    window: int = DEFAULT_WINDOW,
    min_skip: int = DEFAULT_MIN_SKIP,
) -> Allocation:
    """An allocation with no contours: one round scanning pure background."""
    plan = RoundPlan(
        (0, height - 1), build_fast_forward_table([], width, height, min_skip)
    )
    return Allocation(shape, width, height, window, [], [], [plan])
