"""Cycle-level model of the trace-extraction chain.

The chain processes one pixel per cycle while computing; loading a contour
into its slot costs a fixed number of cycles, storing a finished trace one
more. Three latency optimizations are modeled:

* region segmentation — each round scans only the row band containing its
  contours instead of the whole frame;
* fast forward — scan indices covered by no window are skipped using the
  precomputed background table;
* double buffering — the chain is treated as two half-chains so that one
  half's round-boundary load/store hides behind the other half's compute;
  only the first load and the last store stay exposed.

``simulate_frame`` additionally executes the data path and checks, for
every scanned pixel, that no TE is hit through two of its slots at once.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .alloc import AcceleratorShape, Allocation
from .core import Frame, TraceVector, TRACE_MAX
from .errors import ConflictDetected, InvalidShape, TraceOverflow

DEFAULT_CLOCK_MHZ = 300.0
DEFAULT_LOAD_CYCLES = 11   # ten 64-bit shift words for a 25x25 mask + one metadata word
DEFAULT_STORE_CYCLES = 1


@dataclass(frozen=True)
class SimConfig:
    """Clock, per-contour cycle costs, and the optimization switches."""

    shape: Optional[AcceleratorShape] = None
    clock_mhz: float = DEFAULT_CLOCK_MHZ
    opt_region: bool = False
    opt_fastforward: bool = False
    opt_doublebuffer: bool = False
    load_cycles_per_contour: int = DEFAULT_LOAD_CYCLES
    store_cycles_per_contour: int = DEFAULT_STORE_CYCLES

    def __post_init__(self):
        if self.clock_mhz <= 0:
            raise InvalidShape("clock frequency must be positive")
        if self.load_cycles_per_contour < 1 or self.store_cycles_per_contour < 1:
            raise InvalidShape("per-contour cycle costs must be >= 1")


@dataclass
class RoundCycles:
    load: int
    compute: int
    store: int
    skipped: int


@dataclass
class SimReport:
    """Per-round phase cycles plus the (optimization-aware) total."""

    rounds: List[RoundCycles]
    total_cycles: int
    wall_us: float
    conflicts: int = 0

    @property
    def skipped(self) -> int:
        return sum(r.skipped for r in self.rounds)

    @property
    def compute(self) -> int:
        return sum(r.compute for r in self.rounds)


def _scan_interval(allocation: Allocation, rnd: int, config: SimConfig) -> Tuple[int, int]:
    """Half-open flat scan-index interval covered in one round."""
    if config.opt_region:
        first, last = allocation.rounds[rnd].bounds
        return first * allocation.width, (last + 1) * allocation.width
    return 0, allocation.height * allocation.width


def account_cycles(allocation: Allocation, config: SimConfig) -> SimReport:
    """Pure cycle accounting: no pixel data required.

    Per round: ``load = contours * load_cost``, ``store = contours *
    store_cost`` and ``compute = scanned pixels`` after the region and
    fast-forward reductions. Without double buffering the total is the
    plain sum of all phases; with it, each round contributes
    ``max(compute, adjacent half's store+load)`` and only the first load
    and the last store are exposed.
    """
    rounds = []
    for rnd, plan in enumerate(allocation.rounds):
        n = len(allocation.round_members(rnd))
        start, stop = _scan_interval(allocation, rnd, config)
        skipped = plan.fast_forward.skipped_within(start, stop) if config.opt_fastforward else 0
        rounds.append(
            RoundCycles(
                load=n * config.load_cycles_per_contour,
                compute=(stop - start) - skipped,
                store=n * config.store_cycles_per_contour,
                skipped=skipped,
            )
        )

    if config.opt_doublebuffer and rounds:
        last = len(rounds) - 1
        total = rounds[0].load + rounds[last].store
        for r, rc in enumerate(rounds):
            hidden = (rounds[r - 1].store if r > 0 else 0) + (
                rounds[r + 1].load if r < last else 0
            )
            total += max(rc.compute, hidden)
    else:
        total = sum(rc.load + rc.compute + rc.store for rc in rounds)

    wall_us = round(total / config.clock_mhz, 1)
    return SimReport(rounds, total, wall_us)


def _scanned_grid(allocation: Allocation, rnd: int, config: SimConfig) -> np.ndarray:
    """Boolean (height, width) grid of pixels actually visited this round."""
    size = allocation.height * allocation.width
    scanned = np.zeros(size, dtype=bool)
    start, stop = _scan_interval(allocation, rnd, config)
    scanned[start:stop] = True
    if config.opt_fastforward:
        for lo, hi in allocation.rounds[rnd].fast_forward.ranges:
            lo, hi = max(lo, start), min(hi, stop)
            if lo < hi:
                scanned[lo:hi] = False
    return scanned.reshape(allocation.height, allocation.width)


def _box(contour, height, width):
    half = contour.window // 2
    row, col = contour.center
    return (
        max(0, row - half),
        min(height, row + half + 1),
        max(0, col - half),
        min(width, col + half + 1),
    )


def simulate_frame(
    frame: Frame, allocation: Allocation, config: Optional[SimConfig] = None
) -> Tuple[TraceVector, SimReport]:
    """Run the chain over one frame: traces plus the cycle report.

    The produced traces are bit-exact against the reference extractor for
    any valid allocation. If two contours stored in one TE both cover a
    scanned pixel, the single read port is hit twice in that cycle and
    :class:`ConflictDetected` is raised at the first such scan index.
    """
    if config is None:
        config = SimConfig(shape=allocation.shape)
    if config.shape is not None and config.shape != allocation.shape:
        raise InvalidShape(
            f"config shape {config.shape} does not match allocation shape {allocation.shape}"
        )
    h, w = allocation.height, allocation.width
    if frame.pixels.shape != (h, w):
        raise InvalidShape(
            f"frame is {frame.pixels.shape}, allocation expects {(h, w)}"
        )

    pixels = frame.pixels
    acc = np.zeros(len(allocation.contours), dtype=np.int64)
    for rnd in range(allocation.n_rounds):
        scanned = _scanned_grid(allocation, rnd, config)

        # Single-read-port check: within a TE, no scanned pixel may lie in
        # two stored windows.
        first_conflict = None
        for te, members in allocation.te_groups(rnd).items():
            if len(members) < 2:
                continue
            coverage = np.zeros((h, w), dtype=np.int16)
            for i in members:
                r0, r1, c0, c1 = _box(allocation.contours[i], h, w)
                coverage[r0:r1, c0:c1] += 1
            clash = (coverage >= 2) & scanned
            if clash.any():
                idx = int(np.argmax(clash.ravel()))
                if first_conflict is None or idx < first_conflict[0]:
                    first_conflict = (idx, te)
        if first_conflict is not None:
            idx, te = first_conflict
            raise ConflictDetected(
                f"TE {te} hit through two slots at scan index {idx} "
                f"(round {rnd})",
                scan_index=idx,
                te=te,
            )

        for i in allocation.round_members(rnd):
            contour = allocation.contours[i]
            r0, r1, c0, c1 = _box(contour, h, w)
            if r0 >= r1 or c0 >= c1:
                continue
            half = contour.window // 2
            mr0 = r0 - (contour.center[0] - half)
            mc0 = c0 - (contour.center[1] - half)
            mask = contour.mask[mr0 : mr0 + (r1 - r0), mc0 : mc0 + (c1 - c0)]
            window_pixels = pixels[r0:r1, c0:c1].astype(np.int64)
            acc[i] += np.sum(window_pixels * mask * scanned[r0:r1, c0:c1])

    if (acc > TRACE_MAX).any():
        bad = int(np.argmax(acc > TRACE_MAX))
        raise TraceOverflow(
            f"trace for contour {allocation.contours[bad].id} is {int(acc[bad])}, "
            f"exceeding {TRACE_MAX}"
        )
    traces = TraceVector(
        frame.index,
        tuple(ct.id for ct in allocation.contours),
        acc.astype(np.uint16),
    )
    return traces, account_cycles(allocation, config)


@dataclass
class ValidationReport:
    """Outcome of statically checking an allocation against its shape."""

    overlaps: List[Tuple[int, int, int, int]] = field(default_factory=list)
    capacity_violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.overlaps and not self.capacity_violations

    def __str__(self):
        if self.ok:
            return "allocation valid"
        lines = [
            f"overlap in round {rnd} TE {te}: contours {a} and {b}"
            for rnd, te, a, b in self.overlaps
        ]
        lines += self.capacity_violations
        return "\n".join(lines)


def validate_allocation(
    allocation: Allocation, shape: Optional[AcceleratorShape] = None
) -> ValidationReport:
    """List every same-TE overlapping pair and every capacity violation."""
    from .core import windows_overlap

    if shape is None:
        shape = allocation.shape
    report = ValidationReport()

    if len(allocation.contours) > shape.capacity:
        report.capacity_violations.append(
            f"{len(allocation.contours)} contours exceed capacity {shape.capacity}"
        )
    seen = {}
    for i, (rnd, te, slot) in enumerate(allocation.placement):
        cid = allocation.contours[i].id
        if te >= shape.te_count:
            report.capacity_violations.append(
                f"contour {cid} assigned to TE {te} >= te_count {shape.te_count}"
            )
        if slot >= shape.slots_per_te:
            report.capacity_violations.append(
                f"contour {cid} assigned to slot {slot} >= slots_per_te {shape.slots_per_te}"
            )
        if rnd >= shape.rounds:
            report.capacity_violations.append(
                f"contour {cid} assigned to round {rnd} >= rounds {shape.rounds}"
            )
        key = (rnd, te, slot)
        if key in seen:
            report.capacity_violations.append(
                f"contours {seen[key]} and {cid} share slot {key}"
            )
        seen[key] = cid

    for rnd in range(allocation.n_rounds):
        for te, members in allocation.te_groups(rnd).items():
            for pos, i in enumerate(members):
                for j in members[pos + 1 :]:
                    if windows_overlap(allocation.contours[i], allocation.contours[j]):
                        report.overlaps.append(
                            (rnd, te, allocation.contours[i].id, allocation.contours[j].id)
                        )
    return report
