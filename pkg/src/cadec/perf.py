"""Decoder runtime model: cycles as an affine function of MAC count.

Cycle counts measured for the synthesized decoding kernels at 300 MHz
anchor a two-parameter model per decoder family (cycles-per-MAC plus a
fixed overhead), fitted by least squares on the relative residuals so that
small and large kernels carry equal weight.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .core import POSITION_BINS
from .decoders import ORDINAL_NODES
from .errors import InvalidArgument

# Measured kernel cycle counts by input grid side.
HARDWARE_CYCLES_CNN = {13: 46_553, 16: 65_936, 17: 77_030, 25: 203_225, 27: 240_089}
HARDWARE_CYCLES_ANN = {
    "categorical": {13: 7_417, 16: 10_196, 17: 11_253, 25: 22_009, 27: 25_337},
    "ordinal": {13: 7_061, 16: 9_840, 17: 10_897, 25: 21_653, 27: 24_981},
}
# Spiking kernel: one measurement, 16x16 input at 8 time steps.
HARDWARE_CYCLES_SNN = {"grid_side": 16, "time_steps": 8, "cycles": 278_900}

ANN_HIDDEN = 32
CNN_FILTERS = 6
CNN_KERNEL = 3
DEFAULT_CLOCK_MHZ = 300.0


def model_macs(
    kind: str, grid_side: int, encoding: str = "categorical", time_steps: int = 8
) -> int:
    """Multiply-accumulate count of one inference for the given architecture."""
    out = POSITION_BINS if encoding == "categorical" else ORDINAL_NODES
    if kind == "cnn":
        feat = (grid_side - CNN_KERNEL + 1) ** 2
        return feat * CNN_KERNEL * CNN_KERNEL * CNN_FILTERS + feat * CNN_FILTERS * out
    if kind == "ann":
        n_in = grid_side * grid_side
        return n_in * ANN_HIDDEN + ANN_HIDDEN * ANN_HIDDEN + ANN_HIDDEN * out
    if kind == "snn":
        # Per step the spiking kernel does the work of one CNN pass.
        return time_steps * model_macs("cnn", grid_side, encoding)
    raise InvalidArgument(f"unknown decoder kind {kind!r}")


@dataclass(frozen=True)
class CycleConstants:
    cycles_per_mac: float
    overhead: float

    def estimate(self, macs: float) -> float:
        return self.overhead + self.cycles_per_mac * macs


def _fit_relative(macs, cycles) -> CycleConstants:
    """Least squares on (estimate - measured) / measured."""
    macs = np.asarray(macs, dtype=float)
    cycles = np.asarray(cycles, dtype=float)
    design = np.column_stack([macs / cycles, 1.0 / cycles])
    coef, *_ = np.linalg.lstsq(design, np.ones(len(cycles)), rcond=None)
    return CycleConstants(float(coef[0]), float(coef[1]))


def calibrate_cycle_model() -> Dict[str, CycleConstants]:
    """Fit the per-family constants to the measured kernel cycle counts."""
    cnn_sides = sorted(HARDWARE_CYCLES_CNN)
    cnn = _fit_relative(
        [model_macs("cnn", s) for s in cnn_sides],
        [HARDWARE_CYCLES_CNN[s] for s in cnn_sides],
    )
    ann_macs, ann_cycles = [], []
    for encoding, table in HARDWARE_CYCLES_ANN.items():
        for side, measured in sorted(table.items()):
            ann_macs.append(model_macs("ann", side, encoding))
            ann_cycles.append(measured)
    ann = _fit_relative(ann_macs, ann_cycles)
    snn_ref = HARDWARE_CYCLES_SNN
    snn_macs = model_macs("snn", snn_ref["grid_side"], time_steps=snn_ref["time_steps"])
    snn = CycleConstants(snn_ref["cycles"] / snn_macs, 0.0)
    return {"cnn": cnn, "ann": ann, "snn": snn}


_CALIBRATION: Optional[Dict[str, CycleConstants]] = None


def decoder_cycle_model(
    kind: str,
    grid_side: int,
    encoding: str = "categorical",
    time_steps: int = 8,
    calibration: Optional[Dict[str, CycleConstants]] = None,
) -> float:
    """Estimated kernel cycles for one inference of the given decoder."""
    global _CALIBRATION
    if calibration is None:
        if _CALIBRATION is None:
            _CALIBRATION = calibrate_cycle_model()
        calibration = _CALIBRATION
    macs = model_macs(kind, grid_side, encoding, time_steps)
    return calibration[kind].estimate(macs)


def decoder_runtime_us(
    kind: str,
    grid_side: int,
    encoding: str = "categorical",
    time_steps: int = 8,
    clock_mhz: float = DEFAULT_CLOCK_MHZ,
) -> float:
    return decoder_cycle_model(kind, grid_side, encoding, time_steps) / clock_mhz
