"""Calcium-image trace extraction accelerator model and position decoders."""

from .alloc import (
    AcceleratorShape,
    Allocation,
    FastForwardTable,
    allocate_cells,
    build_fast_forward_table,
    generate_tile_contours,
    map_tiles,
    segment_regions,
)
from .core import (
    Contour,
    Frame,
    PixelEvent,
    Session,
    TraceVector,
    scan_order,
    window_indices,
    windows_overlap,
)
from .decoders import (
    AnnDecoder,
    CnnDecoder,
    DecoderInput,
    PositionPrediction,
    TraceImageBuilder,
    build_input,
    decode_ordinal,
    encode_ordinal,
    infer_categorical,
    select_cells,
)
from .errors import (
    AllocationInfeasible,
    CadecError,
    ConflictDetected,
    CorruptFile,
    DivergedTraining,
    EmptyInput,
    InvalidArgument,
    InvalidGeometry,
    InvalidParams,
    InvalidShape,
    NotEnoughCells,
    TraceOverflow,
)
from .metrics import hit_n, mean_error
from .perf import decoder_cycle_model, decoder_runtime_us
from .sim import SimConfig, SimReport, account_cycles, simulate_frame, validate_allocation
from .snn import SnnDecoder, quantize
from .synth import GeneratorParams, generate_session
from .tracing import extract_reference, extract_streaming, extract_traces

__version__ = "0.1.0"
