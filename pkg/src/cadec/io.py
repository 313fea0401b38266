"""File formats.

* contour file — one text record per contour: ``id row col kind hexmask``
  with the mask bits packed row-major, four bits per hex digit, zero-padded;
* session file — a text header ``width height n_frames window frame_rate
  seed``, a line of space-separated position bins, then the raw frame bytes
  row-major with frames concatenated;
* allocation file — ``contour_id round te slot`` lines, then ``# bounds``
  and ``# skip`` lines carrying each round's scan rows and skip ranges;
* trace CSV — header ``frame,<ids...>``, one row per frame;
* model checkpoint — a little-endian binary container starting with the
  magic ``CADC1``.

Loaders validate structure and raise :class:`CorruptFile` with the byte
offset of the first inconsistency.
"""

import math
import struct
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .alloc import AcceleratorShape, Allocation, FastForwardTable, RoundPlan
from .core import CONTOUR_KINDS, Contour, POSITION_BINS, Session
from .decoders import AnnDecoder, CnnDecoder, ORDINAL_NODES
from .errors import CorruptFile, InvalidArgument
from .snn import SnnDecoder

CHECKPOINT_MAGIC = b"CADC1"
_KIND_CODES = {"cnn": 1, "ann": 2, "snn": 3}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_ENCODING_CODES = {"categorical": 0, "ordinal": 1}
_ENCODING_NAMES = {v: k for k, v in _ENCODING_CODES.items()}


# ---------------------------------------------------------------------------
# contour file

def mask_to_hex(mask: np.ndarray) -> str:
    bits = np.asarray(mask, dtype=np.uint8).ravel()
    hex_len = (bits.size + 3) // 4
    return np.packbits(bits).tobytes().hex()[:hex_len]


def hex_to_mask(digits: str, side: int) -> np.ndarray:
    n = side * side
    if len(digits) != (n + 3) // 4:
        raise ValueError("hex mask length does not match the window size")
    padded = digits + "0" * (len(digits) % 2)
    data = np.frombuffer(bytes.fromhex(padded), dtype=np.uint8)
    bits = np.unpackbits(data)[:n]
    return bits.reshape(side, side)


def _side_from_hex_length(hex_len: int) -> int:
    for n_bits in range(4 * hex_len - 3, 4 * hex_len + 1):
        side = math.isqrt(n_bits)
        if side * side == n_bits and side % 2 == 1:
            return side
    raise ValueError(f"no odd square bit count fits {hex_len} hex digits")


def save_contours(contours: Sequence[Contour], path) -> None:
    with open(path, "w") as fh:
        for ct in contours:
            fh.write(
                f"{ct.id} {ct.center[0]} {ct.center[1]} {ct.kind} "
                f"{mask_to_hex(ct.mask)}\n"
            )


def load_contours(path) -> List[Contour]:
    contours = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("ascii", errors="replace").strip()
            if line:
                fields = line.split()
                if len(fields) != 5:
                    raise CorruptFile(
                        f"contour record needs 5 fields, got {len(fields)}", offset
                    )
                try:
                    cid, row, col = int(fields[0]), int(fields[1]), int(fields[2])
                    kind = fields[3]
                    if kind not in CONTOUR_KINDS:
                        raise ValueError(f"unknown kind {kind!r}")
                    side = _side_from_hex_length(len(fields[4]))
                    mask = hex_to_mask(fields[4], side)
                    contours.append(Contour(cid, (row, col), mask, kind))
                except (ValueError, CorruptFile) as exc:
                    raise CorruptFile(f"bad contour record: {exc}", offset) from exc
            offset += len(raw)
    return contours


# ---------------------------------------------------------------------------
# session file

def _session_header(session: Session) -> str:
    return (
        f"{session.width} {session.height} {session.n_frames} "
        f"{session.window} {float(session.frame_rate)} {session.seed}\n"
    )


def save_session(session: Session, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_session_header(session).encode("ascii"))
        fh.write((" ".join(str(int(p)) for p in session.positions) + "\n").encode("ascii"))
        fh.write(session.frames.tobytes())


def _read_session_header(fh):
    offset = 0
    header_raw = fh.readline()
    fields = header_raw.decode("ascii", errors="replace").split()
    if len(fields) != 6:
        raise CorruptFile(f"session header needs 6 fields, got {len(fields)}", offset)
    try:
        width, height, n_frames, window = (int(v) for v in fields[:4])
        frame_rate = float(fields[4])
        seed = int(fields[5])
    except ValueError as exc:
        raise CorruptFile(f"bad session header: {exc}", offset) from exc
    if min(width, height, n_frames) <= 0 or window % 2 == 0:
        raise CorruptFile("session header values out of range", offset)
    offset += len(header_raw)

    positions_raw = fh.readline()
    try:
        positions = np.array([int(v) for v in positions_raw.split()], dtype=np.int64)
    except ValueError as exc:
        raise CorruptFile(f"bad positions line: {exc}", offset) from exc
    if len(positions) != n_frames:
        raise CorruptFile(
            f"expected {n_frames} positions, got {len(positions)}", offset
        )
    if len(positions) and (positions.min() < 0 or positions.max() >= POSITION_BINS):
        raise CorruptFile("position bins out of range", offset)
    offset += len(positions_raw)
    return (width, height, n_frames, window, frame_rate, seed, positions, offset)


def load_session(path) -> Session:
    with open(path, "rb") as fh:
        width, height, n_frames, window, frame_rate, seed, positions, offset = (
            _read_session_header(fh)
        )
        expected = n_frames * height * width
        payload = fh.read(expected)
        if len(payload) != expected:
            raise CorruptFile(
                f"frame payload truncated: expected {expected} bytes, "
                f"got {len(payload)}",
                offset + len(payload),
            )
        if fh.read(1):
            raise CorruptFile("trailing bytes after frame payload", offset + expected)
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(n_frames, height, width)
    return Session(
        frames=frames.copy(),
        positions=positions,
        contours=[],
        frame_rate=frame_rate,
        seed=seed,
        window=window,
    )


def write_session_stream(params, path, chunk: int = 256) -> None:
    """Render a synthetic session straight to disk, one chunk at a time.

    Produces exactly the bytes :func:`save_session` would write for the
    fully materialized session, without holding all frames in memory.
    """
    from .synth import iter_frames, make_trajectory

    _, bins = make_trajectory(params)
    header = (
        f"{params.width} {params.height} {params.n_frames} "
        f"{params.window} {float(params.frame_rate)} {params.seed}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write((" ".join(str(int(p)) for p in bins) + "\n").encode("ascii"))
        for _, frames in iter_frames(params, chunk):
            fh.write(frames.tobytes())


def iter_session_frames(path, chunk: int = 256):
    """Stream a session file without holding all frames: (info, generator).

    ``info`` is a dict of the header fields plus positions; the generator
    yields ``(start_index, frames_uint8)`` chunks.
    """
    fh = open(path, "rb")
    width, height, n_frames, window, frame_rate, seed, positions, offset = (
        _read_session_header(fh)
    )
    info = {
        "width": width,
        "height": height,
        "n_frames": n_frames,
        "window": window,
        "frame_rate": frame_rate,
        "seed": seed,
        "positions": positions,
    }
    frame_bytes = height * width

    def frames():
        try:
            read = 0
            for start in range(0, n_frames, chunk):
                count = min(chunk, n_frames - start)
                payload = fh.read(count * frame_bytes)
                if len(payload) != count * frame_bytes:
                    raise CorruptFile(
                        "frame payload truncated", offset + read + len(payload)
                    )
                read += len(payload)
                yield start, np.frombuffer(payload, dtype=np.uint8).reshape(
                    count, height, width
                )
            if fh.read(1):
                raise CorruptFile("trailing bytes after frame payload", offset + read)
        finally:
            fh.close()

    return info, frames()


# ---------------------------------------------------------------------------
# allocation file

def save_allocation(allocation: Allocation, path) -> None:
    with open(path, "w") as fh:
        for ct, (rnd, te, slot) in zip(allocation.contours, allocation.placement):
            fh.write(f"{ct.id} {rnd} {te} {slot}\n")
        for rnd, plan in enumerate(allocation.rounds):
            fh.write(f"# bounds {rnd} {plan.bounds[0]} {plan.bounds[1]}\n")
        for rnd, plan in enumerate(allocation.rounds):
            for lo, hi in plan.fast_forward.ranges:
                fh.write(f"# skip {rnd} {lo} {hi}\n")


def load_allocation(
    path,
    contours: Sequence[Contour],
    width: int,
    height: int,
    shape: Optional[AcceleratorShape] = None,
) -> Allocation:
    """Rebuild an allocation; masks come from the separate contour list."""
    by_id = {ct.id: ct for ct in contours}
    order: List[Contour] = []
    placement: List[Tuple[int, int, int]] = []
    bounds: Dict[int, Tuple[int, int]] = {}
    skips: Dict[int, List[Tuple[int, int]]] = {}
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("ascii", errors="replace").strip()
            try:
                if line.startswith("#"):
                    fields = line[1:].split()
                    if fields[:1] == ["bounds"] and len(fields) == 4:
                        bounds[int(fields[1])] = (int(fields[2]), int(fields[3]))
                    elif fields[:1] == ["skip"] and len(fields) == 4:
                        skips.setdefault(int(fields[1]), []).append(
                            (int(fields[2]), int(fields[3]))
                        )
                    else:
                        raise ValueError(f"unknown annotation {line!r}")
                elif line:
                    fields = line.split()
                    if len(fields) != 4:
                        raise ValueError("assignment line needs 4 fields")
                    cid, rnd, te, slot = (int(v) for v in fields)
                    if cid not in by_id:
                        raise ValueError(f"unknown contour id {cid}")
                    order.append(by_id[cid])
                    placement.append((rnd, te, slot))
            except ValueError as exc:
                raise CorruptFile(f"bad allocation line: {exc}", offset) from exc
            offset += len(raw)

    n_rounds = max(
        [r for r, _, _ in placement] + list(bounds) + list(skips), default=-1
    ) + 1
    n_rounds = max(n_rounds, 1)
    plans = []
    for rnd in range(n_rounds):
        if rnd not in bounds:
            raise CorruptFile(f"missing bounds for round {rnd}", offset)
        plans.append(
            RoundPlan(bounds[rnd], FastForwardTable(sorted(skips.get(rnd, []))))
        )
    if shape is None:
        shape = AcceleratorShape(
            te_count=max((te for _, te, _ in placement), default=0) + 1,
            slots_per_te=max((s for _, _, s in placement), default=0) + 1,
            rounds=n_rounds,
        )
    window = order[0].window if order else (contours[0].window if contours else 25)
    return Allocation(shape, width, height, window, order, placement, plans)


# ---------------------------------------------------------------------------
# trace CSV

def save_traces_csv(path, ids: Sequence[int], traces: np.ndarray) -> None:
    traces = np.asarray(traces)
    with open(path, "w") as fh:
        fh.write("frame," + ",".join(str(i) for i in ids) + "\n")
        for frame_i, row in enumerate(traces):
            fh.write(str(frame_i) + "," + ",".join(str(int(v)) for v in row) + "\n")


def load_traces_csv(path) -> Tuple[List[int], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:1] != ["frame"]:
            raise CorruptFile("trace CSV must start with a 'frame' header", 0)
        ids = [int(v) for v in header[1:]]
        rows = []
        for line in fh:
            if line.strip():
                rows.append([int(v) for v in line.strip().split(",")][1:])
    return ids, np.asarray(rows, dtype=np.uint16)


# ---------------------------------------------------------------------------
# model checkpoints

def _model_arrays(model) -> List[np.ndarray]:
    return [np.atleast_2d(np.asarray(getattr(model, attr))) for attr in model._weight_attrs]


def _quantized_payload(weights: np.ndarray, scale: float, bits: int) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(weights.shape, dtype=np.int16)
    levels = (1 << (bits - 1)) - 1
    return np.rint(weights / scale * levels).astype(np.int16)


def model_to_bytes(model) -> bytes:
    """Serialize a fitted decoder into the checkpoint container."""
    if isinstance(model, CnnDecoder):
        kind = "cnn"
    elif isinstance(model, AnnDecoder):
        kind = "ann"
    elif isinstance(model, SnnDecoder):
        kind = "snn"
    else:
        raise InvalidArgument(f"cannot checkpoint {type(model).__name__}")
    encoding = "categorical" if kind == "snn" else model.encoding
    bits = int(getattr(model, "bits_", 0) or 0)
    arrays = _model_arrays(model)

    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<BBB", _KIND_CODES[kind], _ENCODING_CODES[encoding], len(arrays))
    for attr, arr in zip(model._weight_attrs, arrays):
        rows, cols = arr.shape
        scale = float(model.scales_.get(attr, 0.0)) if bits else 0.0
        blob += struct.pack("<IIBd", rows, cols, bits, scale)
        if bits:
            blob += _quantized_payload(arr, scale, bits).tobytes()
        else:
            blob += arr.astype("<f8").tobytes()
    if kind == "snn":
        thresholds = np.asarray(model.thresholds_, dtype=float)
        blob += struct.pack("<I", len(thresholds))
        blob += thresholds.astype("<f8").tobytes()
        blob += struct.pack("<I", int(model.time_steps))
    return bytes(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise CorruptFile(
                f"checkpoint truncated: needed {count} more bytes", self.offset
            )
        out = self.data[self.offset : self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(data: bytes):
    reader = _Reader(data)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CorruptFile("bad checkpoint magic", 0)
    kind_code, enc_code, n_arrays = reader.unpack("<BBB")
    if kind_code not in _KIND_NAMES or enc_code not in _ENCODING_NAMES:
        raise CorruptFile("unknown model kind or encoding tag", 5)
    kind = _KIND_NAMES[kind_code]
    encoding = _ENCODING_NAMES[enc_code]

    arrays, scales, bits_seen = [], [], []
    for _ in range(n_arrays):
        rows, cols, bits, scale = reader.unpack("<IIBd")
        if bits:
            raw = reader.take(rows * cols * 2)
            q = np.frombuffer(raw, dtype=np.int16).reshape(rows, cols)
            levels = (1 << (bits - 1)) - 1
            arr = (
                q.astype(float) * (scale / levels)
                if scale
                else np.zeros((rows, cols))
            )
        else:
            raw = reader.take(rows * cols * 8)
            arr = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
        arrays.append(arr)
        scales.append(scale)
        bits_seen.append(bits)

    thresholds = None
    time_steps = None
    if kind == "snn":
        (n_th,) = reader.unpack("<I")
        thresholds = np.frombuffer(reader.take(n_th * 8), dtype="<f8").copy()
        (time_steps,) = reader.unpack("<I")
    if reader.offset != len(data):
        raise CorruptFile("trailing bytes after checkpoint payload", reader.offset)

    bits = bits_seen[0] if bits_seen else 0
    model = _rebuild_model(kind, encoding, arrays, bits, thresholds, time_steps)
    model.bits_ = bits
    model.scales_ = (
        dict(zip(model._weight_attrs, scales)) if bits else {}
    )
    return model


def _rebuild_model(kind, encoding, arrays, bits, thresholds, time_steps):
    expected_out = POSITION_BINS if encoding == "categorical" else ORDINAL_NODES
    if kind == "ann":
        if len(arrays) != 6:
            raise CorruptFile(f"ann checkpoint needs 6 arrays, got {len(arrays)}")
        w1, b1, w2, b2, w3, b3 = arrays
        if w3.shape[1] != expected_out:
            raise CorruptFile("output width does not match the encoding tag")
        model = AnnDecoder(encoding=encoding, hidden=w1.shape[1])
        model.w1_, model.w2_, model.w3_ = w1, w2, w3
        model.b1_, model.b2_, model.b3_ = b1.ravel(), b2.ravel(), b3.ravel()
        model.n_features_in_ = w1.shape[0]
        return model

    if len(arrays) != 4:
        raise CorruptFile(f"{kind} checkpoint needs 4 arrays, got {len(arrays)}")
    conv_w, conv_b, fc_w, fc_b = arrays
    kernel = math.isqrt(conv_w.shape[0])
    filters = conv_w.shape[1]
    if kernel * kernel != conv_w.shape[0]:
        raise CorruptFile("conv kernel is not square")
    if fc_w.shape[0] % filters:
        raise CorruptFile("dense input width inconsistent with filter count")
    positions = fc_w.shape[0] // filters
    out_side = math.isqrt(positions)
    if out_side * out_side != positions:
        raise CorruptFile("dense input width is not a square feature map")
    side = out_side + kernel - 1

    if kind == "cnn":
        if fc_w.shape[1] != expected_out:
            raise CorruptFile("output width does not match the encoding tag")
        model = CnnDecoder(encoding=encoding, filters=filters, kernel=kernel)
        model.conv_w_, model.fc_w_ = conv_w, fc_w
        model.conv_b_, model.fc_b_ = conv_b.ravel(), fc_b.ravel()
        model.side_ = side
        model.n_features_in_ = side * side
        return model

    model = SnnDecoder(time_steps=int(time_steps), bits=bits, kernel=kernel)
    model.conv_w_, model.fc_w_ = conv_w, fc_w
    model.conv_b_, model.fc_b_ = conv_b.ravel(), fc_b.ravel()
    model.thresholds_ = thresholds
    model.side_ = side
    model.filters_ = filters
    return model


def save_checkpoint(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
