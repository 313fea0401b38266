"""Command-line entry point.

Subcommands cover the full pipeline: ``gen-data`` renders a synthetic
session, ``allocate`` produces conflict-free contour assignments,
``extract`` runs the reference extractor, ``simulate`` runs the cycle
simulator with its latency report, ``train``/``eval`` drive the decoders,
``bench`` runs the latency workload and ``sweep`` the quantization/step
grid. Progress goes to stderr; data goes to files or stdout. Exit codes:
0 success, 1 domain error, 2 usage error.
"""

import argparse
import math
import sys

import numpy as np

from . import alloc as alloc_mod
from . import experiment, io, synth
from .decoders import AnnDecoder, CnnDecoder
from .errors import CadecError, InvalidArgument
from .metrics import hit_n, mean_error
from .sim import SimConfig, simulate_frame, validate_allocation
from .snn import SnnDecoder
from .tracing import extract_traces


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _params_from_args(args) -> synth.GeneratorParams:
    return synth.GeneratorParams(
        n_cells=args.cells,
        n_frames=args.frames,
        width=args.width,
        height=args.height,
        noise_std=args.noise_std,
        seed=args.seed,
    )


def cmd_gen_data(args) -> int:
    params = _params_from_args(args)
    _log(f"rendering {params.n_frames} frames, {params.n_cells} cells, seed {params.seed}")
    io.write_session_stream(params, args.out)
    if args.contours_out:
        centers, _ = synth.make_cells(params)
        io.save_contours(synth.ground_truth_contours(params, centers), args.contours_out)
    _log(f"session written to {args.out}")
    return 0


def cmd_allocate(args) -> int:
    if args.mode == "tile":
        tiles = alloc_mod.generate_tile_contours(
            args.width, args.height, args.tile, args.window
        )
        allocation = alloc_mod.map_tiles(tiles, args.j)
        if args.contours_out:
            io.save_contours(tiles, args.contours_out)
    else:
        if not args.contours:
            raise InvalidArgument("cell mode needs --contours")
        contours = io.load_contours(args.contours)
        rounds = args.rounds or max(1, math.ceil(len(contours) / (args.j * args.k)))
        shape = alloc_mod.AcceleratorShape(args.j, args.k, rounds)
        allocation = alloc_mod.allocate_cells(
            contours, shape, seed=args.seed, width=args.width, height=args.height
        )
    report = validate_allocation(allocation)
    if not report.ok:
        raise InvalidArgument(f"produced allocation failed validation:\n{report}")
    io.save_allocation(allocation, args.out)
    _log(
        f"allocated {len(allocation.contours)} contours over "
        f"{allocation.n_rounds} round(s) -> {args.out}"
    )
    return 0


def cmd_extract(args) -> int:
    contours = io.load_contours(args.contours)
    info, chunks = io.iter_session_frames(args.session)
    traces = np.empty((info["n_frames"], len(contours)), dtype=np.uint16)
    for start, frames in chunks:
        traces[start : start + len(frames)] = extract_traces(frames, contours)
    io.save_traces_csv(args.out, [ct.id for ct in contours], traces)
    _log(f"{info['n_frames']} trace rows written to {args.out}")
    return 0


def _parse_opts(opt_string):
    flags = {"region": False, "ff": False, "db": False}
    if opt_string:
        for name in opt_string.split(","):
            name = name.strip()
            if name not in flags:
                raise InvalidArgument(f"unknown optimization {name!r}; use region,ff,db")
            flags[name] = True
    return flags


def cmd_simulate(args) -> int:
    contours = io.load_contours(args.contours)
    info, chunks = io.iter_session_frames(args.session)
    shape = None
    if args.j and args.k:
        rounds = args.rounds or 1
        shape = alloc_mod.AcceleratorShape(args.j, args.k, rounds)
    allocation = io.load_allocation(
        args.allocation, contours, info["width"], info["height"], shape=shape
    )
    flags = _parse_opts(args.opt)
    config = SimConfig(
        shape=allocation.shape,
        clock_mhz=args.clock_mhz,
        opt_region=flags["region"],
        opt_fastforward=flags["ff"],
        opt_doublebuffer=flags["db"],
    )
    limit = args.frames if args.frames else info["n_frames"]

    rows = []
    trace_rows = []
    done = 0
    from .core import Frame

    for start, frames in chunks:
        for offset in range(len(frames)):
            if done >= limit:
                break
            index = start + offset
            traces, report = simulate_frame(Frame(frames[offset], index), allocation, config)
            for rnd, rc in enumerate(report.rounds):
                rows.append(
                    (index, rnd, rc.load, rc.compute, rc.store, rc.skipped,
                     report.total_cycles, report.wall_us, report.conflicts)
                )
            trace_rows.append(traces.values)
            done += 1
        if done >= limit:
            break
    with open(args.report, "w") as fh:
        fh.write("frame,round,load,compute,store,skipped,total_cycles,wall_us,conflicts\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    if args.traces_out:
        io.save_traces_csv(
            args.traces_out, [ct.id for ct in allocation.contours], np.array(trace_rows)
        )
    _log(f"simulated {done} frame(s); report -> {args.report}")
    return 0


def _load_dataset(args) -> experiment.TraceDataset:
    session = io.load_session(args.session)
    if args.contours:
        session.contours = io.load_contours(args.contours)
    return experiment.dataset_from_session(session, tile=args.tile)


_ENCODINGS = {"cat": "categorical", "ord": "ordinal"}


def cmd_train(args) -> int:
    dataset = _load_dataset(args)
    if args.input == "cell" and not dataset.cell_ids:
        raise InvalidArgument("cell input needs --contours")
    encoding = _ENCODINGS[args.encoding]
    seed = args.seed
    split = dataset.split
    traces = dataset.cell_traces if args.input == "cell" else dataset.tile_traces
    builder = experiment.make_builder(dataset, args.input).fit(traces[:split])
    inputs = builder.transform(traces)
    labels = dataset.positions

    if args.model == "snn":
        cnn = CnnDecoder(encoding="categorical", seed=seed, epochs=args.epochs)
        cnn.fit(inputs[:split], labels[:split])
        model = SnnDecoder.from_cnn(
            cnn, inputs[:split], time_steps=args.ts, bits=args.bits
        )
    else:
        model = experiment.make_decoder(args.model, encoding, seed, args.epochs)
        model.fit(inputs[:split], labels[:split])
        if args.bits:
            from .snn import quantize

            model = quantize(model, args.bits)
    io.save_checkpoint(model, args.out)
    _log(f"{args.model} model written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = _load_dataset(args)
    split = dataset.split
    if args.model_file:
        model = io.load_checkpoint(args.model_file)
        traces = dataset.cell_traces if args.input == "cell" else dataset.tile_traces
        builder = experiment.make_builder(dataset, args.input).fit(traces[:split])
        inputs = builder.transform(traces)
        predictions = model.predict(inputs[split:])
        truth = dataset.positions[split:]
        print(
            f"hit1={hit_n(predictions, truth, 1):.2f} "
            f"hit3={hit_n(predictions, truth, 3):.2f} "
            f"sigma={mean_error(predictions, truth):.4f}"
        )
        return 0
    rows = experiment.run_experiment(
        dataset, trials=args.trials, seed=args.seed, epochs=args.epochs, jobs=args.jobs
    )
    experiment.save_report_csv(args.report, rows)
    _log(f"experiment grid written to {args.report}")
    return 0


def cmd_bench(args) -> int:
    slot_options = tuple(int(v) for v in args.k_options.split(","))
    outcome = experiment.latency_bench(
        n_cells=args.cells,
        te_count=args.j,
        slot_options=slot_options,
        clock_mhz=args.clock_mhz,
        seed=args.seed,
    )
    print("slots rounds baseline_us optimized_us speedup")
    for row in outcome["results"]:
        marker = " *" if row is outcome["best"] else ""
        print(
            f"{row['slots_per_te']:>5} {row['rounds']:>6} "
            f"{row['baseline_us']:>11.1f} {row['optimized_us']:>12.1f} "
            f"{row['speedup']:>7.2f}{marker}"
        )
    best = outcome["best"]
    print(
        f"best: {best['slots_per_te']} slots/TE, "
        f"{best['baseline_us'] / 1000:.2f} ms -> {best['optimized_us'] / 1000:.3f} ms "
        f"({best['speedup']:.1f}x)"
    )
    return 0


def cmd_sweep(args) -> int:
    dataset = _load_dataset(args)
    rows = experiment.snn_sweep(
        dataset,
        input_kind=args.input,
        bits_list=tuple(int(v) for v in args.bits_list.split(",")),
        ts_list=tuple(int(v) for v in args.ts_list.split(",")),
        trials=args.trials,
        seed=args.seed,
        epochs=args.epochs,
    )
    experiment.save_report_csv(args.report, rows, columns=experiment.SWEEP_COLUMNS)
    _log(f"sweep written to {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadec",
        description="Trace-extraction accelerator model and position decoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic session")
    p.add_argument("--cells", type=int, default=300)
    p.add_argument("--frames", type=int, default=8000)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--noise-std", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--contours-out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("allocate", help="assign contours to tracing elements")
    p.add_argument("--mode", choices=("cell", "tile"), default="cell")
    p.add_argument("--contours")
    p.add_argument("--contours-out")
    p.add_argument("--j", type=int, default=32)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--rounds", type=int, default=0)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--tile", type=int, default=16)
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("extract", help="reference trace extraction over a session")
    p.add_argument("--session", required=True)
    p.add_argument("--contours", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("simulate", help="cycle-level simulation with latency report")
    p.add_argument("--session", required=True)
    p.add_argument("--allocation", required=True)
    p.add_argument("--contours", required=True)
    p.add_argument("--j", type=int, default=0)
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--rounds", type=int, default=0)
    p.add_argument("--clock-mhz", type=float, default=300.0)
    p.add_argument("--opt", default="", help="comma list of region,ff,db")
    p.add_argument("--frames", type=int, default=0, help="limit simulated frames")
    p.add_argument("--report", required=True)
    p.add_argument("--traces-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a decoder on a session")
    p.add_argument("--session", required=True)
    p.add_argument("--contours")
    p.add_argument("--model", choices=("cnn", "ann", "snn"), required=True)
    p.add_argument("--encoding", choices=("cat", "ord"), default="cat")
    p.add_argument("--input", choices=("cell", "tile"), default="tile")
    p.add_argument("--bits", type=int, default=0)
    p.add_argument("--ts", type=int, default=32)
    p.add_argument("--tile", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or run the accuracy grid")
    p.add_argument("--session", required=True)
    p.add_argument("--contours")
    p.add_argument("--model-file")
    p.add_argument("--input", choices=("cell", "tile"), default="tile")
    p.add_argument("--tile", type=int, default=16)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", default="report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency benchmark workload")
    p.add_argument("--cells", type=int, default=760)
    p.add_argument("--j", type=int, default=32)
    p.add_argument("--k-options", default="4,8,16")
    p.add_argument("--clock-mhz", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="quantization / time-step accuracy sweep")
    p.add_argument("--session", required=True)
    p.add_argument("--contours")
    p.add_argument("--input", choices=("cell", "tile"), default="cell")
    p.add_argument("--bits-list", default="8,6,4")
    p.add_argument("--ts-list", default="32,16,8,4")
    p.add_argument("--tile", type=int, default=16)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except CadecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
