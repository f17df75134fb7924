"""Command-line interface: transcode, play, inspect, bench, serve.

Exit codes: 0 on success, 1 on I/O or stream errors (one-line diagnostic on
stderr), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .container import CODEC_COMPRESSED, CODEC_RAW, ContainerError, inspect, read_stream
from .imagefiles import write_netpbm
from .pipeline import (
    SessionConfig,
    bench_csv,
    bench_matrix,
    bench_table,
    start_session,
)
from .reconstruct import play
from .transcode import RoiRect


def _parse_roi(text: str) -> RoiRect:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("roi must be x0,y0,x1,y1")
    x0, y0, x1, y1 = (int(p) for p in parts)
    return RoiRect(x0, y0, x1, y1)


def _parse_plane(text: str) -> tuple[int, int]:
    w, _, h = text.partition("x")
    return int(w), int(h)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adder", description="event-video transcoding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_tr = sub.add_parser("transcode", help="source video -> .adder stream")
    p_tr.add_argument("source", help="video path, PGM/PPM glob, synth:// URI, "
                                     "or DVS .csv")
    p_tr.add_argument("-o", "--output", required=True)
    p_tr.add_argument("--crf", type=int, default=3, choices=range(10))
    p_tr.add_argument("--codec", choices=["raw", "compressed"], default="raw")
    p_tr.add_argument("--dtm-multiple", type=int, default=30,
                      help="delta_t_max as a multiple of ref_interval")
    p_tr.add_argument("--roi", type=_parse_roi, default=None,
                      metavar="X0,Y0,X1,Y1")
    p_tr.add_argument("--dvs-plane", type=_parse_plane, default=None,
                      metavar="WxH", help="plane size for DVS csv input")

    p_play = sub.add_parser("play", help=".adder stream -> PGM/PPM frames")
    p_play.add_argument("stream")
    p_play.add_argument("--fps", type=int, default=30)
    p_play.add_argument("--out-dir", default=None,
                        help="write numbered frames here (default: summary only)")

    p_ins = sub.add_parser("inspect", help="print stream metadata")
    p_ins.add_argument("stream")

    p_bench = sub.add_parser("bench", help="throughput matrix over synthetic clips")
    p_bench.add_argument("--frames", type=int, default=30)
    p_bench.add_argument("--sizes", default="sd,fhd",
                         help="comma list from sd,hd,fhd or WxH forms")
    p_bench.add_argument("--out-dir", default=".")
    p_bench.add_argument("--csv", default=None, help="also write a CSV here")

    p_serve = sub.add_parser("serve", help="start the live control endpoint")
    p_serve.add_argument("source", nargs="?", default=None,
                         help="optional source to open immediately")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--crf", type=int, default=3, choices=range(10))
    p_serve.add_argument("--output", default=None)
    return parser


_SIZE_ALIASES = {"sd": (640, 360), "hd": (1280, 720), "fhd": (1920, 1080)}


def _cmd_transcode(args) -> int:
    codec = CODEC_RAW if args.codec == "raw" else CODEC_COMPRESSED
    cfg = SessionConfig(source=args.source, output=args.output,
                        codec_id=codec, crf=args.crf,
                        dtm_multiple=args.dtm_multiple, roi=args.roi,
                        dvs_plane=args.dvs_plane)
    session = start_session(cfg)
    session.wait()
    if session.error is not None:
        raise session.error
    st = session.stats()
    print(f"{args.output}: {st.events_total} events from {st.frames_total} "
          f"batches")
    return 0


def _cmd_play(args) -> int:
    data = Path(args.stream).read_bytes()
    params, events = read_stream(data)
    out_dir = None
    if args.out_dir is not None:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for tick, frame in play(params, events, target_fps=args.fps):
        if out_dir is not None:
            ext = "pgm" if frame.ndim == 2 else "ppm"
            write_netpbm(out_dir / f"frame_{count:06d}.{ext}", frame)
        count += 1
    print(f"{count} frames at {args.fps} fps"
          + (f" -> {out_dir}" if out_dir else ""))
    return 0


def _cmd_inspect(args) -> int:
    data = Path(args.stream).read_bytes()
    print(inspect(data).format_report())
    return 0


def _cmd_bench(args) -> int:
    cells = []
    for size in args.sizes.split(","):
        size = size.strip()
        if size in _SIZE_ALIASES:
            w, h = _SIZE_ALIASES[size]
        else:
            w, h = _parse_plane(size)
        for channels, chan_label in ((1, "gray"), (3, "color")):
            src = (f"synth://square?seed=1&w={w}&h={h}&frames={args.frames}"
                   f"&size={max(8, w // 8)}&speed=2&c={channels}")
            for codec, codec_label in ((CODEC_RAW, "raw"),
                                       (CODEC_COMPRESSED, "comp")):
                cells.append((f"{size}_{chan_label}_{codec_label}", src, codec))
    rows = bench_matrix(cells, out_dir=args.out_dir)
    print(bench_table(rows))
    if args.csv:
        Path(args.csv).write_text(bench_csv(rows))
        print(f"csv -> {args.csv}")
    return 0


def _cmd_serve(args) -> int:
    from .server import serve  # import here: optional websockets dependency

    serve(host=args.host, port=args.port, source=args.source,
          crf=args.crf, output=args.output)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {
        "transcode": _cmd_transcode,
        "play": _cmd_play,
        "inspect": _cmd_inspect,
        "bench": _cmd_bench,
        "serve": _cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except KeyboardInterrupt:
        return 130
    except (OSError, ContainerError, ValueError) as exc:
        print(f"adder: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
