"""``mflqi`` command line: synth, template, detect, report.

Exit codes: 0 success, 1 validation error (including bad usage), 2 I/O error.

Examples::

    mflqi synth --preset protocol_aware --seed 1 --out scene.cf32
    mflqi template --bytes A7 --id tx1 --out tx1
    mflqi template --bytes 98 --id tx2 --out tx2
    mflqi detect scene.cf32 -t tx1.cf32 -t tx2.cf32 --events events.jsonl
    mflqi report events.jsonl --csv links.csv
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detector import DetectionEvent, DetectorConfig, StreamingDetector
from .iq import IqFormatError, read_iq_file, write_iq_file
from .lqi import accumulate, format_table, to_csv
from .scenarios import PRESETS, preset_path
from .synth import SceneFormatError, compose_scene, scene_from_dict
from .template import (TemplateError, load_template, locate_burst, normalize_template,
                       save_template, template_from_bytes, template_from_recording)

log = logging.getLogger("mflqi")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _hex_bytes(text: str) -> bytes:
    try:
        return bytes.fromhex(text.replace("0x", "").replace("0X", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex byte string: {text!r}") from None


# -- commands -------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    if bool(args.scene) == bool(args.preset):
        raise UsageError("synth: give exactly one of SCENE or --preset")
    if args.preset:
        src = preset_path(args.preset)
        doc = json.loads(src.read_text(encoding="utf-8"))
        origin = f"preset:{args.preset}"
    else:
        with open(args.scene, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SceneFormatError(f"{args.scene}: invalid JSON: {exc}") from None
        origin = Path(args.scene).name
    spec = scene_from_dict(doc)
    stream = compose_scene(spec, args.seed)
    out = write_iq_file(stream, args.out, extra_meta={"scene": origin, "seed": args.seed,
                                                     "noise_power": spec.noise_power})
    log.info("wrote %d samples to %s", len(stream), out)
    return EXIT_OK


def cmd_template(args: argparse.Namespace) -> int:
    if bool(args.bytes) == bool(args.recording):
        raise UsageError("template: give exactly one of --bytes or --recording")
    if args.bytes:
        t = template_from_bytes(args.bytes, args.samples_per_chip, args.id)
    else:
        stream = read_iq_file(args.recording, args.sample_rate)
        if args.length is None:
            raise UsageError("template: --recording needs --length")
        start = args.start
        if start is None:
            onset = locate_burst(stream, args.locate_threshold, args.locate_window)
            if onset is None:
                raise TemplateError(
                    f"no burst above {args.locate_threshold} found in {args.recording}")
            start = onset + args.offset
            log.info("burst onset at %d, clip starts at %d", onset, start)
        t = template_from_recording(stream, start, args.length, args.id, path=args.recording)
    if args.normalize:
        t = normalize_template(t)
    out = save_template(t, args.out)
    log.info("template %s: %d taps -> %s", t.id, t.n, out)
    return EXIT_OK


def _write_trace(fh, index0: int, rss, mf, corr, ids) -> None:
    cols = [np.arange(index0, index0 + rss.size), rss]
    for tid in ids:
        cols += [mf[tid], corr[tid]]
    np.savetxt(fh, np.column_stack(cols), fmt=["%d"] + ["%.9g"] * (len(cols) - 1), delimiter=",")


def cmd_detect(args: argparse.Namespace) -> int:
    if not args.template:
        raise UsageError("detect: at least one --template is required")
    cfg = DetectorConfig(t1=args.t1, t2=args.t2, t3=args.t3,
                         energy_window=args.energy_window, refractory=args.refractory)
    templates = [load_template(p) for p in args.template]
    stream = read_iq_file(args.input, args.sample_rate)
    det = StreamingDetector(templates, cfg)
    ids = [t.id for t in templates]
    events: list[DetectionEvent] = []
    trace_fh = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        if trace_fh:
            header = ["index", "rss"] + [f"{tid}_{k}" for tid in ids for k in ("mf_mag", "corr")]
            trace_fh.write(",".join(header) + "\n")
        for k, chunk in enumerate(stream.chunks(args.chunk_size)):
            out = det.feed(chunk)
            events.extend(out.events)
            if trace_fh:
                _write_trace(trace_fh, k * args.chunk_size, out.rss, out.mf_mag, out.corr, ids)
    finally:
        if trace_fh:
            trace_fh.close()
    events.extend(det.flush())
    events.sort()
    lines = "".join(json.dumps(e.to_dict()) + "\n" for e in events)
    if args.events and args.events != "-":
        Path(args.events).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    evals = det.mf_evaluations
    log.info("%d events over %d samples; MF evaluations %s", len(events), len(stream), evals)
    return EXIT_OK


def read_events(path: str) -> list[DetectionEvent]:
    events = []
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            events.append(DetectionEvent.from_dict(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad event record ({exc})") from None
    events.sort()
    return events


def cmd_report(args: argparse.Namespace) -> int:
    events = read_events(args.events)
    stats = accumulate(events, args.link or ())
    csv_text = to_csv(stats)
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
        print(format_table(stats, args.sample_rate))
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mflqi", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"mflqi {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="render a scene to .cf32")
    s.add_argument("scene", nargs="?", help="scene.json")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("template", help="build a matched-filter template")
    t.add_argument("--id", required=True)
    t.add_argument("-o", "--out", required=True, help="output path (.cf32 added if missing)")
    t.add_argument("--bytes", type=_hex_bytes, help="protocol-aware: hex bytes, e.g. A7")
    t.add_argument("--samples-per-chip", type=int, default=2)
    t.add_argument("--recording", help="protocol-blind: capture to clip from")
    t.add_argument("--sample-rate", type=float, default=None)
    t.add_argument("--start", type=int, default=None, help="clip start; omit to auto-locate")
    t.add_argument("--length", type=int, default=None)
    t.add_argument("--offset", type=int, default=0, help="clip offset from the located onset")
    t.add_argument("--locate-threshold", type=float, default=0.01)
    t.add_argument("--locate-window", type=int, default=16)
    t.add_argument("--normalize", action="store_true", help="scale taps to unit energy")
    t.set_defaults(func=cmd_template)

    d = sub.add_parser("detect", help="run the detection cascade")
    d.add_argument("input")
    d.add_argument("-t", "--template", action="append", default=[])
    d.add_argument("--sample-rate", type=float, default=None)
    d.add_argument("--t1", type=float, default=0.01)
    d.add_argument("--t2", type=float, default=1.0)
    d.add_argument("--t3", type=float, default=0.8)
    d.add_argument("--energy-window", type=int, default=16)
    d.add_argument("--refractory", type=int, default=None)
    d.add_argument("--chunk-size", type=int, default=1 << 18)
    d.add_argument("--events", default="-", help="JSON-lines output (default stdout)")
    d.add_argument("--trace", help="per-sample rss/mf_mag/corr CSV")
    d.set_defaults(func=cmd_detect)

    r = sub.add_parser("report", help="per-link statistics from events")
    r.add_argument("events", help="events JSON-lines ('-' for stdin)")
    r.add_argument("--csv", help="write CSV here and print a table")
    r.add_argument("--link", action="append", help="include this link even with no events")
    r.add_argument("--sample-rate", type=float, default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SceneFormatError, TemplateError, IqFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
