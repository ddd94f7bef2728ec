"""Command-line entry point: ``chunkshield {defend,score,synth,bench}``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 config, 5 numeric, 6 invalid input
(unsupported format, image too small, bad parameter).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .bench import SyntheticSpec, corpus_from_config, evaluate, generate_case, make_corpus, scaling_run
from .config import PipelineConfig, load_config
from .errors import ChunkShieldError, ConfigError, NumericError
from .image_io import atomic_write_bytes, encode_image, load_image
from .pipeline import defend

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5
EXIT_INPUT = 6

log = logging.getLogger("chunkshield")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline (override --config)")
    g.add_argument("--config", metavar="FILE", help="key = value config file")
    g.add_argument("--kernel", type=int, help="chunk size in pixels (default 50)")
    g.add_argument("--stride", type=int, help="window stride in pixels (default 25)")
    g.add_argument("--trees", type=int, help="isolation trees (default 100)")
    g.add_argument("--outlier-fraction", type=float, help="fraction of chunks to flag (default 0.01)")
    g.add_argument("--info", type=float, help="singular-value mass to keep (default 0.875)")
    g.add_argument("--bins", type=int, help="histogram bins per channel (default 32)")
    g.add_argument("--k-attrs", help="attributes tried per split, or 'all' (default all)")
    g.add_argument("--seed", type=int, help="forest seed (default 0)")
    g.add_argument("--workers", type=int, help="worker threads (default: CPU count)")


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        "kernel": args.kernel,
        "stride": args.stride,
        "trees": args.trees,
        "outlier_fraction": args.outlier_fraction,
        "info": args.info,
        "bins": args.bins,
        "k_attrs": args.k_attrs,
        "seed": args.seed,
        "workers": args.workers,
    }
    cfg = load_config(args.config, overrides)
    if args.workers is None and not _config_sets(args.config, "workers"):
        cfg = cfg.replace(workers=os.cpu_count() or 1)
    return cfg


def _config_sets(path: str | None, key: str) -> bool:
    if path is None:
        return False
    from .config import parse_config_text

    return key in parse_config_text(Path(path).read_text(encoding="utf-8"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkshield",
        description="Detect and neutralise localised adversarial patches in images.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("defend", help="defend one image and write the result")
    p.add_argument("input", help="input image (PNG, PPM/PGM, JPEG)")
    p.add_argument("output", help="output image (.png, .ppm or .pgm)")
    p.add_argument("--mask", metavar="FILE", help="also write a grayscale mask of flagged windows")
    _add_pipeline_flags(p)

    p = sub.add_parser("score", help="print per-chunk anomaly scores, highest first")
    p.add_argument("input", help="input image")
    _add_pipeline_flags(p)

    p = sub.add_parser("synth", help="write a synthetic test image with a planted patch")
    p.add_argument("output", help="output image (.png, .ppm or .pgm)")
    p.add_argument("--base", default="gradient", choices=["gradient", "noisy", "bandnoise", "file"])
    p.add_argument("--base-path", help="base image when --base file")
    p.add_argument("--patch", default="noise", choices=["noise", "checkerboard", "solid", "none"])
    p.add_argument("--patch-size", type=int, default=50)
    p.add_argument("--position", metavar="TOP,LEFT", help="patch corner (default: random from seed)")
    p.add_argument("--size", metavar="HxW", default="224x224", help="image size (default 224x224)")
    p.add_argument("--channels", type=int, default=3, choices=[1, 3])
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="evaluate detection and runtime on a synthetic corpus")
    p.add_argument("--corpus", metavar="FILE", help="JSON corpus description (default: generated)")
    p.add_argument("--cases", type=int, default=100, help="generated corpus size (default 100)")
    p.add_argument("--corpus-seed", type=int, default=0)
    p.add_argument("--bases", default="gradient,noisy", help="comma list for the generated corpus")
    p.add_argument("--patches", default="noise,checkerboard", help="comma list for the generated corpus")
    p.add_argument("--report", metavar="FILE", required=True, help="JSON-lines report to write")
    p.add_argument("--jobs", type=int, default=1, help="cases evaluated in parallel (default 1: clean timings)")
    p.add_argument("--scaling", metavar="N,N,...", help="also time feature extraction at these chunk counts")
    _add_pipeline_flags(p)
    return parser


def _parse_pair(text: str, sep: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split(sep)
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"bad {what} {text!r}") from None


def cmd_defend(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    image = load_image(args.input)
    result = defend(image, cfg)
    payload = encode_image(result.image, Path(args.output).suffix)
    mask_payload = encode_image(result.anomaly_mask(), Path(args.mask).suffix) if args.mask else None
    atomic_write_bytes(args.output, payload)
    if mask_payload is not None:
        atomic_write_bytes(args.mask, mask_payload)
    if result.warning:
        print(f"warning: {result.warning}", file=sys.stderr)
    print(f"flagged {len(result.flagged)} of {len(result.scores)} chunks")
    for stage, secs in result.timings.items():
        print(f"{stage:<11} {secs:.4f}s")
    print(f"{'total':<11} {result.total_runtime:.4f}s")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    image = load_image(args.input)
    result = defend(image, cfg)
    print("index\ttop\tleft\tscore")
    order = sorted(range(len(result.scores)), key=lambda i: (-result.scores[i], i))
    for i in order:
        top, left = result.positions[i]
        print(f"{i}\t{top}\t{left}\t{result.scores[i]:.6f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    h, w = _parse_pair(args.size, "x", "size")
    pos = _parse_pair(args.position, ",", "position") if args.position else None
    spec = SyntheticSpec(
        base=args.base,
        patch=args.patch,
        patch_size=args.patch_size,
        position=pos,
        height=h,
        width=w,
        channels=args.channels,
        seed=args.seed,
        base_path=args.base_path,
    )
    image, rect = generate_case(spec)
    atomic_write_bytes(args.output, encode_image(image, Path(args.output).suffix))
    print(json.dumps({"output": args.output, "patch": None if rect is None else dict(zip(("top", "left", "height", "width"), rect))}))
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    if args.corpus:
        with open(args.corpus, encoding="utf-8") as fh:
            try:
                corpus = corpus_from_config(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"corpus file is not valid JSON: {exc}") from exc
    else:
        corpus = make_corpus(args.cases, args.corpus_seed, args.bases.split(","), args.patches.split(","))
    report = evaluate(corpus, cfg.replace(workers=1), workers=args.jobs)
    text = report.to_jsonl()
    if args.scaling:
        counts = [int(x) for x in args.scaling.split(",")]
        table = scaling_run(counts, cfg)
        text += "".join(json.dumps({"record": "scaling", **r}) + "\n" for r in table.to_records())
    atomic_write_bytes(args.report, text.encode("utf-8"))
    print(report.to_table(), end="")
    return EXIT_OK


COMMANDS = {"defend": cmd_defend, "score": cmd_score, "synth": cmd_synth, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ChunkShieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
