"""Command line for feature extraction.

Exit codes: 0 success, 1 usage error, 2 extraction/data error.
"""

from __future__ import annotations

import argparse
import sys

from .backbones import available_models
from .extract import ExtractConfig, ExtractError, extract
from .video import VideoError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"usage error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="ptmvqa-extract",
                     description="Extract per-view features from videos with "
                                 "frozen pretrained backbones")
    parser.add_argument("--videos", help="directory of video files")
    parser.add_argument("--labels", help="CSV of video_id,mos lines")
    parser.add_argument("--models",
                        help="comma-separated backbone names (see --list-models)")
    parser.add_argument("--frames", type=int, default=16,
                        help="frames per clip (default: 16)")
    parser.add_argument("--interval", type=int, default=2,
                        help="frame sampling interval (default: 2)")
    parser.add_argument("--view-mode", choices=("single-center", "four-by-five"),
                        default="single-center", dest="view_mode",
                        help="single training view or 4 clips x 5 crops")
    parser.add_argument("--crop", type=int, default=224,
                        help="square crop size (default: 224)")
    parser.add_argument("--name", default="extracted",
                        help="dataset name recorded in the manifest")
    parser.add_argument("--list-models", action="store_true",
                        dest="list_models", help="print known backbones and exit")
    parser.add_argument("-o", "--out", help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.list_models:
        for name in available_models():
            print(name)
        return 0
    if not (args.videos and args.labels and args.models and args.out):
        parser.print_usage(sys.stderr)
        print("usage error: --videos, --labels, --models and -o are required",
              file=sys.stderr)
        return 1
    config = ExtractConfig(models=[m.strip() for m in args.models.split(",")],
                           frames_per_clip=args.frames,
                           frame_interval=args.interval,
                           view_mode=args.view_mode,
                           crop_size=args.crop,
                           dataset_name=args.name)
    try:
        result = extract(args.videos, args.labels, config, args.out)
    except (ExtractError, VideoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"extracted {len(result.extracted)} videos "
          f"({len(result.failed)} failed) -> {result.manifest_path}")
    if result.skipped_models:
        print(f"skipped backbones: {', '.join(result.skipped_models)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
