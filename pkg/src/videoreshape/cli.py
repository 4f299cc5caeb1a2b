"""Command-line entry point.

Exit codes: 0 success, 1 configuration/input error, 2 tracking error,
3 warp error.
"""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, MappingError, TrackingError, WarpError
from .pipeline import parse_config, run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TRACKING = 2
EXIT_WARP = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="reshape",
        description="Reshape the portrait in a frame sequence by a scalar "
                    "weight-change parameter.")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--delta", type=float, help="reshape parameter (0 = no change)")
    p.add_argument("--input", help="directory of input PNG frames")
    p.add_argument("--model", help="face model file (.prfm)")
    p.add_argument("--landmarks", help="landmark JSONL file")
    p.add_argument("--flow", help="directory of flow_%%06d.flo files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid-size", type=int, dest="grid_size",
                   help="warp lattice size (rows and cols)")
    p.add_argument("--focal", type=float, help="camera focal length override (px)")
    p.add_argument("--threads", type=int, help="worker threads for the warp stage")
    p.add_argument("--k-frames", type=int, dest="k_frames",
                   help="identity bundle window size (max 10)")
    p.add_argument("--sparse-mode", action="store_true", default=None,
                   help="sparse-control baseline warping")
    p.add_argument("--repose-after-identity", action="store_true", default=None,
                   help="re-run the pose phase with the fitted identity")
    p.add_argument("--no-flow-filter", action="store_true", default=None,
                   help="disable flow outlier rejection")
    p.add_argument("--mls-affine", action="store_true", default=None,
                   help="affine MLS instead of similarity")
    p.add_argument("--dump-contours", action="store_true", default=None)
    p.add_argument("--dump-grids", action="store_true", default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "delta": args.delta,
        "input": args.input,
        "model": args.model,
        "landmarks": args.landmarks,
        "flow": args.flow,
        "out": args.out,
        "focal": args.focal,
        "threads": args.threads,
        "k_frames": args.k_frames,
        "sparse_mode": args.sparse_mode,
        "repose_after_identity": args.repose_after_identity,
        "mls_affine": args.mls_affine,
        "dump_contours": args.dump_contours,
        "dump_grids": args.dump_grids,
    }
    if args.grid_size is not None:
        overrides["grid_rows"] = args.grid_size
        overrides["grid_cols"] = args.grid_size
    if args.no_flow_filter:
        overrides["flow_filter"] = False

    try:
        cfg = parse_config(args.config, overrides)
        result = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrackingError as exc:
        print(f"tracking error: {exc}", file=sys.stderr)
        return EXIT_TRACKING
    except (WarpError, MappingError) as exc:
        print(f"warp error: {exc}", file=sys.stderr)
        return EXIT_WARP
    for stage, seconds in result.timings.items():
        print(f"{stage}: {seconds:.2f}s")
    print(f"wrote {len(result.frame_paths)} frames to {result.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
