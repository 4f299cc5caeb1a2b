"""Write a ready-to-run synthetic demo sequence.

Usage: python -m videoreshape.demo OUT_DIR [frames] [seed]
Produces frames/, flow/, landmarks.jsonl, face.prfm, and a config.json that
the `reshape` CLI can consume directly.
"""
from __future__ import annotations

import json
import os
import sys

from .synthetic import default_scenario, generate, make_face_model, write_scenario


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if not args:
        print(__doc__)
        return 2
    out_dir = args[0]
    n_frames = int(args[1]) if len(args) > 1 else 12
    seed = int(args[2]) if len(args) > 2 else 1
    model = make_face_model()
    scenario = default_scenario(model, n_frames=n_frames, seed=seed,
                                alpha_scale=0.5, beta_amp=(0.04, 0.08))
    seq = generate(scenario)
    paths = write_scenario(scenario, seq, out_dir)
    config = {
        "input": paths["frames"],
        "landmarks": paths["landmarks"],
        "flow": paths["flow"],
        "model": paths["model"],
        "out": os.path.join(out_dir, "out"),
        "delta": 0.5,
    }
    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
    print(f"demo sequence in {out_dir} ({n_frames} frames)")
    print(f"run: reshape --config {config_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
