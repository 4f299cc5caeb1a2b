#!/usr/bin/env python3
"""Generate ingest test fixtures from the core package's synthetic oracle.

Writes, under ingest/test/fixtures/:
  video/               numbered PNG frames (frame-directory "video")
  detections.jsonl     simulated detector output: 68 points per frame in a
                       shuffled detector ordering, hundredth-pixel quantized;
                       one frame reported as undetected (points: null)
  truth_landmarks.jsonl  ground-truth landmarks in model order
  flow/                ground-truth .flo files for consecutive transitions
  remap.json           detector index -> model landmark slot table
"""
import json
import os
import sys

import numpy as np

from videoreshape.fileio import write_landmarks_jsonl
from videoreshape.synthetic import default_scenario, generate, make_face_model, write_scenario

N_FRAMES = 6
NULL_FRAME = 4


def main(out_dir: str) -> None:
    model = make_face_model()
    sc = default_scenario(model, n_frames=N_FRAMES, seed=11, alpha_scale=0.5,
                          beta_amp=(0.04, 0.08), yaw_deg=3.0, pitch_deg=2.0,
                          image_size=(192, 192))
    seq = generate(sc)
    paths = write_scenario(sc, seq, out_dir)
    os.rename(paths["frames"], os.path.join(out_dir, "video"))

    write_landmarks_jsonl(os.path.join(out_dir, "truth_landmarks.jsonl"),
                          {t: seq.landmarks[t] for t in range(N_FRAMES)})

    rng = np.random.default_rng(99)
    detector_order = rng.permutation(model.n_landmarks)
    # remap[detector_idx] = model slot such that detector point j is model
    # landmark detector_order[j]
    remap = detector_order.tolist()
    with open(os.path.join(out_dir, "remap.json"), "w") as fh:
        json.dump(remap, fh)

    detections = {}
    for t in range(N_FRAMES):
        if t == NULL_FRAME:
            detections[t] = None
            continue
        pts = seq.landmarks[t][detector_order]
        detections[t] = np.round(pts, 2)  # detector reports hundredth pixels
    write_landmarks_jsonl(os.path.join(out_dir, "detections.jsonl"), detections)
    print(f"fixtures written to {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else
         os.path.join(os.path.dirname(__file__), "..", "test", "fixtures"))
