"""Readers/writers for the pipeline's on-disk formats: Middlebury .flo flow
files and one-JSON-object-per-line landmark files."""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError

FLO_MAGIC = 202021.25


def read_flo(path) -> np.ndarray:
    """Middlebury .flo -> (h, w, 2) float32 array of (u, v) motion vectors."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise ConfigError(f"{path}: truncated .flo header")
    magic, = struct.unpack("<f", raw[:4])
    if magic != FLO_MAGIC:
        raise ConfigError(f"{path}: bad .flo magic {magic!r}")
    w, h = struct.unpack("<2i", raw[4:12])
    if w <= 0 or h <= 0:
        raise ConfigError(f"{path}: bad .flo dimensions {w}x{h}")
    expected = 12 + 4 * 2 * w * h
    if len(raw) != expected:
        raise ConfigError(f"{path}: .flo payload is {len(raw)} bytes, expected {expected}")
    flow = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w, 2)
    return flow.copy()


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must have shape (h, w, 2)")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<2i", w, h))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_landmarks_jsonl(path, expected_count: int | None = None) -> dict[int, np.ndarray | None]:
    """Landmark file: one {"frame": int, "points": [[x, y], ...]} per line.

    A null points entry marks a frame with no detected face. Returns
    frame index -> (NL, 2) float array or None.
    """
    out: dict[int, np.ndarray | None] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if "frame" not in obj or "points" not in obj:
                raise ConfigError(f"{path}:{lineno}: missing 'frame' or 'points'")
            frame = int(obj["frame"])
            if obj["points"] is None:
                out[frame] = None
                continue
            pts = np.asarray(obj["points"], dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 2:
                raise ConfigError(f"{path}:{lineno}: points must be a list of [x, y]")
            if expected_count is not None and len(pts) != expected_count:
                raise ConfigError(
                    f"{path}:{lineno}: frame {frame} has {len(pts)} landmarks, "
                    f"expected {expected_count}")
            out[frame] = pts
    return out


def write_landmarks_jsonl(path, per_frame: dict[int, np.ndarray | None]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in sorted(per_frame):
            pts = per_frame[frame]
            points = None if pts is None else np.asarray(pts, dtype=float).tolist()
            fh.write(json.dumps({"frame": int(frame), "points": points}) + "\n")


def flow_filename(frame_index: int) -> str:
    """Flow file for the transition (frame_index - 1) -> frame_index."""
    return f"flow_{frame_index:06d}.flo"


def frame_filename(frame_index: int, prefix: str = "frame") -> str:
    return f"{prefix}_{frame_index:06d}.png"
