"""Configuration, orchestration, and file I/O for the full reshaping run."""
from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, default_camera
from .densemap import dense_mapping
from .energies import EnergyWeights, PhaseWeights, PoseWeights
from .errors import ConfigError, ReshapeError, TrackingError, WarpError
from .fileio import flow_filename, read_flo, read_landmarks_jsonl
from .imagewarp import warp_image
from .mls import mls_deform
from .model import FaceModel, assemble, load_model, reshape
from .silhouette import extract_silhouette
from .tracking import FrameObservation, TrackOptions, TrackResult, track
from .warpgrid import (Region, W_DISTORTION, W_LINE_BENDING, W_REGULARIZATION,
                       W_SIMILARITY, make_grid, mls_targets, optimize_grid,
                       optimize_grid_sparse_mode, region_from_points,
                       select_control_points)

SPARSE_CONTROL_STRIDE = 4

_WEIGHT_KEYS = (
    "sigma_align", "w_prior", "sigma_temp", "gamma",
    "pose_lambda_land", "pose_lambda_temp", "pose_lambda_optic",
    "identity_lambda_align", "identity_lambda_optic", "identity_lambda_temp",
    "expression_lambda_align", "expression_lambda_optic", "expression_lambda_temp",
)


@dataclass
class PipelineConfig:
    input: str = ""
    landmarks: str = ""
    flow: str = ""
    model: str = ""
    out: str = ""
    delta: float = 0.0
    grid_rows: int = 100
    grid_cols: int = 100
    focal: float | None = None
    threads: int = 1
    k_frames: int = 10
    sparse_mode: bool = False
    repose_after_identity: bool = False
    flow_filter: bool = True
    mls_affine: bool = False
    dump_contours: bool = False
    dump_grids: bool = False
    w_l: float = W_LINE_BENDING
    w_r: float = W_REGULARIZATION
    w_d: float = W_DISTORTION
    w_s: float = W_SIMILARITY
    sigma_align: float = 0.5
    w_prior: float = 0.4
    sigma_temp: float = 2.0
    gamma: float | None = None
    pose_lambda_land: float = 0.6
    pose_lambda_temp: float = 0.9
    pose_lambda_optic: float = 0.5
    identity_lambda_align: float = 0.7
    identity_lambda_optic: float = 0.1
    identity_lambda_temp: float = 0.2
    expression_lambda_align: float = 0.9
    expression_lambda_optic: float = 0.5
    expression_lambda_temp: float = 0.5

    def energy_weights(self) -> EnergyWeights:
        return EnergyWeights(
            sigma_align=self.sigma_align, w_prior=self.w_prior,
            sigma_temp=self.sigma_temp, gamma=self.gamma,
            pose=PoseWeights(land=self.pose_lambda_land, temp=self.pose_lambda_temp,
                             optic=self.pose_lambda_optic),
            identity=PhaseWeights(align=self.identity_lambda_align,
                                  optic=self.identity_lambda_optic,
                                  temp=self.identity_lambda_temp),
            expression=PhaseWeights(align=self.expression_lambda_align,
                                    optic=self.expression_lambda_optic,
                                    temp=self.expression_lambda_temp))

    def track_options(self) -> TrackOptions:
        return TrackOptions(k_max=self.k_frames,
                            repose_after_identity=self.repose_after_identity,
                            flow_filter=self.flow_filter)

    def validate(self) -> None:
        if not np.isfinite(self.delta):
            raise ConfigError("delta must be finite")
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise ConfigError("grid size must be at least 2x2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.k_frames < 1:
            raise ConfigError("k_frames must be >= 1")
        if self.focal is not None and self.focal <= 0:
            raise ConfigError("focal must be positive")


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


def parse_config(config_path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Flat JSON config file; CLI overrides win. Unknown keys are rejected."""
    values: dict = {}
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(data) - _CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(data)
    if overrides:
        unknown = sorted(set(overrides) - _CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


@dataclass
class RunResult:
    out_dir: str
    frame_paths: list[str]
    track: TrackResult
    timings: dict[str, float] = field(default_factory=dict)
    warp_diagnostics: list[dict] = field(default_factory=list)


def _load_inputs(cfg: PipelineConfig):
    import cv2

    for name, path in (("model", cfg.model), ("input", cfg.input),
                       ("landmarks", cfg.landmarks)):
        if not path:
            raise ConfigError(f"missing required option: {name}")
        if not os.path.exists(path):
            raise ConfigError(f"{name} path does not exist: {path}")
    try:
        model = load_model(cfg.model)
    except ReshapeError as exc:
        raise ConfigError(f"cannot load model {cfg.model}: {exc}") from exc

    frame_files = sorted(f for f in os.listdir(cfg.input) if f.lower().endswith(".png"))
    if not frame_files:
        raise ConfigError(f"no PNG frames in {cfg.input}")
    frames = []
    for f in frame_files:
        img = cv2.imread(os.path.join(cfg.input, f), cv2.IMREAD_COLOR)
        if img is None:
            raise ConfigError(f"cannot read frame {f}")
        frames.append(img)
    h, w = frames[0].shape[:2]
    for f, img in zip(frame_files, frames):
        if img.shape[:2] != (h, w):
            raise ConfigError(f"frame {f} has size {img.shape[1]}x{img.shape[0]}, "
                              f"expected {w}x{h}")

    lms = read_landmarks_jsonl(cfg.landmarks, expected_count=model.n_landmarks)
    n = len(frames)
    observations = []
    for t in range(n):
        if t not in lms:
            raise ConfigError(f"{cfg.landmarks}: no landmarks for frame {t}")
        if lms[t] is None:
            raise ConfigError(f"{cfg.landmarks}: frame {t} has no detected face "
                              "(points is null)")
        flow = None
        if t > 0:
            if not cfg.flow:
                raise ConfigError("missing required option: flow")
            fpath = os.path.join(cfg.flow, flow_filename(t))
            if not os.path.exists(fpath):
                raise ConfigError(f"missing flow file {flow_filename(t)} in {cfg.flow}")
            flow = read_flo(fpath)
            if flow.shape[:2] != (h, w):
                raise ConfigError(f"{flow_filename(t)}: flow size mismatch")
        observations.append(FrameObservation(index=t, landmarks=lms[t], flow=flow))
    cam = default_camera((w, h), focal=cfg.focal)
    return model, frames, observations, cam


def _sparse_constraints(controls, mapping, grid):
    """Sparse baseline: a strided subset of the contour controls, each moved by
    its nearest contour pixel's mapping displacement."""
    src, dst = mapping.valid_pairs()
    if len(src) < 1:
        raise WarpError("dense mapping has no valid pairs")
    from .warpgrid import ControlConstraint

    sparse = controls[::SPARSE_CONTROL_STRIDE] or controls[:1]
    constraints = []
    for (r, c) in sparse:
        rest = grid.rest[r, c]
        j = int(np.argmin(((src - rest) ** 2).sum(axis=1)))
        constraints.append(ControlConstraint(index=(r, c),
                                             target=rest + (dst[j] - src[j])))
    return constraints


def warp_frame(model: FaceModel, cfg: PipelineConfig, cam: Camera,
               alpha: np.ndarray, beta: np.ndarray, pose, image: np.ndarray,
               ) -> tuple[np.ndarray, dict]:
    """Reshape one frame: dense contour mapping -> MLS -> grid solve -> warp."""
    orig = assemble(model, alpha, beta)
    reshaped = reshape(model, alpha, beta, cfg.delta)
    sil_orig = extract_silhouette(orig, pose, cam)
    sil_resh = extract_silhouette(reshaped, pose, cam)
    mapping = dense_mapping(orig, reshaped, pose, cam,
                            sil_orig=sil_orig, sil_reshaped=sil_resh)

    grid = make_grid(cfg.grid_rows, cfg.grid_cols, cam.image_size)
    allpts = np.vstack([sil_orig.points, sil_resh.points])
    region = region_from_points(grid, allpts)
    controls = select_control_points(grid, sil_orig.points)
    variant = "affine" if cfg.mls_affine else "similarity"

    diag: dict = {"valid_pairs": int(mapping.valid.sum()),
                  "total_pairs": len(mapping.valid)}
    if cfg.sparse_mode:
        constraints = _sparse_constraints(controls, mapping, grid)
        optimized, info = optimize_grid_sparse_mode(grid, constraints, region,
                                                    w_l=cfg.w_l, w_r=cfg.w_r,
                                                    w_d=cfg.w_d, w_s=cfg.w_s)
        diag["energy_step1"] = info["energy_step1"]
        diag["energy_step2"] = info["energy_step2"]
        mls_grid = grid
    else:
        constraints = mls_targets(controls, mapping, grid, variant=variant)
        src, dst = mapping.valid_pairs()
        mls_grid = grid.copy()
        sub = (slice(region.r0, region.r1 + 1), slice(region.c0, region.c1 + 1))
        rest_region = mls_grid.rest[sub].reshape(-1, 2)
        mls_grid.positions[sub] = mls_deform(src, dst, rest_region,
                                             variant=variant).reshape(*mls_grid.rest[sub].shape)
        optimized, info = optimize_grid(mls_grid, constraints, region,
                                        w_l=cfg.w_l, w_r=cfg.w_r)
        diag["energy_mls_init"] = info.energy_initial
        diag["energy_final"] = info.energy_final
    out = warp_image(image, optimized)
    diag["mapping"] = mapping
    diag["region"] = region
    diag["grids"] = {"rest": grid.rest, "mls": mls_grid.positions,
                     "optimized": optimized.positions}
    diag["silhouettes"] = (sil_orig, sil_resh)
    diag["optimized_grid"] = optimized
    return out, diag


def run(cfg: PipelineConfig) -> RunResult:
    """Execute the full pipeline; raises ConfigError / TrackingError / WarpError."""
    import cv2

    cfg.validate()
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    model, frames, observations, cam = _load_inputs(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = track(model, observations, cam, weights=cfg.energy_weights(),
                   options=cfg.track_options())
    timings["tracking"] = time.perf_counter() - t0

    track_path = os.path.join(cfg.out, "track.json")
    with open(track_path, "w", encoding="utf-8") as fh:
        json.dump({
            "alpha": result.alpha.tolist(),
            "frames": [{
                "index": i,
                "rotation": result.poses[i].r.tolist(),
                "translation": result.poses[i].t.tolist(),
                "expression": result.betas[i].tolist(),
            } for i in range(len(frames))],
        }, fh, indent=2)

    t0 = time.perf_counter()

    def process(i: int):
        try:
            return warp_frame(model, cfg, cam, result.alpha, result.betas[i],
                              result.poses[i], frames[i])
        except ReshapeError as exc:
            raise WarpError(f"frame {i}: {exc}") from exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(process, range(len(frames))))
    else:
        outputs = [process(i) for i in range(len(frames))]
    timings["reshape"] = time.perf_counter() - t0

    frame_paths = []
    diags = []
    for i, (img, diag) in enumerate(outputs):
        path = os.path.join(cfg.out, f"out_{i:06d}.png")
        cv2.imwrite(path, img)
        frame_paths.append(path)
        if cfg.dump_contours:
            mapping = diag["mapping"]
            with open(os.path.join(cfg.out, f"contours_{i:06d}.json"), "w") as fh:
                json.dump({"frame": i,
                           "silhouette": mapping.source.tolist(),
                           "targets": mapping.target.tolist(),
                           "valid": mapping.valid.astype(int).tolist()}, fh)
        if cfg.dump_grids:
            grids = diag["grids"]
            with open(os.path.join(cfg.out, f"grids_{i:06d}.json"), "w") as fh:
                json.dump({k: np.asarray(v).tolist() for k, v in grids.items()}, fh)
        diags.append(diag)
    return RunResult(out_dir=cfg.out, frame_paths=frame_paths, track=result,
                     timings=timings, warp_diagnostics=diags)
