import json
import os

import numpy as np
import pytest

from videoreshape.cli import main as cli_main
from videoreshape.errors import ConfigError
from videoreshape.pipeline import PipelineConfig, parse_config, run
from videoreshape.synthetic import default_scenario, generate, make_face_model, write_scenario


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenario")
    model = make_face_model()
    sc = default_scenario(model, n_frames=5, seed=2, alpha_scale=0.5,
                          beta_amp=(0.04, 0.08), image_size=(160, 160))
    seq = generate(sc)
    paths = write_scenario(sc, seq, str(root))
    return root, paths, sc, seq


def base_config(paths, out_dir, **kw):
    cfg = dict(input=paths["frames"], landmarks=paths["landmarks"],
               flow=paths["flow"], model=paths["model"], out=str(out_dir),
               grid_rows=50, grid_cols=50, delta=0.0)
    cfg.update(kw)
    return PipelineConfig(**cfg)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_parse_config_cli_overrides_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"delta": 0.3, "threads": 2}))
    cfg = parse_config(str(path), {"delta": -0.2})
    assert cfg.delta == -0.2
    assert cfg.threads == 2


def test_parse_config_unknown_key_listed(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"delta": 0.3, "wibble": 1}))
    with pytest.raises(ConfigError, match="wibble"):
        parse_config(str(path))


def test_parse_config_grid_size_zero_rejected():
    with pytest.raises(ConfigError, match="grid"):
        parse_config(None, {"grid_rows": 0, "grid_cols": 0})


def test_parse_config_bad_focal_rejected():
    with pytest.raises(ConfigError, match="focal"):
        parse_config(None, {"focal": -10.0})


def test_default_weights_match_reference_constants():
    cfg = PipelineConfig()
    w = cfg.energy_weights()
    assert w.sigma_align == 0.5
    assert w.w_prior == 0.4
    assert w.sigma_temp == 2.0
    assert (w.pose.land, w.pose.temp, w.pose.optic) == (0.6, 0.9, 0.5)
    assert (w.identity.align, w.identity.optic, w.identity.temp) == (0.7, 0.1, 0.2)
    assert (w.expression.align, w.expression.optic, w.expression.temp) == (0.9, 0.5, 0.5)
    assert (cfg.w_l, cfg.w_r) == (1.0, 0.8)
    assert (cfg.grid_rows, cfg.grid_cols) == (100, 100)
    assert cfg.k_frames == 10


# ---------------------------------------------------------------------------
# end-to-end runs
# ---------------------------------------------------------------------------

def test_delta_zero_outputs_bit_identical(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    cfg = base_config(paths, tmp_path / "out", delta=0.0)
    result = run(cfg)
    import cv2
    for t, out_path in enumerate(result.frame_paths):
        out_img = cv2.imread(out_path, cv2.IMREAD_COLOR)
        src_img = cv2.imread(os.path.join(paths["frames"], f"frame_{t:06d}.png"),
                             cv2.IMREAD_COLOR)
        assert np.array_equal(out_img, src_img)


def test_run_writes_track_json_with_shared_alpha(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    cfg = base_config(paths, tmp_path / "out", delta=0.25)
    result = run(cfg)
    with open(os.path.join(result.out_dir, "track.json")) as fh:
        data = json.load(fh)
    assert len(data["alpha"]) == 63
    assert len(data["frames"]) == 5
    for fr in data["frames"]:
        assert "alpha" not in fr
        assert len(fr["expression"]) == 6
        assert len(fr["rotation"]) == 3


def test_rerun_bit_identical(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    run(base_config(paths, out_a, delta=0.4))
    run(base_config(paths, out_b, delta=0.4))
    for t in range(5):
        pa = (out_a / f"out_{t:06d}.png").read_bytes()
        pb = (out_b / f"out_{t:06d}.png").read_bytes()
        assert pa == pb
    assert (out_a / "track.json").read_text() == (out_b / "track.json").read_text()


def test_dump_flags_write_debug_files(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    cfg = base_config(paths, tmp_path / "out", delta=0.3,
                      dump_contours=True, dump_grids=True)
    result = run(cfg)
    with open(os.path.join(result.out_dir, "contours_000000.json")) as fh:
        contours = json.load(fh)
    assert {"frame", "silhouette", "targets", "valid"} <= set(contours)
    with open(os.path.join(result.out_dir, "grids_000000.json")) as fh:
        grids = json.load(fh)
    assert {"rest", "mls", "optimized"} <= set(grids)


def test_missing_flow_file_named(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    missing = os.path.join(paths["flow"], "flow_000003.flo")
    renamed = missing + ".bak"
    os.rename(missing, renamed)
    try:
        with pytest.raises(ConfigError, match="flow_000003.flo"):
            run(base_config(paths, tmp_path / "out"))
    finally:
        os.rename(renamed, missing)


def test_null_landmarks_rejected(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    lm_path = paths["landmarks"]
    original = open(lm_path).read()
    lines = original.splitlines()
    obj = json.loads(lines[2])
    obj["points"] = None
    lines[2] = json.dumps(obj)
    try:
        with open(lm_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with pytest.raises(ConfigError, match="no detected face"):
            run(base_config(paths, tmp_path / "out"))
    finally:
        with open(lm_path, "w") as fh:
            fh.write(original)


def test_threads_match_single_thread_results(scenario_dir, tmp_path):
    root, paths, sc, seq = scenario_dir
    out_a = tmp_path / "st"
    out_b = tmp_path / "mt"
    run(base_config(paths, out_a, delta=0.3, threads=1))
    run(base_config(paths, out_b, delta=0.3, threads=3))
    for t in range(5):
        pa = (out_a / f"out_{t:06d}.png").read_bytes()
        pb = (out_b / f"out_{t:06d}.png").read_bytes()
        assert pa == pb


# ---------------------------------------------------------------------------
# CLI exit codes
# ---------------------------------------------------------------------------

def test_cli_success_exit_zero(scenario_dir, tmp_path, capsys):
    root, paths, sc, seq = scenario_dir
    code = cli_main(["--input", paths["frames"], "--landmarks", paths["landmarks"],
                     "--flow", paths["flow"], "--model", paths["model"],
                     "--out", str(tmp_path / "out"), "--delta", "0",
                     "--grid-size", "50"])
    assert code == 0
    out = capsys.readouterr().out
    assert "tracking" in out


def test_cli_config_error_exit_one(tmp_path, capsys):
    code = cli_main(["--input", str(tmp_path / "nope"), "--landmarks", "x",
                     "--flow", "y", "--model", "z", "--out", str(tmp_path / "o")])
    assert code == 1


def test_cli_tracking_error_exit_two(scenario_dir, tmp_path, capsys):
    root, paths, sc, seq = scenario_dir
    lm_path = paths["landmarks"]
    original = open(lm_path).read()
    lines = original.splitlines()
    obj = json.loads(lines[1])
    obj["points"][4] = [float("nan"), float("nan")]
    lines[1] = json.dumps(obj)
    bad_lm = str(root / "bad_landmarks.jsonl")
    with open(bad_lm, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    code = cli_main(["--input", paths["frames"], "--landmarks", bad_lm,
                     "--flow", paths["flow"], "--model", paths["model"],
                     "--out", str(tmp_path / "out"), "--delta", "0",
                     "--grid-size", "50"])
    assert code == 2


def test_cli_warp_error_exit_three(scenario_dir, tmp_path, capsys):
    root, paths, sc, seq = scenario_dir
    code = cli_main(["--input", paths["frames"], "--landmarks", paths["landmarks"],
                     "--flow", paths["flow"], "--model", paths["model"],
                     "--out", str(tmp_path / "out"), "--delta", "-60",
                     "--grid-size", "50"])
    assert code == 3
