import numpy as np

from videoreshape.energies import sample_flow
from videoreshape.fileio import read_flo, read_landmarks_jsonl
from videoreshape.model import load_model, project
from videoreshape.synthetic import (default_scenario, generate, make_face_model,
                                    write_scenario)


def test_generate_deterministic(face_model):
    sc = default_scenario(face_model, n_frames=3, seed=5, landmark_jitter_px=0.7)
    a = generate(sc)
    b = generate(sc)
    for t in range(3):
        assert np.array_equal(a.landmarks[t], b.landmarks[t])
        assert np.array_equal(a.frames[t], b.frames[t])
    assert np.array_equal(a.flows[1], b.flows[1])


def test_landmarks_are_exact_projections(face_model):
    sc = default_scenario(face_model, n_frames=2, seed=3)
    seq = generate(sc)
    for t in range(2):
        expected = project(sc.mesh(t), sc.poses[t], sc.camera)[
            face_model.landmark_vertices]
        assert np.array_equal(seq.landmarks[t], expected)


def test_static_pose_zero_flow_inside_mask(face_model):
    sc = default_scenario(face_model, n_frames=3, seed=2, yaw_deg=0, pitch_deg=0)
    for p in sc.poses:
        p.r[:] = sc.poses[0].r
        p.t[:] = sc.poses[0].t
    sc.betas[:] = sc.betas[0]
    seq = generate(sc)
    for t in (1, 2):
        inside = seq.flows[t][seq.masks[t - 1]]
        assert np.abs(inside).max() < 1e-4


def test_flow_consistency_composes_landmarks(face_model):
    sc = default_scenario(face_model, n_frames=4, seed=1, alpha_scale=0.5,
                          beta_amp=(0.04, 0.08))
    seq = generate(sc)
    for t in range(1, 4):
        prev = seq.landmarks_clean[t - 1]
        cur = seq.landmarks_clean[t]
        err = []
        for i in range(len(prev)):
            if not seq.masks[t - 1][int(round(prev[i, 1])), int(round(prev[i, 0]))]:
                continue
            motion = sample_flow(seq.flows[t], prev[i])
            err.append(np.linalg.norm(prev[i] + motion - cur[i]))
        assert np.median(err) < 0.5


def test_jitter_std_calibrated(face_model):
    sc = default_scenario(face_model, n_frames=10, seed=8, landmark_jitter_px=1.0)
    seq = generate(sc)
    devs = np.concatenate([
        (seq.landmarks[t] - seq.landmarks_clean[t]).ravel() for t in range(10)])
    assert devs.size >= 1000
    assert 0.8 <= devs.std() <= 1.2


def test_flow_corruption_patch_applied(face_model):
    from videoreshape.synthetic import FlowCorruption
    sc = default_scenario(face_model, n_frames=3, seed=0)
    sc.corruptions.append(FlowCorruption(frame=1, box=(10, 10, 30, 30),
                                         offset=(9.0, -9.0)))
    seq = generate(sc)
    assert np.allclose(seq.flows[1][15, 15], [9.0, -9.0])


def test_write_scenario_round_trips_through_parsers(face_model, tmp_path):
    sc = default_scenario(face_model, n_frames=3, seed=4)
    seq = generate(sc)
    paths = write_scenario(sc, seq, str(tmp_path))
    model = load_model(paths["model"])
    assert model.m_s == 63 and model.m_e == 6
    lms = read_landmarks_jsonl(paths["landmarks"], expected_count=68)
    for t in range(3):
        np.testing.assert_allclose(lms[t], seq.landmarks[t], atol=1e-12)
    import os
    flow = read_flo(os.path.join(paths["flow"], "flow_000001.flo"))
    assert np.array_equal(flow, seq.flows[1])
    import cv2
    img = cv2.imread(os.path.join(paths["frames"], "frame_000000.png"),
                     cv2.IMREAD_COLOR)
    assert np.array_equal(img, seq.frames[0])


def test_reference_model_invariants():
    model = make_face_model()
    assert model.m_s == 63
    assert model.m_e == 6
    assert model.contour_flags.sum() == 17
    assert model.face_length > 0
    # contour landmarks are ordered along the jaw (monotone angle sweep)
    verts = model.mean_shape.reshape(-1, 3)
    jaw = verts[model.contour_landmark_vertices]
    ang = np.unwrap(np.arctan2(jaw[:, 1], jaw[:, 0]))
    assert (np.diff(ang) < 0).all() or (np.diff(ang) > 0).all()
