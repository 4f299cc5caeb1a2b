import numpy as np
import pytest

from videoreshape.camera import RigidPose, default_camera
from videoreshape.energies import (EnergyWeights, PreviousFrame,
                                   contour_correspondences, contour_residuals,
                                   filter_flow_outliers, flow_residuals,
                                   landmark_energy, landmark_residuals,
                                   prior_energy, sample_flow, temporal_residuals)
from videoreshape.errors import GeometryError, SamplingError
from videoreshape.model import FaceModel, assemble
from videoreshape.silhouette import Silhouette


def make_flat_model(n_side: int = 4, z: float = 0.0) -> FaceModel:
    """Flat grid mesh (exact pinhole math stays affine on it)."""
    xs, ys = np.meshgrid(np.linspace(-1, 1, n_side), np.linspace(-1, 1, n_side))
    verts = np.column_stack([xs.ravel(), ys.ravel(), np.full(n_side * n_side, z)])
    tris = []
    for r in range(n_side - 1):
        for c in range(n_side - 1):
            i = r * n_side + c
            tris.append([i, i + 1, i + n_side])
            tris.append([i + 1, i + n_side + 1, i + n_side])
    # boundary vertices in contour order
    order = [c for c in range(n_side)]
    order += [r * n_side + (n_side - 1) for r in range(1, n_side)]
    order += [(n_side - 1) * n_side + c for c in range(n_side - 2, -1, -1)]
    order += [r * n_side for r in range(n_side - 2, 0, -1)]
    landmarks = np.asarray(order, dtype=np.int32)
    n = n_side * n_side
    return FaceModel(
        mean_shape=verts.reshape(-1),
        identity_basis=np.zeros((1, 3 * n)),
        expression_basis=np.zeros((1, 3 * n)),
        triangles=np.asarray(tris, dtype=np.int32),
        landmark_vertices=landmarks,
        contour_flags=np.ones(len(landmarks), dtype=bool),
        reshape_basis=np.zeros(3 * n),
        region_labels=np.full(n, 5, dtype=np.uint8),
        face_length=2.0,
    )


@pytest.fixture(scope="module")
def flat_setup():
    model = make_flat_model()
    cam = default_camera((128, 128))
    pose = RigidPose(r=np.zeros(3), t=np.array([0.0, 0.0, 5.0]))
    return model, cam, pose


# ---------------------------------------------------------------------------
# landmark energy
# ---------------------------------------------------------------------------

def test_landmark_residuals_self_consistent(flat_setup):
    model, cam, pose = flat_setup
    mesh = assemble(model, np.zeros(1), np.zeros(1))
    from videoreshape.model import project
    lm = project(mesh, pose, cam)[model.landmark_vertices]
    r = landmark_residuals(model, np.zeros(1), np.zeros(1), pose, cam, lm)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_landmark_energy_pythagoras(flat_setup):
    model, cam, pose = flat_setup
    from videoreshape.model import project
    mesh = assemble(model, np.zeros(1), np.zeros(1))
    lm = project(mesh, pose, cam)[model.landmark_vertices]
    base = landmark_energy(model, np.zeros(1), np.zeros(1), pose, cam, lm)
    lm2 = lm.copy()
    lm2[3] += (3.0, 4.0)
    bumped = landmark_energy(model, np.zeros(1), np.zeros(1), pose, cam, lm2)
    assert abs((bumped - base) - 25.0) < 1e-9


def test_landmark_residuals_brute_force(toy_model, camera_256):
    rng = np.random.default_rng(21)
    pose = RigidPose(r=rng.normal(scale=0.1, size=3), t=np.array([0.1, -0.2, 6.0]))
    alpha = rng.normal(scale=0.3, size=2)
    beta = rng.normal(scale=0.3, size=1)
    lm = rng.uniform(100, 150, size=(4, 2))
    r = landmark_residuals(toy_model, alpha, beta, pose, camera_256, lm)
    # independent per-point loop
    from videoreshape.camera import rotation_matrix
    R = rotation_matrix(pose.r)
    verts = (toy_model.mean_shape + alpha @ toy_model.identity_basis
             + beta @ toy_model.expression_basis).reshape(-1, 3)
    total = 0.0
    expected = []
    for i, vidx in enumerate(toy_model.landmark_vertices):
        vc = R @ verts[vidx] + pose.t
        px = camera_256.focal * vc[0] / vc[2] + camera_256.principal_point[0]
        py = camera_256.focal * vc[1] / vc[2] + camera_256.principal_point[1]
        expected += [px - lm[i, 0], py - lm[i, 1]]
        total += (px - lm[i, 0]) ** 2 + (py - lm[i, 1]) ** 2
    np.testing.assert_allclose(r, expected, atol=1e-10)
    assert abs(float(r @ r) - total) < 1e-9


# ---------------------------------------------------------------------------
# contour energy
# ---------------------------------------------------------------------------

def _synthetic_vertical_silhouette(model, cam, pose, x_px: float, ys_px):
    """Silhouette along a vertical image line, anchored on the flat mesh."""
    z = pose.t[2]
    pts = np.array([[x_px, y] for y in ys_px], dtype=np.float64)
    # unproject each point onto the z-plane and find barycentric in triangle 0
    tri = model.triangles[0]
    verts = model.mean_shape.reshape(-1, 3)[tri]
    anchors = []
    for p in pts:
        X = np.array([(p[0] - cam.principal_point[0]) * z / cam.focal,
                      (p[1] - cam.principal_point[1]) * z / cam.focal, 0.0])
        A = np.column_stack([verts[1, :2] - verts[0, :2], verts[2, :2] - verts[0, :2]])
        uv = np.linalg.solve(A, X[:2] - verts[0, :2])
        anchors.append([1 - uv.sum(), uv[0], uv[1]])
    return Silhouette(points=pts, anchor_tris=np.zeros(len(pts), dtype=np.int32),
                      anchor_barys=np.asarray(anchors),
                      labels=np.full(len(pts), 5, dtype=np.uint8))


def test_contour_residuals_on_silhouette_zero(flat_setup):
    model, cam, pose = flat_setup
    sil = _synthetic_vertical_silhouette(model, cam, pose, 60.0, np.arange(40, 60))
    landmarks = sil.points[[3, 7, 11]].copy()
    r = contour_residuals(model, np.zeros(1), np.zeros(1), pose, cam, landmarks, sil)
    np.testing.assert_allclose(r, 0.0, atol=1e-9)


def test_contour_residuals_two_px_normal(flat_setup):
    model, cam, pose = flat_setup
    sil = _synthetic_vertical_silhouette(model, cam, pose, 60.0, np.arange(40, 60))
    landmark = sil.points[[10]] + np.array([[2.0, 0.0]])  # off the vertical line
    r = contour_residuals(model, np.zeros(1), np.zeros(1), pose, cam, landmark, sil)
    assert abs(float(r @ r) - 4.0) < 1e-9


def test_contour_residuals_tetrahedron_exhaustive(camera_256):
    verts = np.array([[0.0, 0.0, 0.3], [0.6, 0.0, 0.0],
                      [-0.4, 0.5, 0.0], [-0.2, -0.6, 0.0]])
    n = 4
    model = FaceModel(
        mean_shape=verts.reshape(-1),
        identity_basis=np.zeros((1, 12)),
        expression_basis=np.zeros((1, 12)),
        triangles=np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]], dtype=np.int32),
        landmark_vertices=np.array([0], dtype=np.int32),
        contour_flags=np.array([True]),
        reshape_basis=np.zeros(12),
        region_labels=np.full(n, 5, dtype=np.uint8),
        face_length=1.0,
    )
    pose = RigidPose(r=np.array([0.2, 0.3, 0.0]), t=np.array([0.0, 0.0, 4.0]))
    from videoreshape.silhouette import extract_silhouette
    mesh = assemble(model, np.zeros(1), np.zeros(1))
    sil = extract_silhouette(mesh, pose, camera_256)
    landmark = np.array([[140.0, 120.0]])
    r = contour_residuals(model, np.zeros(1), np.zeros(1), pose, camera_256,
                          landmark, sil)
    # exhaustive nearest-point oracle
    best = np.argmin(((sil.points - landmark[0]) ** 2).sum(axis=1))
    from videoreshape.energies import ProjectionSystem
    sys = ProjectionSystem(model, camera_256, tri_idx=sil.anchor_tris[[best]],
                           barys=sil.anchor_barys[[best]])
    expected = (sys.project(np.zeros(1), np.zeros(1), pose) - landmark).reshape(-1)
    np.testing.assert_allclose(r, expected, atol=1e-12)


def test_contour_empty_silhouette_error():
    with pytest.raises(GeometryError):
        contour_correspondences(np.zeros((0, 2)), np.array([[1.0, 2.0]]))


# ---------------------------------------------------------------------------
# prior energy
# ---------------------------------------------------------------------------

def test_prior_zero():
    assert prior_energy(np.zeros(5), np.zeros(3)) == 0.0


def test_prior_three_four_five():
    alpha = np.array([3.0, 4.0, 0.0, 0.0])
    assert abs(prior_energy(alpha, np.zeros(2), w_prior=0.4) - 2.0) < 1e-12


def test_prior_random_oracle():
    rng = np.random.default_rng(4)
    a = rng.normal(size=6)
    b = rng.normal(size=3)
    expected = 0.4 * (np.sqrt((a ** 2).sum()) + np.sqrt((b ** 2).sum()))
    assert abs(prior_energy(a, b) - expected) < 1e-12


# ---------------------------------------------------------------------------
# temporal energy
# ---------------------------------------------------------------------------

def test_temporal_identical_zero():
    w = EnergyWeights()
    pose = RigidPose(r=np.array([0.1, 0.2, 0.0]), t=np.array([1.0, 2.0, 3.0]))
    beta = np.array([0.5, -0.2])
    r = temporal_residuals(pose, pose.copy(), beta, beta.copy(), w, face_length=2.0)
    np.testing.assert_allclose(r, 0.0, atol=1e-15)


def test_temporal_face_length_translation():
    w = EnergyWeights()
    fl = 2.37
    p0 = RigidPose(r=np.zeros(3), t=np.zeros(3))
    p1 = RigidPose(r=np.zeros(3), t=np.array([fl, 0.0, 0.0]))
    r = temporal_residuals(p1, p0, np.zeros(2), np.zeros(2), w, face_length=fl)
    assert abs(float(r @ r) - fl) < 1e-12


def test_temporal_random_hand_expanded():
    w = EnergyWeights()
    rng = np.random.default_rng(6)
    fl = 1.8
    pa = RigidPose(r=rng.normal(scale=0.3, size=3), t=rng.normal(size=3))
    pb = RigidPose(r=rng.normal(scale=0.3, size=3), t=rng.normal(size=3))
    ba, bb = rng.normal(size=(2, 4))
    r = temporal_residuals(pa, pb, ba, bb, w, face_length=fl)
    expected = (((pa.r - pb.r) ** 2).sum() + (1.0 / fl) * ((pa.t - pb.t) ** 2).sum()
                + 2.0 * ((ba - bb) ** 2).sum())
    assert abs(float(r @ r) - expected) < 1e-12


def test_temporal_no_previous_frame_empty():
    w = EnergyWeights()
    pose = RigidPose(r=np.zeros(3), t=np.zeros(3))
    r = temporal_residuals(pose, None, np.zeros(2), None, w, face_length=1.0)
    assert r.size == 0


# ---------------------------------------------------------------------------
# flow sampling
# ---------------------------------------------------------------------------

def test_sample_flow_constant_field():
    flow = np.full((32, 32, 2), (1.5, -2.5), dtype=np.float32)
    v = sample_flow(flow, np.array([13.2, 7.8]))
    np.testing.assert_allclose(v, [1.5, -2.5], atol=1e-6)


def test_sample_flow_delta_spike_kernel():
    flow = np.zeros((32, 32, 2), dtype=np.float32)
    flow[10, 10] = (2.0, -1.0)
    v = sample_flow(flow, np.array([10.0, 10.0]))
    # hand-computed kernel: taps at integer offsets with dx^2+dy^2 <= 9
    wsum = 0.0
    for dx in range(-3, 4):
        for dy in range(-3, 4):
            d2 = dx * dx + dy * dy
            if d2 <= 9:
                wsum += np.exp(-d2 / (2 * 1.5 ** 2))
    np.testing.assert_allclose(v, np.array([2.0, -1.0]) * (1.0 / wsum), rtol=1e-6)


def test_sample_flow_border_renormalizes():
    flow = np.full((32, 32, 2), (0.7, 0.3), dtype=np.float32)
    v = sample_flow(flow, np.array([0.0, 15.0]))
    np.testing.assert_allclose(v, [0.7, 0.3], atol=1e-6)


def test_sample_flow_outside_error():
    flow = np.zeros((8, 8, 2), dtype=np.float32)
    with pytest.raises(SamplingError):
        sample_flow(flow, np.array([-0.5, 3.0]))


# ---------------------------------------------------------------------------
# flow outlier filter
# ---------------------------------------------------------------------------

def test_filter_all_equal_unchanged():
    samples = [(i, np.array([1.0, 2.0])) for i in range(12)]
    assert len(filter_flow_outliers(samples)) == 12


def test_filter_removes_spike():
    samples = [(i, np.array([1.0, 0.0])) for i in range(12)]
    samples[5] = (5, np.array([25.0, -13.0]))
    kept = filter_flow_outliers(samples)
    assert len(kept) == 11
    assert all(i != 5 for i, _ in kept)


def test_filter_linear_ramp_unchanged():
    samples = [(i, np.array([0.1 * i, -0.05 * i])) for i in range(20)]
    assert len(filter_flow_outliers(samples)) == 20


def test_filter_small_input_unchanged():
    samples = [(0, np.array([9.0, 9.0])), (1, np.array([0.0, 0.0]))]
    assert filter_flow_outliers(samples) == samples


def test_filter_noop_property_within_mad():
    # alternating +-eps deviations: every deviation is within 2x the MAD
    samples = [(i, np.array([1.0 + 0.01 * (-1) ** i, 0.0])) for i in range(16)]
    kept = filter_flow_outliers(samples)
    assert len(kept) >= 8  # never drops more than half


# ---------------------------------------------------------------------------
# flow residuals
# ---------------------------------------------------------------------------

def test_flow_residuals_static_zero(flat_setup):
    model, cam, pose = flat_setup
    flow = np.zeros((128, 128, 2), dtype=np.float32)
    prev = PreviousFrame(pose=pose.copy(), beta=np.zeros(1))
    r = flow_residuals(model, np.zeros(1), np.zeros(1), pose, prev, cam, flow)
    np.testing.assert_allclose(r, 0.0, atol=1e-9)


def test_flow_residuals_translation_matches_constant_flow(flat_setup):
    model, cam, pose = flat_setup
    d = 0.12
    cur = RigidPose(r=np.zeros(3), t=pose.t + np.array([d, 0.0, 0.0]))
    # flat mesh at constant depth: translation gives a uniform flow
    u = cam.focal * d / pose.t[2]
    flow = np.zeros((128, 128, 2), dtype=np.float32)
    flow[:, :, 0] = u
    prev = PreviousFrame(pose=pose, beta=np.zeros(1))
    r = flow_residuals(model, np.zeros(1), np.zeros(1), cur, prev, cam, flow)
    np.testing.assert_allclose(r, 0.0, atol=1e-5)


def test_flow_residuals_corrupted_vertex_excluded(flat_setup):
    model, cam, pose = flat_setup
    from videoreshape.energies import ProjectionSystem
    prev = PreviousFrame(pose=pose, beta=np.zeros(1))
    sys = ProjectionSystem(model, cam, vert_idx=model.contour_landmark_vertices)
    proj = sys.project(np.zeros(1), np.zeros(1), pose)
    flow = np.zeros((128, 128, 2), dtype=np.float32)
    clean = flow_residuals(model, np.zeros(1), np.zeros(1), pose, prev, cam, flow)
    # corrupt the window around one contour vertex
    x, y = int(round(proj[4, 0])), int(round(proj[4, 1]))
    bad = flow.copy()
    bad[y - 3:y + 4, x - 3:x + 4] = (40.0, 40.0)
    filtered = flow_residuals(model, np.zeros(1), np.zeros(1), pose, prev, cam, bad)
    unfiltered = flow_residuals(model, np.zeros(1), np.zeros(1), pose, prev, cam,
                                bad, apply_filter=False)
    assert len(filtered) == len(clean) - 2          # one vertex dropped
    assert np.abs(filtered).max() < 1e-6            # others unchanged
    assert np.abs(unfiltered).max() > 10.0          # corruption visible unfiltered
