import numpy as np
import pytest

from videoreshape.camera import RigidPose, default_camera
from videoreshape.errors import GeometryError
from videoreshape.model import FaceModel, assemble, project
from videoreshape.silhouette import extract_silhouette, rasterize_mesh, trace_boundary


def test_frontal_bbox_matches_projection(face_model, frontal_pose, camera_256):
    mesh = assemble(face_model, np.zeros(63), np.zeros(6))
    proj = project(mesh, frontal_pose, camera_256)
    pb_lo, pb_hi = proj.min(axis=0), proj.max(axis=0)
    sil = extract_silhouette(mesh, frontal_pose, camera_256, supersample=2)
    sb_lo, sb_hi = sil.points.min(axis=0), sil.points.max(axis=0)
    assert np.abs(sb_lo - pb_lo).max() <= 1.0
    assert np.abs(sb_hi - pb_hi).max() <= 1.0
    # native-resolution tracing adds at most half a pixel of quantization
    sil1 = extract_silhouette(mesh, frontal_pose, camera_256)
    s1_lo, s1_hi = sil1.points.min(axis=0), sil1.points.max(axis=0)
    assert np.abs(s1_lo - pb_lo).max() <= 1.6
    assert np.abs(s1_hi - pb_hi).max() <= 1.6


def test_single_triangle_outline(camera_256):
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    model = FaceModel(
        mean_shape=verts.reshape(-1),
        identity_basis=np.zeros((1, 9)),
        expression_basis=np.zeros((1, 9)),
        triangles=np.array([[0, 1, 2]], dtype=np.int32),
        landmark_vertices=np.array([0], dtype=np.int32),
        contour_flags=np.array([True]),
        reshape_basis=np.zeros(9),
        region_labels=np.full(3, 5, dtype=np.uint8),
        face_length=1.0,
    )
    pose = RigidPose(r=np.zeros(3), t=np.array([-0.3, -0.3, 4.0]))
    mesh = assemble(model, np.zeros(1), np.zeros(1))
    sil = extract_silhouette(mesh, pose, camera_256)
    # every silhouette point lies on the rasterized triangle's edge band
    proj = project(mesh, pose, camera_256)
    from videoreshape.sdf import polyline_distance
    d, _, _ = polyline_distance(sil.points, proj, closed=True)
    assert d.max() <= 1.0
    assert (sil.anchor_tris == 0).all()


def test_yaw_continuity(face_model, camera_256):
    mesh = assemble(face_model, np.zeros(63), np.zeros(6))
    t = np.array([0.0, 0.0, 5.0])
    sils = {}
    for deg in (29.0, 30.0):
        pose = RigidPose(r=np.array([0.0, np.radians(deg), 0.0]), t=t)
        sils[deg] = extract_silhouette(mesh, pose, camera_256)
    from videoreshape.sdf import polyline_distance
    d1, _, _ = polyline_distance(sils[29.0].points, sils[30.0].points)
    d2, _, _ = polyline_distance(sils[30.0].points, sils[29.0].points)
    hausdorff = max(d1.max(), d2.max())
    assert hausdorff < 3.0


def test_silhouette_closed_and_anchored(face_model, frontal_pose, camera_256):
    mesh = assemble(face_model, np.zeros(63), np.zeros(6))
    sil = extract_silhouette(mesh, frontal_pose, camera_256)
    closed = sil.closed_points
    assert np.array_equal(closed[0], closed[-1])
    assert (sil.anchor_tris >= 0).all()
    np.testing.assert_allclose(sil.anchor_barys.sum(axis=1), 1.0, atol=1e-9)
    assert (sil.anchor_barys > -1e-6).all()
    # anchors project back onto their silhouette points
    from videoreshape.energies import ProjectionSystem
    sys = ProjectionSystem(face_model, camera_256, tri_idx=sil.anchor_tris,
                           barys=sil.anchor_barys)
    proj = sys.project(np.zeros(63), np.zeros(6), frontal_pose)
    assert np.linalg.norm(proj - sil.points, axis=1).max() < 1.0


def test_supersampled_extraction_reduces_quantization(face_model, frontal_pose, camera_256):
    mesh = assemble(face_model, np.zeros(63), np.zeros(6))
    s1 = extract_silhouette(mesh, frontal_pose, camera_256)
    s2 = extract_silhouette(mesh, frontal_pose, camera_256, supersample=2)
    assert len(s2) > len(s1)
    # points stay in original pixel coordinates
    assert np.abs(s2.points.mean(axis=0) - s1.points.mean(axis=0)).max() < 2.0


def test_extraction_at_explicit_resolution(face_model, frontal_pose, camera_256):
    # a coarser target raster yields coordinates in that raster's pixels
    mesh = assemble(face_model, np.zeros(63), np.zeros(6))
    s1 = extract_silhouette(mesh, frontal_pose, camera_256)
    s2 = extract_silhouette(mesh, frontal_pose, camera_256, resolution=(128, 128))
    ratio = (s2.points.max(axis=0) - s2.points.min(axis=0)) \
        / (s1.points.max(axis=0) - s1.points.min(axis=0))
    assert np.abs(ratio - 0.5).max() < 0.05


def test_empty_mask_error():
    with pytest.raises(GeometryError):
        trace_boundary(np.zeros((8, 8), dtype=bool))


def test_trace_boundary_square():
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:6, 3:8] = True
    pts = trace_boundary(mask)
    # all boundary pixels of the rectangle, ordered and unique
    assert len(pts) == len(np.unique(pts, axis=0))
    assert len(pts) == 2 * 4 + 2 * 5 - 4
    assert pts[:, 0].min() == 3 and pts[:, 0].max() == 7
    assert pts[:, 1].min() == 2 and pts[:, 1].max() == 5


def test_rasterize_depth_order(camera_256):
    # two stacked quads: the nearer one wins the buffer
    verts_cam = np.array([[-1, -1, 2.0], [1, -1, 2.0], [0, 1, 2.0],
                          [-1, -1, 3.0], [1, -1, 3.0], [0, 1, 3.0]])
    proj = camera_256.focal * verts_cam[:, :2] / verts_cam[:, 2:] \
        + camera_256.principal_point
    tris = np.array([[3, 4, 5], [0, 1, 2]], dtype=np.int32)
    buf = rasterize_mesh(verts_cam, proj, tris, (256, 256))
    inside = buf.tri_id[buf.tri_id >= 0]
    assert (inside == 1).all()  # only the nearer triangle is visible
