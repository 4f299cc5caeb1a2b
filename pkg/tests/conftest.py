import numpy as np
import pytest

from videoreshape.camera import RigidPose, default_camera
from videoreshape.model import FaceModel
from videoreshape.synthetic import default_scenario, generate, make_face_model
from videoreshape.tracking import FrameObservation


@pytest.fixture(scope="session")
def face_model() -> FaceModel:
    return make_face_model()


@pytest.fixture(scope="session")
def toy_model() -> FaceModel:
    """Minimal 4-vertex model (two triangles) for closed-form checks."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.1],
                      [0.0, 1.0, 0.2], [1.0, 1.0, 0.0]])
    identity = np.zeros((2, 12))
    identity[0, 0::3] = [0.1, -0.2, 0.05, 0.3]
    identity[1, 1::3] = [0.2, 0.1, -0.1, 0.15]
    expression = np.zeros((1, 12))
    expression[0, 2::3] = [0.05, -0.05, 0.1, 0.02]
    reshape_basis = np.linspace(-0.1, 0.1, 12)
    model = FaceModel(
        mean_shape=verts.reshape(-1),
        identity_basis=identity,
        expression_basis=expression,
        triangles=np.array([[0, 1, 2], [1, 3, 2]], dtype=np.int32),
        landmark_vertices=np.array([0, 1, 2, 3], dtype=np.int32),
        contour_flags=np.array([True, True, True, False]),
        reshape_basis=reshape_basis,
        region_labels=np.array([5, 5, 5, 5], dtype=np.uint8),
        face_length=1.0,
    )
    model.validate()
    return model


@pytest.fixture(scope="session")
def small_scenario(face_model):
    """10-frame noise-free scenario shared by tracking tests."""
    sc = default_scenario(face_model, n_frames=10, seed=1, alpha_scale=0.5,
                          beta_amp=(0.04, 0.08), yaw_deg=12, pitch_deg=5)
    seq = generate(sc)
    obs = [FrameObservation(index=t, landmarks=seq.landmarks[t], flow=seq.flows[t])
           for t in range(sc.n_frames)]
    return sc, seq, obs


@pytest.fixture
def frontal_pose(face_model):
    return RigidPose(r=np.zeros(3), t=np.array([0.0, 0.0, 5.0]))


@pytest.fixture
def camera_256():
    return default_camera((256, 256))
