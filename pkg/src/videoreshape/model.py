"""Linear parametric face model: storage, assembly, and the reshape operator.

A face is mean + identity-basis and expression-basis offsets; reshaping adds a
per-vertex displacement basis scaled by a single scalar.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .camera import Camera, RigidPose, project_points
from .errors import DimensionError, ModelFormatError

MAGIC = b"PRFM"
VERSION = 1

REGION_NAMES = ("cheek-l", "cheek-r", "chin", "nose", "forehead", "other")
REGION_CODES = {name: i for i, name in enumerate(REGION_NAMES)}


@dataclass(frozen=True)
class FaceModel:
    mean_shape: np.ndarray        # (3n,)
    identity_basis: np.ndarray    # (m_s, 3n)
    expression_basis: np.ndarray  # (m_e, 3n)
    triangles: np.ndarray         # (T, 3) int32
    landmark_vertices: np.ndarray  # (NL,) int32, vertex index per landmark
    contour_flags: np.ndarray     # (NL,) bool, True for contour landmarks
    reshape_basis: np.ndarray     # (3n,)
    region_labels: np.ndarray     # (n,) uint8
    face_length: float

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.size // 3

    @property
    def m_s(self) -> int:
        return self.identity_basis.shape[0]

    @property
    def m_e(self) -> int:
        return self.expression_basis.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_vertices.size

    @property
    def contour_landmark_vertices(self) -> np.ndarray:
        """Vertex indices of the contour-flagged landmarks, in landmark order."""
        return self.landmark_vertices[self.contour_flags]

    def validate(self) -> None:
        n3 = self.mean_shape.size
        if n3 % 3 != 0:
            raise DimensionError("mean shape length is not a multiple of 3")
        for name, basis in (("identity", self.identity_basis),
                            ("expression", self.expression_basis)):
            if basis.ndim != 2 or basis.shape[1] != n3:
                raise DimensionError(f"{name} basis vectors must have length {n3}")
        if self.reshape_basis.shape != (n3,):
            raise DimensionError(f"reshape basis must have length {n3}")
        n = n3 // 3
        if self.triangles.size and self.triangles.max() >= n:
            raise DimensionError("triangle index out of range")
        if self.landmark_vertices.size and self.landmark_vertices.max() >= n:
            raise DimensionError("landmark vertex index out of range")
        if self.contour_flags.shape != self.landmark_vertices.shape:
            raise DimensionError("contour flags must match landmark count")
        if self.region_labels.shape != (n,):
            raise DimensionError("region labels must have one entry per vertex")
        if self.region_labels.size and self.region_labels.max() >= len(REGION_NAMES):
            raise DimensionError("unknown region label code")
        if not self.face_length > 0:
            raise DimensionError("face length must be positive")


@dataclass
class FaceMesh:
    """Concrete vertex positions sharing topology/labels with a FaceModel."""

    vertices: np.ndarray  # (n, 3)
    model: FaceModel

    def __post_init__(self):
        if self.vertices.shape != (self.model.n_vertices, 3):
            raise DimensionError("mesh vertex count differs from the model's")

    @property
    def triangles(self) -> np.ndarray:
        return self.model.triangles

    def landmark_points(self) -> np.ndarray:
        return self.vertices[self.model.landmark_vertices]


def assemble(model: FaceModel, alpha: np.ndarray, beta: np.ndarray) -> FaceMesh:
    """mean + sum_i alpha_i b_i^s + sum_i beta_i b_i^e."""
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if alpha.size != model.m_s:
        raise DimensionError(f"expected {model.m_s} identity coefficients, got {alpha.size}")
    if beta.size != model.m_e:
        raise DimensionError(f"expected {model.m_e} expression coefficients, got {beta.size}")
    flat = model.mean_shape + alpha @ model.identity_basis + beta @ model.expression_basis
    return FaceMesh(vertices=flat.reshape(-1, 3), model=model)


def reshape(model: FaceModel, alpha: np.ndarray, beta: np.ndarray, delta: float) -> FaceMesh:
    """Reshaped face: displacement basis applied to the neutral face, then the
    expression offsets added back on top."""
    base = assemble(model, alpha, beta)
    flat = base.vertices.reshape(-1) + float(delta) * model.reshape_basis
    return FaceMesh(vertices=flat.reshape(-1, 3), model=model)


def project(mesh: FaceMesh, pose: RigidPose, cam: Camera) -> np.ndarray:
    """Pixel positions of every mesh vertex, (n, 2)."""
    return project_points(mesh.vertices, pose, cam)


# ---------------------------------------------------------------------------
# Model file container. Little-endian: magic "PRFM", u32 version, u32 n, m_s,
# m_e, NL, triangle_count; float64 mean / identity basis (row-major) /
# expression basis / reshape basis; u32 landmark indices; u8 contour flags;
# u32 triangles; u8 region labels; float64 face_length.
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, count: int, section: str) -> bytes:
        if self.off + count > len(self.data):
            raise ModelFormatError(f"truncated model file in section '{section}'")
        chunk = self.data[self.off:self.off + count]
        self.off += count
        return chunk

    def array(self, dtype: str, count: int, section: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(itemsize * count, section)
        return np.frombuffer(raw, dtype=dtype).copy()


def load_model(path) -> FaceModel:
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data)
    if rd.take(4, "magic") != MAGIC:
        raise ModelFormatError("bad magic in section 'magic' (not a PRFM file)")
    version, = struct.unpack("<I", rd.take(4, "version"))
    if version != VERSION:
        raise ModelFormatError(f"unsupported version {version} in section 'version'")
    n, m_s, m_e, nl, tri_count = struct.unpack("<5I", rd.take(20, "header"))
    n3 = 3 * n
    mean = rd.array("<f8", n3, "mean")
    identity = rd.array("<f8", m_s * n3, "identity basis").reshape(m_s, n3)
    expression = rd.array("<f8", m_e * n3, "expression basis").reshape(m_e, n3)
    reshape_basis = rd.array("<f8", n3, "reshape basis")
    landmark_vertices = rd.array("<u4", nl, "landmark vertices").astype(np.int32)
    contour_flags = rd.array("u1", nl, "contour flags").astype(bool)
    triangles = rd.array("<u4", 3 * tri_count, "triangles").astype(np.int32).reshape(tri_count, 3)
    region_labels = rd.array("u1", n, "region labels")
    face_length, = struct.unpack("<d", rd.take(8, "face length"))
    if rd.off != len(data):
        raise ModelFormatError(f"{len(data) - rd.off} trailing bytes after section 'face length'")
    model = FaceModel(mean_shape=mean, identity_basis=identity, expression_basis=expression,
                      triangles=triangles, landmark_vertices=landmark_vertices,
                      contour_flags=contour_flags, reshape_basis=reshape_basis,
                      region_labels=region_labels, face_length=face_length)
    model.validate()
    return model


def save_model(model: FaceModel, path) -> None:
    model.validate()
    n = model.n_vertices
    parts = [
        MAGIC,
        struct.pack("<6I", VERSION, n, model.m_s, model.m_e,
                    model.n_landmarks, len(model.triangles)),
        np.ascontiguousarray(model.mean_shape, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.identity_basis, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.expression_basis, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.reshape_basis, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.landmark_vertices, dtype="<u4").tobytes(),
        np.ascontiguousarray(model.contour_flags.astype(np.uint8)).tobytes(),
        np.ascontiguousarray(model.triangles, dtype="<u4").tobytes(),
        np.ascontiguousarray(model.region_labels, dtype="u1").tobytes(),
        struct.pack("<d", float(model.face_length)),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
