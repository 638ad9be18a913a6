"""Foundational geometry: bound point clouds, triangle frames, and the
local<->global Gaussian transform math shared by every other module.

Conventions: quaternions are scalar-first (w, x, y, z) with the Hamilton
product; triangle frames use columns [e1_hat, n_hat, e1_hat x n_hat].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTriangle, ShapeMismatch

AREA_FLOOR = 1e-12


# -- containers ----------------------------------------------------------------


@dataclass
class BoundPointCloud:
    """Ordered canonical-space points, each bound to a template face."""

    positions: np.ndarray  # (N, 3) float64
    bindings: np.ndarray   # (N,) int64
    face_count: int

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.bindings = np.atleast_1d(np.asarray(self.bindings, dtype=np.int64))
        if self.positions.shape[0] != self.bindings.shape[0]:
            raise ShapeMismatch("positions and bindings disagree on point count")
        if self.positions.shape[0] < 1:
            raise ValueError("cloud must contain at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("non-finite coordinates")
        if self.bindings.min() < 0 or self.bindings.max() >= self.face_count:
            raise ValueError("binding index outside [0, face_count)")

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass
class LocalGaussians:
    """Per-point Gaussian parameters expressed in triangle-local frames."""

    locations: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) unit quaternions
    scales: np.ndarray     # (N, 3) positive

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("local rotations must be unit quaternions")
        if np.any(self.scales <= 0):
            raise ValueError("local scales must be positive")

    @property
    def count(self) -> int:
        return self.locations.shape[0]


@dataclass
class GaussianSet:
    """Renderable per-point attributes in global canonical space."""

    positions: np.ndarray   # (N, 3)
    rotations: np.ndarray   # (N, 4) unit quaternions
    scales: np.ndarray      # (N, 3) positive
    colors: np.ndarray      # (N, 3) in [0, 1]
    opacities: np.ndarray   # (N,) in (0, 1)
    offsets: np.ndarray = None  # (N, 3), already applied to positions

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        n = self.positions.shape[0]
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        if self.offsets is None:
            self.offsets = np.zeros((n, 3))
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(n, 3)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


# -- quaternions ---------------------------------------------------------------


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a, b):
    """Hamilton product, scalar-first; broadcasts over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q):
    """Rotation matrix/matrices from unit quaternion(s), shape (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def quat_from_matrix(m):
    """Unit quaternion(s) from rotation matrix/matrices; w kept non-negative."""
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    m = m.reshape(-1, 3, 3)
    n = m.shape[0]
    q = np.empty((n, 4))
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    diag = np.stack([tr, m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]], axis=1)
    case = diag.argmax(axis=1)

    for c in range(4):
        sel = case == c
        if not np.any(sel):
            continue
        ms = m[sel]
        if c == 0:
            s = np.sqrt(1.0 + tr[sel]) * 2
            q[sel, 0] = 0.25 * s
            q[sel, 1] = (ms[:, 2, 1] - ms[:, 1, 2]) / s
            q[sel, 2] = (ms[:, 0, 2] - ms[:, 2, 0]) / s
            q[sel, 3] = (ms[:, 1, 0] - ms[:, 0, 1]) / s
        elif c == 1:
            s = np.sqrt(1.0 + ms[:, 0, 0] - ms[:, 1, 1] - ms[:, 2, 2]) * 2
            q[sel, 0] = (ms[:, 2, 1] - ms[:, 1, 2]) / s
            q[sel, 1] = 0.25 * s
            q[sel, 2] = (ms[:, 0, 1] + ms[:, 1, 0]) / s
            q[sel, 3] = (ms[:, 0, 2] + ms[:, 2, 0]) / s
        elif c == 2:
            s = np.sqrt(1.0 - ms[:, 0, 0] + ms[:, 1, 1] - ms[:, 2, 2]) * 2
            q[sel, 0] = (ms[:, 0, 2] - ms[:, 2, 0]) / s
            q[sel, 1] = (ms[:, 0, 1] + ms[:, 1, 0]) / s
            q[sel, 2] = 0.25 * s
            q[sel, 3] = (ms[:, 1, 2] + ms[:, 2, 1]) / s
        else:
            s = np.sqrt(1.0 - ms[:, 0, 0] - ms[:, 1, 1] + ms[:, 2, 2]) * 2
            q[sel, 0] = (ms[:, 1, 0] - ms[:, 0, 1]) / s
            q[sel, 1] = (ms[:, 0, 2] + ms[:, 2, 0]) / s
            q[sel, 2] = (ms[:, 1, 2] + ms[:, 2, 1]) / s
            q[sel, 3] = 0.25 * s

    q = quat_normalize(q)
    flip = q[:, 0] < 0
    q[flip] = -q[flip]
    return q[0] if single else q


def rotate_vectors(q, v):
    """Rotate vectors v (..., 3) by unit quaternion(s) q (..., 4)."""
    m = quat_to_matrix(q)
    return np.einsum("...ij,...j->...i", m, v)


# -- triangle frames -----------------------------------------------------------


@dataclass
class FaceTransform:
    """Rigid frame plus isotropic scale carrying local Gaussians to world."""

    rotation: np.ndarray   # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)
    scale: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6 or abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with det +1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def face_transforms(tri_vertices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frames for a batch of triangles.

    Args:
        tri_vertices: (M, 3, 3) array, [triangle, corner, xyz].

    Returns:
        (R, T, k): rotations (M, 3, 3) with columns [e1_hat, n_hat,
        e1_hat x n_hat], centroids (M, 3), scales (M,) = mean of the first
        edge length and the height of the third vertex over that edge.
    """
    v = np.asarray(tri_vertices, dtype=np.float64).reshape(-1, 3, 3)
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    cross = np.cross(e1, e2)
    area2 = np.linalg.norm(cross, axis=-1)  # twice the area
    if np.any(0.5 * area2 <= AREA_FLOOR):
        raise DegenerateTriangle(f"triangle area <= {AREA_FLOOR}")
    e1_len = np.linalg.norm(e1, axis=-1)
    e1_hat = e1 / e1_len[:, None]
    n_hat = cross / area2[:, None]
    third = np.cross(e1_hat, n_hat)
    rot = np.stack([e1_hat, n_hat, third], axis=-1)
    centroid = v.mean(axis=1)
    height = area2 / e1_len  # |e1 x e2| / |e1| = perpendicular distance of v2
    k = 0.5 * (e1_len + height)
    return rot, centroid, k


def face_transform(v0, v1, v2) -> FaceTransform:
    """Frame of a single triangle; raises DegenerateTriangle when flat."""
    rot, centroid, k = face_transforms(np.stack([v0, v1, v2])[None])
    return FaceTransform(rot[0], centroid[0], float(k[0]))


def local_to_global(locations, rotations, scales, face_rot, face_trans, face_scale):
    """Carry local Gaussians into world space: p' = k R mu + T, q' = quat(R) q,
    s' = k s.  All arguments broadcast over the leading point axis."""
    locations = np.asarray(locations, dtype=np.float64)
    face_rot = np.asarray(face_rot, dtype=np.float64)
    face_trans = np.asarray(face_trans, dtype=np.float64)
    face_scale = np.asarray(face_scale, dtype=np.float64)
    pos = face_scale[..., None] * np.einsum("...ij,...j->...i", face_rot, locations) + face_trans
    q_frame = quat_from_matrix(face_rot)
    rot = quat_normalize(quat_multiply(q_frame, rotations))
    scl = face_scale[..., None] * np.asarray(scales, dtype=np.float64)
    return pos, rot, scl


def global_to_local(positions, rotations, scales, face_rot, face_trans, face_scale):
    """Inverse of local_to_global: recover triangle-local parameters."""
    positions = np.asarray(positions, dtype=np.float64)
    face_rot = np.asarray(face_rot, dtype=np.float64)
    face_trans = np.asarray(face_trans, dtype=np.float64)
    face_scale = np.asarray(face_scale, dtype=np.float64)
    delta = positions - face_trans
    loc = np.einsum("...ji,...j->...i", face_rot, delta) / face_scale[..., None]
    q_frame_inv = quat_conjugate(quat_from_matrix(face_rot))
    rot = quat_normalize(quat_multiply(q_frame_inv, rotations))
    scl = np.asarray(scales, dtype=np.float64) / face_scale[..., None]
    return loc, rot, scl


def barycentric(p, v0, v1, v2):
    """Barycentric coordinates of p w.r.t. triangle (v0, v1, v2).

    p is projected onto the triangle plane implicitly (the solve only sees
    in-plane components).  Weights are not clamped: off-plane or outside
    points yield extrapolative coordinates summing to 1.
    """
    b = barycentric_batch(np.asarray(p)[None], np.asarray([v0]), np.asarray([v1]), np.asarray([v2]))
    return tuple(b[0])


def barycentric_batch(p, v0, v1, v2):
    """Vectorized barycentric solve; returns (N, 3) weights summing to 1."""
    p = np.asarray(p, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    e0 = v1 - v0
    e1 = v2 - v0
    d = p - v0
    d00 = np.einsum("...i,...i->...", e0, e0)
    d01 = np.einsum("...i,...i->...", e0, e1)
    d11 = np.einsum("...i,...i->...", e1, e1)
    d20 = np.einsum("...i,...i->...", d, e0)
    d21 = np.einsum("...i,...i->...", d, e1)
    denom = d00 * d11 - d01 * d01  # = |e0 x e1|^2 = (2 * area)^2
    if np.any(denom <= (2.0 * AREA_FLOOR) ** 2):
        raise DegenerateTriangle(f"triangle area <= {AREA_FLOOR}")
    b1 = (d11 * d20 - d01 * d21) / denom
    b2 = (d00 * d21 - d01 * d20) / denom
    b0 = 1.0 - b1 - b2
    return np.stack([b0, b1, b2], axis=-1)


# -- BPC1 file format ----------------------------------------------------------


def write_bpc(path, cloud: BoundPointCloud):
    """Write the line-based BPC1 format: header then `x y z b` rows at nine
    significant digits.  Callers are responsible for canonical ordering."""
    lines = [f"BPC1 {cloud.count} {cloud.face_count}"]
    for (x, y, z), b in zip(cloud.positions, cloud.bindings):
        lines.append(f"{x:.9g} {y:.9g} {z:.9g} {int(b)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_bpc(path) -> BoundPointCloud:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "BPC1":
            raise ValueError(f"{path}: not a BPC1 file")
        n, face_count = int(header[1]), int(header[2])
        positions = np.empty((n, 3))
        bindings = np.empty(n, dtype=np.int64)
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != 4:
                raise ValueError(f"{path}: malformed point line {i}")
            positions[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
            bindings[i] = int(parts[3])
    return BoundPointCloud(positions, bindings, face_count)
