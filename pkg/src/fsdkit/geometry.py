"""Pose and size algebra plus dense-map plumbing.

Covers the similarity transform P_cam = s * R * P_cano + t, SVD rotation
orthogonalization, the 13-channel pose-vector codec (9 rotation entries,
3 translation, 1 log-scale), pinhole depth back-projection, Gaussian
heatmap rendering, and peak/embedding extraction from dense maps.

Image-coordinate convention used throughout: x is the column index, y is
the row index; map lookups at (x, y) read array[y, x].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fields import FloatArray, as_points

_ROT_TOL = 1e-6


def _as_matrix3(m) -> FloatArray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite values")
    return arr


def _as_vector3(v, name: str = "vector") -> FloatArray:
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class SimilarityTransform:
    """Scale s > 0, rotation R in SO(3), translation t (meters)."""

    scale: float
    rotation: FloatArray
    translation: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", _as_matrix3(self.rotation))
        object.__setattr__(self, "translation", _as_vector3(self.translation, "translation"))
        if self.scale <= 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        r = self.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ROT_TOL:
            raise ValueError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > _ROT_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-6")
        self.rotation.flags.writeable = False
        self.translation.flags.writeable = False

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points) -> FloatArray:
        """p' = s * R * p + t for every row."""
        pts = as_points(points)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """self after inner: apply(compose(self, inner), p) == apply(self, apply(inner, p))."""
        return SimilarityTransform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * (self.rotation @ inner.translation) + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        return SimilarityTransform(inv_scale, self.rotation.T,
                                   -inv_scale * (self.rotation.T @ self.translation))

    def to_dict(self) -> dict:
        return {"scale": self.scale,
                "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SimilarityTransform":
        return cls(doc["scale"], doc["rotation"], doc["translation"])


def apply_transform(transform: SimilarityTransform, points) -> FloatArray:
    """Function form of SimilarityTransform.apply."""
    return transform.apply(points)


def compose_transforms(outer: SimilarityTransform, inner: SimilarityTransform) -> SimilarityTransform:
    """Function form of outer.compose(inner)."""
    return outer.compose(inner)


def svd_orthogonalize(matrix) -> FloatArray:
    """Nearest rotation to an arbitrary 3x3 matrix.

    Full SVD M = U diag(s) V^T with s descending, then
    R = U diag(1, 1, det(U V^T)) V^T, which lands in SO(3) and is invariant
    to positive rescaling of M. Inputs with two near-zero singular values
    have no well-defined nearest rotation and are rejected.
    """
    m = _as_matrix3(matrix)
    u, s, vt = np.linalg.svd(m)
    if s[1] <= 1e-12:
        raise ValueError("degenerate input: rank < 2 (second singular value <= 1e-12)")
    det = np.linalg.det(u @ vt)
    return (u * np.array([1.0, 1.0, det])) @ vt


def rotation_about_axis(axis, radians: float) -> FloatArray:
    """Rodrigues rotation matrix about a (normalized) axis."""
    a = _as_vector3(axis, "axis")
    norm = np.linalg.norm(a)
    if norm == 0.0:
        raise ValueError("axis must be non-zero")
    a = a / norm
    k = np.array([[0.0, -a[2], a[1]],
                  [a[2], 0.0, -a[0]],
                  [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(radians) * k + (1.0 - np.cos(radians)) * (k @ k)


def decode_pose_vector(vector) -> SimilarityTransform:
    """13-vector to transform: channels [0..9) row-major 3x3 (orthogonalized
    via SVD), [9..12) translation, [12] log-scale (exponentiated)."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape != (13,):
        raise ValueError(f"pose vector must have 13 channels, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("pose vector contains non-finite values")
    rotation = svd_orthogonalize(v[:9].reshape(3, 3))
    return SimilarityTransform(float(np.exp(v[12])), rotation, v[9:12])


def encode_pose_vector(transform: SimilarityTransform) -> FloatArray:
    """Inverse of decode_pose_vector for transforms (rotation passes through)."""
    return np.concatenate([transform.rotation.reshape(9),
                           transform.translation,
                           [np.log(transform.scale)]])


# ---------------------------------------------------------------------------
# Camera model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError(f"focal lengths must be > 0, got fx={self.fx}, fy={self.fy}")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraIntrinsics":
        return cls(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]))


def _as_depth(depth) -> FloatArray:
    arr = np.asarray(depth, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"depth map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("depth values must be finite and >= 0 (0 encodes invalid)")
    return arr


def backproject_depth(depth, intrinsics: CameraIntrinsics, mask=None) -> FloatArray:
    """Lift valid depth pixels to camera-frame 3D points.

    A pixel (u, v) with depth z maps to
    ((u - cx) z / fx, (v - cy) z / fy, z). Pixels with depth 0 (and, when a
    mask is given, mask-false pixels) are skipped; output rows follow
    row-major pixel order.
    """
    d = _as_depth(depth)
    valid = d > 0.0
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != d.shape:
            raise ValueError(f"mask shape {m.shape} does not match depth shape {d.shape}")
        valid &= m
    vs, us = np.nonzero(valid)
    z = d[vs, us]
    x = (us - intrinsics.cx) * z / intrinsics.fx
    y = (vs - intrinsics.cy) * z / intrinsics.fy
    return np.column_stack([x, y, z])


def project_to_pixels(points, intrinsics: CameraIntrinsics) -> FloatArray:
    """Pinhole forward model: camera points to (u, v) pixel coordinates."""
    pts = as_points(points)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise ValueError("points must have z > 0 to project")
    u = pts[:, 0] * intrinsics.fx / z + intrinsics.cx
    v = pts[:, 1] * intrinsics.fy / z + intrinsics.cy
    return np.column_stack([u, v])


# ---------------------------------------------------------------------------
# Heatmaps and dense maps
# ---------------------------------------------------------------------------


def render_heatmap(centers, sigmas, width: int, height: int) -> FloatArray:
    """Max-composited Gaussian heatmap.

    H(p) = max over centers c of exp(-|p - c|^2 / (2 sigma_c^2)); values stay
    in [0, 1] without renormalization and equal exactly 1 at integer centers.
    sigmas is a scalar or one value per center.
    """
    if width < 1 or height < 1:
        raise ValueError("heatmap dimensions must be >= 1")
    centers = [(float(x), float(y)) for x, y in centers]
    sig = np.broadcast_to(np.asarray(sigmas, dtype=np.float64), (len(centers),))
    if np.any(sig <= 0.0):
        raise ValueError("sigmas must be > 0")
    heat = np.zeros((height, width), dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    for (cx, cy), s in zip(centers, sig):
        np.maximum(heat, np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * s * s)), out=heat)
    return heat


def heatmap_sigma_for_diagonal(diagonal: float) -> float:
    """Default center-kernel width: max(1, object diagonal / 6) grid cells."""
    return max(1.0, float(diagonal) / 6.0)


@dataclass
class DetectedInstance:
    """A heatmap peak, optionally annotated with the embeddings at it."""

    center: tuple[int, int]  # (x, y)
    score: float
    pose_vector: FloatArray | None = None
    latent: FloatArray | None = None


def extract_peaks(heatmap, threshold: float, window: int = 3) -> list[DetectedInstance]:
    """Local maxima of a heatmap above a score threshold.

    A pixel qualifies when it is >= every value in its window x window
    neighborhood (borders padded below any score) and > threshold. Tied
    maxima within one window keep only the lexicographically smallest (y, x).
    Results are sorted by descending score, then (y, x).
    """
    heat = np.asarray(heatmap, dtype=np.float64)
    if heat.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {heat.shape}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")

    local_max = ndimage.maximum_filter(heat, size=window, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero((heat == local_max) & (heat > threshold))
    # np.nonzero returns row-major order, i.e. already (y, x) lexicographic.
    radius = window // 2
    kept: list[tuple[int, int]] = []
    for y, x in zip(ys.tolist(), xs.tolist()):
        if any(abs(y - ky) <= radius and abs(x - kx) <= radius for ky, kx in kept):
            continue  # an equal-valued peak in this window was kept already
        kept.append((y, x))
    peaks = [DetectedInstance((x, y), float(heat[y, x])) for y, x in kept]
    peaks.sort(key=lambda p: (-p.score, p.center[1], p.center[0]))
    return peaks


def query_map(map_values, center) -> FloatArray:
    """Channel vector of a dense (h, w, c) map at integer (x, y)."""
    values = np.asarray(map_values, dtype=np.float64)
    if values.ndim != 3:
        raise ValueError(f"dense map must be (h, w, c), got shape {values.shape}")
    x, y = int(center[0]), int(center[1])
    h, w = values.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"center ({x}, {y}) outside map bounds {w}x{h}")
    return values[y, x, :].copy()


def detect_instances(heatmap, threshold: float, window: int = 3,
                     pose_map=None, shape_map=None) -> list[DetectedInstance]:
    """Peaks plus the pose/shape embeddings sampled at each peak."""
    peaks = extract_peaks(heatmap, threshold, window)
    for peak in peaks:
        if pose_map is not None:
            peak.pose_vector = query_map(pose_map, peak.center)
        if shape_map is not None:
            peak.latent = query_map(shape_map, peak.center)
    return peaks
