"""Pose geometry, camera model, and heatmap utilities.

Rotation checks lean on scipy.spatial.transform.Rotation as an independent
oracle; the SVD orthogonalization is cross-checked against a polar
decomposition computed from the eigendecomposition of M^T M.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from fsdkit.geometry import (
    CameraIntrinsics,
    SimilarityTransform,
    apply_transform,
    backproject_depth,
    compose_transforms,
    decode_pose_vector,
    detect_instances,
    encode_pose_vector,
    extract_peaks,
    heatmap_sigma_for_diagonal,
    project_to_pixels,
    query_map,
    render_heatmap,
    rotation_about_axis,
    svd_orthogonalize,
)

SEED = 77


def polar_rotation_oracle(m):
    """Nearest rotation via the polar factor M (M^T M)^(-1/2), eigh-based.

    Valid whenever det(M) > 0; independent of any SVD routine.
    """
    m = np.asarray(m, dtype=np.float64)
    assert np.linalg.det(m) > 0
    evals, evecs = np.linalg.eigh(m.T @ m)
    inv_sqrt = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    return m @ inv_sqrt


def random_rotation(rng):
    return Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


# ---------------------------------------------------------------------------
# svd_orthogonalize
# ---------------------------------------------------------------------------


def test_svd_identity_and_scaled_identity():
    assert np.max(np.abs(svd_orthogonalize(np.eye(3)) - np.eye(3))) < 1e-12
    assert np.max(np.abs(svd_orthogonalize(2.0 * np.eye(3)) - np.eye(3))) < 1e-12


def test_svd_outputs_are_rotations():
    rng = np.random.default_rng(SEED)
    for _ in range(1000):
        r = svd_orthogonalize(rng.normal(size=(3, 3)))
        assert np.max(np.abs(r @ r.T - np.eye(3))) < 1e-6
        assert abs(np.linalg.det(r) - 1.0) < 1e-6


def test_svd_fixes_rotations():
    rng = np.random.default_rng(SEED + 1)
    for _ in range(100):
        r0 = random_rotation(rng)
        assert np.max(np.abs(svd_orthogonalize(r0) - r0)) < 1e-9


def test_svd_positive_scale_invariance():
    rng = np.random.default_rng(SEED + 2)
    for alpha in (1e-3, 7.0, 1e5):
        m = rng.normal(size=(3, 3))
        assert np.max(np.abs(svd_orthogonalize(alpha * m) - svd_orthogonalize(m))) < 1e-9


def test_svd_matches_polar_oracle():
    rng = np.random.default_rng(SEED + 3)
    count = 0
    while count < 200:
        m = rng.normal(size=(3, 3))
        if np.linalg.det(m) < 0.1:  # oracle needs a safely positive determinant
            continue
        assert np.max(np.abs(svd_orthogonalize(m) - polar_rotation_oracle(m))) < 1e-9
        count += 1


def test_svd_noise_recovery():
    rng = np.random.default_rng(SEED + 4)
    r0 = random_rotation(rng)
    noise = rng.normal(size=(3, 3))
    noise *= 1e-3 / np.linalg.norm(noise)
    r = svd_orthogonalize(r0 + noise)
    assert np.linalg.norm(r - r0) < 1e-2


def test_svd_rejects_rank_deficient_input():
    v = np.array([1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="rank"):
        svd_orthogonalize(np.outer(v, v))
    with pytest.raises(ValueError, match="rank"):
        svd_orthogonalize(np.zeros((3, 3)))


def test_rotation_about_axis_matches_scipy():
    rng = np.random.default_rng(SEED + 5)
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-np.pi, np.pi)
        expected = Rotation.from_rotvec(angle * axis).as_matrix()
        assert np.max(np.abs(rotation_about_axis(axis, angle) - expected)) < 1e-12


# ---------------------------------------------------------------------------
# Pose vectors and similarity transforms
# ---------------------------------------------------------------------------


def test_decode_identity_pose_vector():
    v = np.array([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0], dtype=np.float64)
    t = decode_pose_vector(v)
    assert np.max(np.abs(t.rotation - np.eye(3))) < 1e-12
    assert np.max(np.abs(t.translation)) < 1e-12
    assert t.scale == pytest.approx(1.0)


def test_decode_log_scale_channel():
    v = np.zeros(13)
    v[:9] = np.eye(3).reshape(-1)
    v[12] = np.log(2.0)
    assert decode_pose_vector(v).scale == pytest.approx(2.0)


def test_pose_vector_round_trip():
    rng = np.random.default_rng(SEED + 6)
    for _ in range(50):
        v = rng.normal(size=13)
        t = decode_pose_vector(v)
        assert np.max(np.abs(t.rotation @ t.rotation.T - np.eye(3))) < 1e-9
        v2 = encode_pose_vector(t)
        t2 = decode_pose_vector(v2)
        assert np.max(np.abs(t2.rotation - t.rotation)) < 1e-6
        assert np.max(np.abs(t2.translation - t.translation)) < 1e-6
        assert abs(np.log(t2.scale) - np.log(t.scale)) < 1e-6


def test_transform_apply_matches_loop_oracle():
    rng = np.random.default_rng(SEED + 7)
    t = SimilarityTransform(1.7, random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(40, 3))
    out = t.apply(pts)
    for p, q in zip(pts, out):
        assert np.max(np.abs(1.7 * t.rotation @ p + t.translation - q)) < 1e-12
    assert np.array_equal(apply_transform(t, pts), out)


def test_transform_compose_and_inverse():
    rng = np.random.default_rng(SEED + 8)
    outer = SimilarityTransform(2.0, random_rotation(rng), rng.normal(size=3))
    inner = SimilarityTransform(0.5, random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(20, 3))
    combined = compose_transforms(outer, inner)
    assert np.max(np.abs(combined.apply(pts) - outer.apply(inner.apply(pts)))) < 1e-9

    back = outer.inverse().apply(outer.apply(pts))
    assert np.max(np.abs(back - pts)) < 1e-9


def test_transform_preserves_distance_ratios():
    rng = np.random.default_rng(SEED + 9)
    s = 2.3
    t = SimilarityTransform(s, random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(30, 3))
    out = t.apply(pts)
    d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
    assert np.max(np.abs(d_out - s * d_in)) < 1e-9


def test_transform_validation():
    with pytest.raises(ValueError):
        SimilarityTransform(1.0, np.eye(3) * 2.0, np.zeros(3))  # not orthonormal
    with pytest.raises(ValueError):
        SimilarityTransform(-1.0, np.eye(3), np.zeros(3))  # negative scale
    flip = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        SimilarityTransform(1.0, flip, np.zeros(3))  # det -1


def test_transform_dict_round_trip():
    rng = np.random.default_rng(SEED + 10)
    t = SimilarityTransform(0.8, random_rotation(rng), rng.normal(size=3))
    t2 = SimilarityTransform.from_dict(t.to_dict())
    assert np.max(np.abs(t2.rotation - t.rotation)) < 1e-15
    assert np.max(np.abs(t2.translation - t.translation)) < 1e-15
    assert t2.scale == t.scale


# ---------------------------------------------------------------------------
# Camera model
# ---------------------------------------------------------------------------

K = CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0)


def test_backproject_principal_ray():
    depth = np.zeros((480, 640))
    depth[240, 320] = 1.5
    cloud = backproject_depth(depth, K)
    assert cloud.shape == (1, 3)
    assert np.max(np.abs(cloud[0] - [0.0, 0.0, 1.5])) < 1e-12


def test_backproject_unit_off_axis():
    # One focal length right of the principal point at z=1 lands at x=1.
    depth = np.zeros((480, 900))
    depth[240, 820] = 1.0
    k = CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0)
    cloud = backproject_depth(depth, k)
    assert np.max(np.abs(cloud[0] - [1.0, 0.0, 1.0])) < 1e-12


def test_backproject_matches_loop_oracle():
    rng = np.random.default_rng(SEED + 11)
    depth = rng.uniform(0.5, 3.0, size=(24, 32))
    depth[rng.random(depth.shape) < 0.3] = 0.0
    mask = rng.random(depth.shape) < 0.8
    cloud = backproject_depth(depth, K, mask)

    expected = []
    for v in range(depth.shape[0]):  # row-major scan order
        for u in range(depth.shape[1]):
            z = depth[v, u]
            if z > 0 and mask[v, u]:
                expected.append([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])
    expected = np.array(expected)
    assert cloud.shape == expected.shape
    assert np.max(np.abs(cloud - expected)) < 1e-12


def test_backproject_mask_shape_mismatch():
    with pytest.raises(ValueError, match="mask"):
        backproject_depth(np.ones((4, 4)), K, np.ones((4, 5), dtype=bool))


def test_backproject_reproject_round_trip():
    rng = np.random.default_rng(SEED + 12)
    depth = rng.uniform(0.5, 3.0, size=(24, 32))
    cloud = backproject_depth(depth, K)
    pixels = project_to_pixels(cloud, K)
    us, vs = np.meshgrid(np.arange(32), np.arange(24))
    expected = np.stack([us.reshape(-1), vs.reshape(-1)], axis=1)
    assert np.max(np.abs(pixels - expected)) < 1e-6


def test_project_requires_positive_depth():
    with pytest.raises(ValueError, match="z"):
        project_to_pixels(np.array([[0.0, 0.0, 0.0]]), K)


def test_intrinsics_validation_and_dict():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)
    k2 = CameraIntrinsics.from_dict(K.to_dict())
    assert (k2.fx, k2.fy, k2.cx, k2.cy) == (K.fx, K.fy, K.cx, K.cy)


# ---------------------------------------------------------------------------
# Heatmaps and peaks
# ---------------------------------------------------------------------------


def test_render_heatmap_matches_loop_oracle():
    centers = [(5.0, 3.0), (12.5, 8.0)]
    sigmas = [1.0, 2.0]
    heat = render_heatmap(centers, sigmas, width=20, height=12)
    assert heat.shape == (12, 20)
    for y in range(12):
        for x in range(20):
            vals = [np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
                    for (cx, cy), s in zip(centers, sigmas)]
            assert abs(heat[y, x] - max(vals)) < 1e-12


def test_render_heatmap_peak_value_and_range():
    heat = render_heatmap([(7, 5)], 1.5, width=16, height=10)
    assert heat[5, 7] == pytest.approx(1.0)
    assert heat.max() <= 1.0
    assert heat.min() >= 0.0


def test_heatmap_sigma_for_diagonal():
    assert heatmap_sigma_for_diagonal(3.0) == 1.0   # floor at one cell
    assert heatmap_sigma_for_diagonal(30.0) == pytest.approx(5.0)


def test_extract_peaks_single_center_round_trip():
    heat = render_heatmap([(9, 6)], 1.0, width=20, height=14)
    peaks = extract_peaks(heat, threshold=0.3)
    assert len(peaks) == 1
    assert peaks[0].center == (9, 6)
    assert peaks[0].score == pytest.approx(1.0)


def test_extract_peaks_uniform_map_below_threshold():
    assert extract_peaks(np.full((10, 10), 0.2), threshold=0.3) == []


def test_extract_peaks_three_separated_centers():
    centers = [(4, 4), (14, 4), (9, 12)]
    heat = render_heatmap(centers, 1.0, width=20, height=18)
    peaks = extract_peaks(heat, threshold=0.3)
    assert sorted(p.center for p in peaks) == sorted(centers)
    # equal scores: sorted by (y, x)
    assert [p.center for p in peaks] == [(4, 4), (14, 4), (9, 12)]


def test_extract_peaks_tie_keeps_smallest_yx():
    heat = np.zeros((7, 7))
    heat[3, 3] = heat[3, 4] = 0.9  # plateau inside one window
    peaks = extract_peaks(heat, threshold=0.5, window=3)
    assert [p.center for p in peaks] == [(3, 3)]


def test_extract_peaks_validation():
    with pytest.raises(ValueError, match="threshold"):
        extract_peaks(np.zeros((4, 4)), threshold=1.5)
    with pytest.raises(ValueError, match="window"):
        extract_peaks(np.zeros((4, 4)), threshold=0.5, window=4)


def test_query_map_and_bounds():
    rng = np.random.default_rng(SEED + 13)
    dense = rng.normal(size=(6, 8, 13))
    assert np.array_equal(query_map(dense, (0, 0)), dense[0, 0, :])
    assert np.array_equal(query_map(dense, (7, 5)), dense[5, 7, :])
    with pytest.raises(ValueError, match="bounds"):
        query_map(dense, (8, 0))


def test_detect_instances_reads_embeddings_at_peaks():
    rng = np.random.default_rng(SEED + 14)
    centers = [(3, 2), (10, 7)]
    heat = render_heatmap(centers, 1.0, width=14, height=10)
    pose_map = rng.normal(size=(10, 14, 13))
    shape_map = rng.normal(size=(10, 14, 64))
    found = detect_instances(heat, 0.3, pose_map=pose_map, shape_map=shape_map)
    assert sorted(p.center for p in found) == sorted(centers)
    for peak in found:
        x, y = peak.center
        assert np.array_equal(peak.pose_vector, pose_map[y, x, :])
        assert np.array_equal(peak.latent, shape_map[y, x, :])
