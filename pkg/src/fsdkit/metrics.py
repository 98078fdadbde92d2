"""Pose and detection evaluation: rotation/translation errors, oriented-box
3D IoU, average precision, and the degree-cm accuracy suite.

IoU of oriented boxes is estimated by Monte Carlo sampling with a seed
derived symmetrically from both boxes' contents, so iou3d(a, b) equals
iou3d(b, a) bit for bit. Axis-aligned pairs take an exact closed form.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .geometry import SimilarityTransform, rotation_about_axis

_SO3_TOL = 1e-4


def _check_rotation(r, name: str) -> np.ndarray:
    m = np.asarray(r, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got shape {m.shape}")
    if np.max(np.abs(m.T @ m - np.eye(3))) > _SO3_TOL or abs(np.linalg.det(m) - 1.0) > _SO3_TOL:
        raise ValueError(f"{name} is not a rotation within {_SO3_TOL}")
    return m


def _angle_deg(r_pred: np.ndarray, r_gt: np.ndarray) -> float:
    cos = (np.trace(r_gt.T @ r_pred) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def rotation_error_deg(r_pred, r_gt, symmetry_axis=None, symmetry_samples: int = 360) -> float:
    """Geodesic rotation error in degrees.

    With a symmetry axis the error is minimized over symmetry_samples
    rotations of the ground truth about that axis (continuous symmetries
    like bottles or cans).
    """
    rp = _check_rotation(r_pred, "r_pred")
    rg = _check_rotation(r_gt, "r_gt")
    if symmetry_axis is None:
        return _angle_deg(rp, rg)
    if symmetry_samples < 1:
        raise ValueError("symmetry_samples must be >= 1")
    phis = 2.0 * np.pi * np.arange(symmetry_samples) / symmetry_samples
    spins = np.stack([rotation_about_axis(symmetry_axis, phi) for phi in phis])
    candidates = rg @ spins  # (n, 3, 3)
    cos = (np.einsum("nij,ij->n", candidates, rp) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).min())


def translation_error_cm(t_pred, t_gt) -> float:
    """Euclidean translation error in centimeters (inputs in meters)."""
    tp = np.asarray(t_pred, dtype=np.float64).reshape(3)
    tg = np.asarray(t_gt, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(tp)) and np.all(np.isfinite(tg))):
        raise ValueError("translations must be finite")
    return 100.0 * float(np.linalg.norm(tp - tg))


# ---------------------------------------------------------------------------
# Oriented boxes and IoU
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrientedBox3:
    """A canonical box of given half extents placed by a similarity transform."""

    transform: SimilarityTransform
    half_extents: np.ndarray

    def __post_init__(self):
        he = np.asarray(self.half_extents, dtype=np.float64).reshape(-1)
        if he.shape != (3,) or not np.all(np.isfinite(he)) or np.any(he <= 0.0):
            raise ValueError("half_extents must be a positive finite 3-vector")
        object.__setattr__(self, "half_extents", he)
        he.flags.writeable = False

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents) * self.transform.scale ** 3)

    def contains(self, points) -> np.ndarray:
        """Boolean inside test (boundary counts as inside)."""
        t = self.transform
        local = ((np.asarray(points, dtype=np.float64) - t.translation) @ t.rotation) / t.scale
        return np.all(np.abs(local) <= self.half_extents, axis=1)

    def sample_inside(self, rng: np.random.Generator, n: int) -> np.ndarray:
        local = rng.uniform(-self.half_extents, self.half_extents, size=(n, 3))
        t = self.transform
        return t.scale * (local @ t.rotation.T) + t.translation

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """World-frame bounds; exact only for identity rotation."""
        t = self.transform
        return (t.translation - t.scale * self.half_extents,
                t.translation + t.scale * self.half_extents)

    def to_dict(self) -> dict:
        return {"half_extents": self.half_extents.tolist(), "transform": self.transform.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "OrientedBox3":
        return cls(SimilarityTransform.from_dict(doc["transform"]), doc["half_extents"])


def _box_digest(box: OrientedBox3) -> int:
    t = box.transform
    payload = np.concatenate([[t.scale], t.rotation.reshape(9), t.translation, box.half_extents])
    return int.from_bytes(hashlib.sha256(payload.tobytes()).digest()[:8], "little")


def iou3d(a: OrientedBox3, b: OrientedBox3, samples: int = 100_000,
          seed: int | None = None, method: str = "auto") -> float:
    """Intersection over union of two oriented boxes.

    Monte Carlo by default: uniform samples inside each box are inside-tested
    against the other, the two intersection estimates averaged. The sampling
    seed is derived order-independently from both boxes (plus the optional
    seed), making the result symmetric in its arguments. When both rotations
    are the identity an exact closed form is used unless method="mc".
    """
    if samples < 10_000:
        raise ValueError(f"samples must be >= 10000, got {samples}")
    if method not in ("auto", "exact", "mc"):
        raise ValueError(f"method must be auto, exact, or mc, got {method!r}")

    axis_aligned = (np.array_equal(a.transform.rotation, np.eye(3))
                    and np.array_equal(b.transform.rotation, np.eye(3)))
    if method == "exact" and not axis_aligned:
        raise ValueError("exact method requires both boxes axis-aligned (rotation = I)")
    if axis_aligned and method != "mc":
        lo_a, hi_a = a.aabb()
        lo_b, hi_b = b.aabb()
        overlap = np.maximum(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0.0)
        inter = float(np.prod(overlap))
        union = a.volume + b.volume - inter
        return inter / union if union > 0.0 else 0.0

    da, db = _box_digest(a), _box_digest(b)
    pair = (min(da, db), max(da, db), 0 if seed is None else int(seed))
    rng_a = np.random.default_rng((*pair, da))
    rng_b = np.random.default_rng((*pair, db))
    inter_a = a.volume * float(np.mean(b.contains(a.sample_inside(rng_a, samples))))
    inter_b = b.volume * float(np.mean(a.contains(b.sample_inside(rng_b, samples))))
    inter = 0.5 * (inter_a + inter_b)
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return float(np.clip(inter / union, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseRecord:
    """One predicted or ground-truth instance for evaluation."""

    category: str
    transform: SimilarityTransform
    box: OrientedBox3
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_dict(self) -> dict:
        return {"category": self.category, "score": self.score,
                "transform": self.transform.to_dict(), "box": self.box.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PoseRecord":
        return cls(doc["category"],
                   SimilarityTransform.from_dict(doc["transform"]),
                   OrientedBox3.from_dict(doc["box"]),
                   float(doc.get("score", 1.0)))


def average_precision(records, gts, match_predicate) -> float:
    """All-point interpolated AP with greedy one-to-one matching.

    Predictions are visited in descending score order; each matches the
    first unmatched ground truth of its category satisfying match_predicate.
    Recall is measured against all supplied ground truths.
    """
    gts = list(gts)
    records = list(records)
    if not gts:
        return 0.0
    if not records:
        return 0.0
    order = sorted(range(len(records)), key=lambda i: (-records[i].score, i))
    matched: set[int] = set()
    hits = np.zeros(len(records), dtype=np.float64)
    for rank, idx in enumerate(order):
        rec = records[idx]
        for gi, gt in enumerate(gts):
            if gi in matched or gt.category != rec.category:
                continue
            if match_predicate(rec, gt):
                matched.add(gi)
                hits[rank] = 1.0
                break
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(records) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # Each hit contributes 1/num_gt recall at the precision envelope there.
    return float(np.sum(envelope[hits > 0.0]) / len(gts))


def make_iou_matcher(threshold: float, samples: int = 10_000, seed: int = 0):
    """Predicate: 3D IoU of the two records' boxes >= threshold."""
    def predicate(pred: PoseRecord, gt: PoseRecord) -> bool:
        return iou3d(pred.box, gt.box, samples=samples, seed=seed) >= threshold
    return predicate


def make_pose_matcher(max_deg: float, max_cm: float, symmetry_axes=None):
    """Predicate: rotation error < max_deg AND translation error < max_cm.

    symmetry_axes optionally maps category name to a symmetry axis.
    """
    symmetry_axes = symmetry_axes or {}

    def predicate(pred: PoseRecord, gt: PoseRecord) -> bool:
        axis = symmetry_axes.get(gt.category)
        rot = rotation_error_deg(pred.transform.rotation, gt.transform.rotation, axis)
        trans = translation_error_cm(pred.transform.translation, gt.transform.translation)
        return rot < max_deg and trans < max_cm
    return predicate


DEFAULT_IOU_THRESHOLDS = (0.25, 0.5)
DEFAULT_POSE_THRESHOLDS = ((5.0, 5.0), (5.0, 10.0), (10.0, 5.0), (10.0, 10.0))


def evaluate_suite(preds, gts, iou_thresholds=DEFAULT_IOU_THRESHOLDS,
                   pose_thresholds=DEFAULT_POSE_THRESHOLDS,
                   samples: int = 10_000, seed: int = 0, symmetry_axes=None) -> dict:
    """Mean AP per threshold over ground-truth categories.

    Returns {"iou25": .., "iou50": .., "deg5cm5": .., "deg5cm10": ..,
    "deg10cm5": .., "deg10cm10": ..} for the default thresholds; an empty
    ground-truth set yields zeros plus a "flags" entry.
    """
    preds = list(preds)
    gts = list(gts)
    report: dict = {}
    categories = sorted({gt.category for gt in gts})

    def mean_ap(matcher) -> float:
        aps = []
        for cat in categories:
            cat_preds = [p for p in preds if p.category == cat]
            cat_gts = [g for g in gts if g.category == cat]
            aps.append(average_precision(cat_preds, cat_gts, matcher))
        return float(np.mean(aps)) if aps else 0.0

    for threshold in iou_thresholds:
        report[f"iou{int(round(threshold * 100))}"] = mean_ap(
            make_iou_matcher(threshold, samples=samples, seed=seed))
    for max_deg, max_cm in pose_thresholds:
        key = f"deg{int(max_deg)}cm{int(max_cm)}"
        report[key] = mean_ap(make_pose_matcher(max_deg, max_cm, symmetry_axes))
    if not categories:
        report["flags"] = ["no_ground_truth"]
    return report
