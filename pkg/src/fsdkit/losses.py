"""Training losses as pure functions, plus stage-wise composition.

The Chamfer loss has two modes. The default, clamped_inlier, is the mean
nearest-neighbor distance restricted to pairs closer than epsilon (per
direction, summed): aligned clouds score 0. The alternative, paper_hinge,
is the literal hinge mean of (epsilon - d) over inliers, which *rewards*
distance growing toward epsilon; it is kept because it documents a formula
variant, and chamfer(A, A) = 2 * epsilon under it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.spatial import cKDTree

from .fields import FloatArray, as_points

CHAMFER_MODES = ("clamped_inlier", "paper_hinge")

STAGES = ("pretrain", "mixed", "finetune")
LOSS_TERMS = ("seg", "depth", "heatmap", "pose", "shape", "chamfer")
DEFAULT_WEIGHTS = {"seg": 1.0, "depth": 1.0, "heatmap": 100.0,
                   "pose": 0.1, "shape": 0.1, "chamfer": 10.0}
DOMAINS = ("synthetic", "real")


@dataclass(frozen=True)
class ChamferConfig:
    epsilon: float = 0.2
    mode: str = "clamped_inlier"

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.mode not in CHAMFER_MODES:
            raise ValueError(f"mode must be one of {CHAMFER_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class ChamferResult:
    """Total loss plus the per-direction terms and inlier counts."""

    value: float
    term_ab: float
    term_ba: float
    inliers_ab: int
    inliers_ba: int


def _direction_term(src: FloatArray, dst_tree: cKDTree, cfg: ChamferConfig) -> tuple[float, int]:
    dist, _ = dst_tree.query(src, k=1)
    inlier = dist < cfg.epsilon
    count = int(np.count_nonzero(inlier))
    if count == 0:
        return 0.0, 0
    if cfg.mode == "clamped_inlier":
        return float(np.mean(dist[inlier])), count
    return float(np.mean(cfg.epsilon - dist[inlier])), count


def chamfer_thresholded(a, b, cfg: ChamferConfig | None = None) -> ChamferResult:
    """Bidirectional thresholded Chamfer loss between two point clouds.

    Nearest neighbors are exact (kd-tree); per direction only pairs with
    d < epsilon contribute, normalized by that direction's inlier count, and
    a direction with no inliers contributes 0.
    """
    cfg = cfg or ChamferConfig()
    pa = as_points(a)
    pb = as_points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("chamfer requires non-empty point clouds")
    term_ab, count_ab = _direction_term(pa, cKDTree(pb), cfg)
    term_ba, count_ba = _direction_term(pb, cKDTree(pa), cfg)
    return ChamferResult(term_ab + term_ba, term_ab, term_ba, count_ab, count_ba)


def heatmap_l2(pred, gt) -> float:
    """Sum (not mean) of squared per-pixel differences."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"heatmap shapes differ: {p.shape} vs {g.shape}")
    return float(np.sum((p - g) ** 2))


def weighted_l1(pred, gt, weight) -> float:
    """Heatmap-weighted L1 between dense embedding maps.

    sum_xy w(x,y) * |pred(x,y,:) - gt(x,y,:)|_1 / sum_xy w(x,y); returns 0
    when the weight mass is 0.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"embedding map shapes differ: {p.shape} vs {g.shape}")
    if p.ndim != 3:
        raise ValueError(f"embedding maps must be (h, w, c), got shape {p.shape}")
    if w.shape != p.shape[:2]:
        raise ValueError(f"weight shape {w.shape} does not match spatial dims {p.shape[:2]}")
    total_weight = float(np.sum(w))
    if total_weight == 0.0:
        return 0.0
    per_pixel = np.abs(p - g).sum(axis=2)
    return float(np.sum(w * per_pixel) / total_weight)


# ---------------------------------------------------------------------------
# Stage composition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageLossSpec:
    """Which stage is running and the per-term lambda weights."""

    stage: str
    weights: dict = dataclass_field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    synthetic_ratio: int = 5

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        missing = [t for t in LOSS_TERMS if t not in self.weights]
        if missing:
            raise ValueError(f"weights missing terms: {missing}")
        if any(self.weights[t] < 0.0 for t in LOSS_TERMS):
            raise ValueError("weights must be >= 0")
        if self.synthetic_ratio < 1:
            raise ValueError(f"synthetic_ratio must be >= 1, got {self.synthetic_ratio}")


@dataclass(frozen=True)
class StageLossResult:
    total: float
    terms: dict  # weighted per-term contributions, keyed by LOSS_TERMS
    warnings: tuple

    def to_json(self) -> str:
        return json.dumps({"total": self.total,
                           "terms": {t: self.terms[t] for t in LOSS_TERMS},
                           "warnings": list(self.warnings)})


def domain_pattern(n: int, synthetic_ratio: int = 5) -> list[str]:
    """Repeating synthetic/real batch pattern at the given ratio."""
    cycle = ["synthetic"] * synthetic_ratio + ["real"]
    return [cycle[i % len(cycle)] for i in range(n)]


def _stage_masks(stage: str, synthetic: np.ndarray) -> tuple[dict, tuple]:
    """Per-term sample masks and the terms a stage forces to zero."""
    everything = np.ones_like(synthetic, dtype=np.float64)
    syn = synthetic.astype(np.float64)
    real = 1.0 - syn
    if stage == "pretrain":
        # All samples are synthetic by definition; no real targets exist yet.
        masks = {t: everything for t in ("seg", "depth", "heatmap", "pose", "shape")}
        masks["chamfer"] = np.zeros_like(everything)
        forced = ("chamfer",)
    elif stage == "mixed":
        masks = {t: everything for t in ("seg", "depth", "heatmap")}
        masks["pose"] = syn
        masks["shape"] = syn
        masks["chamfer"] = real
        forced = ()
    else:  # finetune: real data only; no synthetic pose/shape ground truth
        masks = {t: everything for t in ("seg", "depth", "heatmap", "chamfer")}
        masks["pose"] = np.zeros_like(everything)
        masks["shape"] = np.zeros_like(everything)
        forced = ("pose", "shape")
    return masks, forced


def stage_loss(spec: StageLossSpec, components, domains) -> StageLossResult:
    """Compose per-sample loss components into one weighted stage total.

    components maps term name to a per-sample value array (scalars broadcast
    over the batch); missing terms count as zero. Each term contributes
    lambda * masked mean, where the mask implements the stage's domain
    indicators: mixed batches restrict pose/shape to synthetic samples and
    chamfer to real ones. Supplying values for a term the stage forces to
    zero is reported in warnings, not an error.
    """
    domains = list(domains)
    if not domains:
        raise ValueError("domains must list at least one sample")
    bad = sorted(set(domains) - set(DOMAINS))
    if bad:
        raise ValueError(f"unknown sample domains: {bad}")
    batch = len(domains)
    unknown = sorted(set(components) - set(LOSS_TERMS))
    if unknown:
        raise ValueError(f"unknown loss terms: {unknown}")

    values = {}
    for term in LOSS_TERMS:
        v = np.broadcast_to(np.asarray(components.get(term, 0.0), dtype=np.float64), (batch,))
        if not np.all(np.isfinite(v)):
            raise ValueError(f"component {term!r} contains non-finite values")
        values[term] = v

    synthetic = np.array([d == "synthetic" for d in domains])
    masks, forced = _stage_masks(spec.stage, synthetic)

    warnings = tuple(f"{term} component supplied but forced to zero in {spec.stage} stage"
                     for term in forced if np.any(values[term] != 0.0))

    terms = {}
    for term in LOSS_TERMS:
        mask = masks[term]
        mass = float(mask.sum())
        mean = float((values[term] * mask).sum() / mass) if mass > 0.0 else 0.0
        terms[term] = spec.weights[term] * mean
    # Correctly rounded total, so the result does not depend on term order.
    return StageLossResult(math.fsum(terms[t] for t in LOSS_TERMS), terms, warnings)


# ---------------------------------------------------------------------------
# Depth augmentation
# ---------------------------------------------------------------------------


def depth_noise(depth, hole_rate: float = 0.0, gaussian_sigma_m: float = 0.0,
                seed: int = 0) -> FloatArray:
    """Sensor-style corruption: random holes plus Gaussian jitter.

    Each valid pixel is zeroed independently with probability hole_rate;
    surviving pixels get zero-mean Gaussian noise (sigma in meters) and are
    clamped at 0. Deterministic given the seed; invalid pixels stay invalid.
    """
    if not 0.0 <= hole_rate < 1.0:
        raise ValueError(f"hole_rate must be in [0, 1), got {hole_rate}")
    if gaussian_sigma_m < 0.0:
        raise ValueError(f"gaussian_sigma_m must be >= 0, got {gaussian_sigma_m}")
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2 or not np.all(np.isfinite(d)) or np.any(d < 0.0):
        raise ValueError("depth must be a 2-D map of finite values >= 0")

    rng = np.random.default_rng(seed)
    holes = rng.random(d.shape) < hole_rate
    noise = rng.normal(0.0, 1.0, d.shape) * gaussian_sigma_m
    valid = d > 0.0
    out = d.copy()
    out[valid & holes] = 0.0
    survivors = valid & ~holes
    out[survivors] = np.maximum(out[survivors] + noise[survivors], 0.0)
    return out
