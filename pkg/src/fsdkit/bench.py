"""Shape-extraction timing harness: dense grid vs per-object octree vs
batched octree on identical fields.

Only relative numbers are meaningful; absolute wall times depend entirely on
the machine. Before any timing the harness verifies that the octree variants
produce bit-identical surfaces (and that octree survivor cells are a subset
of the dense kept cells for analytic fields); benchmarking an incorrect
implementation is meaningless.

The seeded_decoder field source derives everything from the config seed: a
random MLP decoder whose final layer is affinely recalibrated so the field
has a well-scaled zero crossing inside the cube (a raw random init decays to
a near-constant field that prunes to nothing), plus per-object latents
rejection-sampled to give non-trivial surfaces.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ComputationError
from .extraction import (EvalCounters, ExtractionConfig, dense_grid_extract,
                         extract_batched, init_frontier, prune_frontier,
                         refine_frontier)
from .fields import BoxField, MlpSdfDecoder, SphereField, TorusField, gen_random_decoder

METHOD_ORDER = ("dense", "octree_sequential", "octree_batched")

FIELD_SOURCES = ("analytic_mix", "seeded_decoder")

_ANALYTIC_MIX = (
    lambda: SphereField(0.5),
    lambda: BoxField((0.4, 0.3, 0.2)),
    lambda: TorusField(0.5, 0.15),
    lambda: SphereField(0.35),
    lambda: BoxField((0.3, 0.45, 0.25)),
    lambda: TorusField(0.4, 0.12),
    lambda: SphereField(0.6),
    lambda: BoxField((0.5, 0.2, 0.35)),
)


@dataclass(frozen=True)
class BenchConfig:
    num_objects: int = 8
    lod_end: int = 6
    dense_resolution: int = 64
    repetitions: int = 20
    warmup: int = 3
    field_source: str = "seeded_decoder"
    seed: int = 0
    # Decoder size for seeded_decoder runs; modest defaults keep CPU runs fast.
    latent_dim: int = 16
    hidden_dim: int = 32
    depth: int = 4
    prune_factor: float = 1.0

    def __post_init__(self):
        if self.num_objects < 1:
            raise ValueError(f"num_objects must be >= 1, got {self.num_objects}")
        if self.repetitions < 3:
            raise ValueError(f"repetitions must be >= 3, got {self.repetitions}")
        if self.warmup < 0:
            raise ValueError(f"warmup must be >= 0, got {self.warmup}")
        if self.field_source not in FIELD_SOURCES:
            raise ValueError(f"field_source must be one of {FIELD_SOURCES}, got {self.field_source!r}")
        if not 1 <= self.lod_end <= 12:
            raise ValueError(f"lod_end must be in [1, 12], got {self.lod_end}")
        if self.dense_resolution < 2:
            raise ValueError(f"dense_resolution must be >= 2, got {self.dense_resolution}")
        if min(self.latent_dim, self.hidden_dim, self.depth) < 1:
            raise ValueError("decoder dims must be >= 1")

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(lod_start=1, lod_end=self.lod_end, prune_factor=self.prune_factor)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "num_objects", "lod_end", "dense_resolution", "repetitions", "warmup",
            "field_source", "seed", "latent_dim", "hidden_dim", "depth", "prune_factor")}

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchConfig":
        known = {k: doc[k] for k in cls().to_dict() if k in doc}
        unknown = sorted(set(doc) - set(cls().to_dict()))
        if unknown:
            raise ValueError(f"unknown benchmark config keys: {unknown}")
        return cls(**known)


def calibrated_decoder(seed: int, latent_dim: int = 16, hidden_dim: int = 32,
                       depth: int = 4, target_spread: float = 0.35) -> MlpSdfDecoder:
    """Seeded random decoder rescaled to behave like a shape field.

    The final layer is remapped f -> alpha * (f - median) with alpha chosen
    so the median absolute deviation over a coarse probe grid (pooled across
    probe latents) is target_spread. This keeps field magnitudes commensurate
    with cell edges so octree pruning has something to do.
    """
    dec = gen_random_decoder(seed, latent_dim, hidden_dim, depth, output_activation="none")
    rng = np.random.default_rng((seed, 1))
    axis = np.linspace(-1.0, 1.0, 9)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    pooled = np.concatenate([dec.evaluate(rng.standard_normal(latent_dim), grid)
                             for _ in range(16)])
    med = float(np.median(pooled))
    mad = float(np.median(np.abs(pooled - med)))
    if mad < 1e-12:
        mad = 1e-12
    alpha = target_spread / mad
    weights = list(dec.weights)
    biases = list(dec.biases)
    weights[-1] = (alpha * weights[-1].astype(np.float64)).astype(np.float32)
    biases[-1] = (alpha * (biases[-1].astype(np.float64) - med)).astype(np.float32)
    return MlpSdfDecoder(weights, biases, latent_dim, output_activation="none")


def select_latents(decoder: MlpSdfDecoder, count: int, seed: int,
                   probe_lod: int = 3, keep_range: tuple[float, float] = (0.02, 0.6)) -> list[np.ndarray]:
    """Rejection-sample latents whose fields carve non-trivial octrees.

    A candidate passes when its LoD-probe_lod survivor fraction lies inside
    keep_range and the probe values change sign, i.e. the zero level set is
    inside the cube.
    """
    rng = np.random.default_rng((seed, 2))
    cfg = ExtractionConfig(lod_start=1, lod_end=probe_lod)
    total_cells = (2 ** probe_lod) ** 3
    accepted: list[np.ndarray] = []
    for _ in range(64 * count):
        if len(accepted) == count:
            break
        z = rng.standard_normal(decoder.latent_dim)
        frontier = init_frontier(1, 1)
        for _level in range(1, probe_lod):
            frontier = refine_frontier(frontier, [(decoder, z)], cfg)
        frontier = prune_frontier(frontier, [(decoder, z)], cfg)
        if frontier.num_entries == 0:
            continue
        values = decoder.evaluate(z, frontier.centers())
        if values.min() >= 0.0 or values.max() <= 0.0:
            continue
        fraction = frontier.num_entries / total_cells
        if keep_range[0] <= fraction <= keep_range[1]:
            accepted.append(z)
    if len(accepted) < count:
        raise ComputationError(
            f"could only calibrate {len(accepted)}/{count} benchmark latents; "
            f"widen keep_range or change the seed")
    return accepted


def make_bench_fields(cfg: BenchConfig) -> list:
    """Fields for one benchmark run: analytic primitives or a shared
    calibrated decoder with per-object latents."""
    if cfg.field_source == "analytic_mix":
        return [_ANALYTIC_MIX[i % len(_ANALYTIC_MIX)]() for i in range(cfg.num_objects)]
    decoder = calibrated_decoder(cfg.seed, cfg.latent_dim, cfg.hidden_dim, cfg.depth)
    latents = select_latents(decoder, cfg.num_objects, cfg.seed)
    return [(decoder, z) for z in latents]


@dataclass(frozen=True)
class MethodStats:
    median_s: float
    min_s: float
    max_s: float
    evals: int
    points: int

    def to_dict(self) -> dict:
        return {"median_s": self.median_s, "min_s": self.min_s, "max_s": self.max_s,
                "evals": self.evals, "points": self.points}


@dataclass(frozen=True)
class BenchmarkReport:
    methods: dict = dataclass_field(default_factory=dict)  # name -> MethodStats
    speedups: dict = dataclass_field(default_factory=dict)
    environment: dict = dataclass_field(default_factory=dict)

    def validate(self):
        if not self.methods:
            raise ValueError("report has no methods")
        for name, stats in self.methods.items():
            if stats.median_s < stats.min_s or stats.max_s < stats.median_s:
                raise ValueError(f"{name}: median/min/max ordering violated")
            if stats.points > 0 and stats.evals <= 0:
                raise ValueError(f"{name}: non-empty surface with no evaluations counted")


def _cell_key(cells: np.ndarray, level: int) -> np.ndarray:
    side = np.int64(2 ** level)
    return (cells[:, 0] * side + cells[:, 1]) * side + cells[:, 2]


def _verify_surfaces(fields, ext_cfg: ExtractionConfig, dense_resolution: int):
    """Correctness gate; raises ComputationError with a diagnostic."""
    batched, frontier = extract_batched(fields, ext_cfg, with_frontier=True)
    for i, fld in enumerate(fields):
        single = extract_batched([fld], ext_cfg)[0]
        same = (np.array_equal(batched[i].points, single.points)
                and np.array_equal(batched[i].normals, single.normals)
                and np.array_equal(batched[i].residuals, single.residuals))
        if not same:
            raise ComputationError(
                f"object {i}: batched extraction differs from single-object run "
                f"({batched[i].count} vs {single.count} points)")
    if dense_resolution == 2 ** ext_cfg.lod_end:
        for i, fld in enumerate(fields):
            if not isinstance(fld, (SphereField, BoxField, TorusField)):
                continue  # no Lipschitz guarantee for learned fields
            dense = dense_grid_extract(fld, dense_resolution, ext_cfg)
            mine = frontier.cells[frontier.object_index == i]
            missing = np.setdiff1d(_cell_key(mine, ext_cfg.lod_end),
                                   _cell_key(dense.cells, ext_cfg.lod_end))
            if missing.size:
                raise ComputationError(
                    f"object {i}: {missing.size} octree cells missing from the dense kept set")
    return batched


def _time_runs(fn, repetitions: int, warmup: int) -> list[float]:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return times


def _environment_note() -> dict:
    blas = None
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        value = os.environ.get(var)
        if value and value.isdigit():
            blas = int(value)
            break
    cpu = os.cpu_count() or 1
    return {"cpu_count": cpu, "threads": blas if blas is not None else cpu,
            "timer": "perf_counter"}


def run_benchmark(cfg: BenchConfig | None = None) -> BenchmarkReport:
    """Benchmark the three extraction methods on identical fields.

    Surfaces are verified consistent before any timing; timings exclude
    verification and counter instrumentation.
    """
    cfg = cfg or BenchConfig()
    fields = make_bench_fields(cfg)
    ext_cfg = cfg.extraction_config()

    batched_surfaces = _verify_surfaces(fields, ext_cfg, cfg.dense_resolution)

    def run_dense():
        return [dense_grid_extract(fld, cfg.dense_resolution, ext_cfg) for fld in fields]

    def run_sequential():
        return [extract_batched([fld], ext_cfg)[0] for fld in fields]

    def run_batched():
        return extract_batched(fields, ext_cfg)

    # Instrumented (untimed) passes for evaluation counts and point totals.
    dense_counters, seq_counters, batched_counters = EvalCounters(), EvalCounters(), EvalCounters()
    dense_points = 0
    for fld in fields:
        dense = dense_grid_extract(fld, cfg.dense_resolution, ext_cfg, counters=dense_counters)
        dense_points += dense.surface.count
    for fld in fields:
        extract_batched([fld], ext_cfg, counters=seq_counters)
    extract_batched(fields, ext_cfg, counters=batched_counters)
    octree_points = sum(s.count for s in batched_surfaces)

    runs = {
        "dense": (run_dense, dense_counters, dense_points),
        "octree_sequential": (run_sequential, seq_counters, octree_points),
        "octree_batched": (run_batched, batched_counters, octree_points),
    }
    methods = {}
    for name in METHOD_ORDER:
        fn, counters, points = runs[name]
        times = _time_runs(fn, cfg.repetitions, cfg.warmup)
        methods[name] = MethodStats(float(np.median(times)), float(np.min(times)),
                                    float(np.max(times)), counters.total_points, points)

    med = {name: methods[name].median_s for name in METHOD_ORDER}
    speedups = {
        "dense_over_batched": med["dense"] / med["octree_batched"],
        "sequential_over_batched": med["octree_sequential"] / med["octree_batched"],
        "dense_over_sequential": med["dense"] / med["octree_sequential"],
    }
    report = BenchmarkReport(methods, speedups, _environment_note())
    report.validate()
    return report


def report_to_json(report: BenchmarkReport) -> str:
    """Stable-key-order JSON; round-trips through report_from_json."""
    report.validate()
    doc = {
        "methods": {name: report.methods[name].to_dict()
                    for name in METHOD_ORDER if name in report.methods},
        "speedups": dict(report.speedups),
        "environment": dict(report.environment),
    }
    # Keep any non-standard method names too, after the canonical ones.
    for name in report.methods:
        if name not in doc["methods"]:
            doc["methods"][name] = report.methods[name].to_dict()
    return json.dumps(doc, indent=2)


def report_from_json(text: str) -> BenchmarkReport:
    doc = json.loads(text)
    methods = {name: MethodStats(**stats) for name, stats in doc["methods"].items()}
    report = BenchmarkReport(methods, dict(doc.get("speedups", {})),
                             dict(doc.get("environment", {})))
    report.validate()
    return report


def report_to_csv(report: BenchmarkReport) -> str:
    report.validate()
    lines = ["method,median_s,min_s,max_s,evals,points"]
    for name in METHOD_ORDER:
        if name not in report.methods:
            continue
        s = report.methods[name]
        lines.append(f"{name},{s.median_s!r},{s.min_s!r},{s.max_s!r},{s.evals},{s.points}")
    return "\n".join(lines) + "\n"
