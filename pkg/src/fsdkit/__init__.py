"""SDF surface extraction, pose geometry, losses, metrics, and benchmarking.

Submodules load lazily (PEP 562): importing the package does not pull in
numpy, so the CLI can still pin BLAS thread pools via environment variables
before any numeric code runs.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    # fields
    "SphereField": "fields",
    "BoxField": "fields",
    "TorusField": "fields",
    "MlpSdfDecoder": "fields",
    "gen_random_decoder": "fields",
    "eval_field": "fields",
    "eval_gradient": "fields",
    # weights_io
    "save_weights": "weights_io",
    "load_weights": "weights_io",
    "decoder_to_json_dict": "weights_io",
    "decoder_from_json_dict": "weights_io",
    # extraction
    "ExtractionConfig": "extraction",
    "EvalCounters": "extraction",
    "VoxelFrontier": "extraction",
    "ExtractedSurface": "extraction",
    "edge_length": "extraction",
    "init_frontier": "extraction",
    "refine_frontier": "extraction",
    "prune_frontier": "extraction",
    "project_to_surface": "extraction",
    "extract_batched": "extraction",
    "dense_grid_extract": "extraction",
    "DenseExtraction": "extraction",
    # geometry
    "SimilarityTransform": "geometry",
    "CameraIntrinsics": "geometry",
    "DetectedInstance": "geometry",
    "svd_orthogonalize": "geometry",
    "rotation_about_axis": "geometry",
    "decode_pose_vector": "geometry",
    "encode_pose_vector": "geometry",
    "apply_transform": "geometry",
    "compose_transforms": "geometry",
    "backproject_depth": "geometry",
    "project_to_pixels": "geometry",
    "render_heatmap": "geometry",
    "heatmap_sigma_for_diagonal": "geometry",
    "extract_peaks": "geometry",
    "query_map": "geometry",
    "detect_instances": "geometry",
    # losses
    "ChamferConfig": "losses",
    "ChamferResult": "losses",
    "chamfer_thresholded": "losses",
    "heatmap_l2": "losses",
    "weighted_l1": "losses",
    "StageLossSpec": "losses",
    "StageLossResult": "losses",
    "stage_loss": "losses",
    "domain_pattern": "losses",
    "depth_noise": "losses",
    "DEFAULT_WEIGHTS": "losses",
    # metrics
    "rotation_error_deg": "metrics",
    "translation_error_cm": "metrics",
    "OrientedBox3": "metrics",
    "iou3d": "metrics",
    "PoseRecord": "metrics",
    "average_precision": "metrics",
    "make_iou_matcher": "metrics",
    "make_pose_matcher": "metrics",
    "evaluate_suite": "metrics",
    # fileio
    "write_surfaces_ply": "fileio",
    "write_cloud_ply": "fileio",
    "read_ply": "fileio",
    "write_depth_pgm": "fileio",
    "read_pgm": "fileio",
    "read_depth_pgm": "fileio",
    "read_intrinsics": "fileio",
    "write_intrinsics": "fileio",
    "read_transform": "fileio",
    "write_transform": "fileio",
    "read_matrix3": "fileio",
    "read_latent": "fileio",
    "write_latent": "fileio",
    "read_pose_records": "fileio",
    "write_pose_records": "fileio",
    # bench
    "BenchConfig": "bench",
    "BenchmarkReport": "bench",
    "MethodStats": "bench",
    "run_benchmark": "bench",
    "calibrated_decoder": "bench",
    "select_latents": "bench",
    "make_bench_fields": "bench",
    "report_to_json": "bench",
    "report_from_json": "bench",
    "report_to_csv": "bench",
    # plots
    "save_bench_figure": "plots",
    "save_metrics_figure": "plots",
    # errors
    "FormatError": "errors",
    "ComputationError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module_name = _EXPORTS.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(import_module(f".{module_name}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
