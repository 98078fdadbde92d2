"""File formats: ASCII PLY clouds, 16-bit PGM depth maps, JSON configs,
and JSON-lines pose records.

PLY files carry x y z and optionally nx ny nz as double-precision ASCII.
Multi-object files mark each object with a header comment
"comment object_index=<i> count=<n>" so per-object boundaries survive the
round trip.

Depth PGM files are binary P5 with maxval 65535 (big-endian samples per the
PGM spec) and a header comment "# scale_mm_per_unit=<f>"; a stored value v
encodes v * scale millimeters, 0 means invalid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .extraction import ExtractedSurface
from .geometry import CameraIntrinsics, SimilarityTransform
from .metrics import PoseRecord

# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def _format_rows(points: np.ndarray, normals: np.ndarray | None) -> list[str]:
    cols = points if normals is None else np.hstack([points, normals])
    return [" ".join(repr(float(v)) for v in row) for row in cols]


def write_surfaces_ply(path, surfaces, with_normals: bool = True) -> None:
    """Write one or more point clouds to an ASCII PLY file.

    surfaces is a sequence of ExtractedSurface or (points, normals) pairs
    (normals may be None, in which case the whole file omits them).
    """
    entries = []
    for item in surfaces:
        if isinstance(item, ExtractedSurface):
            entries.append((item.points, item.normals))
        else:
            pts, nrm = item
            entries.append((np.asarray(pts, dtype=np.float64), None if nrm is None else np.asarray(nrm, dtype=np.float64)))
    if any(n is None for _, n in entries):
        with_normals = False

    total = sum(p.shape[0] for p, _ in entries)
    header = ["ply", "format ascii 1.0"]
    for i, (pts, _) in enumerate(entries):
        header.append(f"comment object_index={i} count={pts.shape[0]}")
    header.append(f"element vertex {total}")
    header += ["property double x", "property double y", "property double z"]
    if with_normals:
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")

    lines = list(header)
    for pts, nrm in entries:
        lines.extend(_format_rows(pts, nrm if with_normals else None))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_cloud_ply(path, points, normals=None) -> None:
    """Single-cloud convenience wrapper around write_surfaces_ply."""
    write_surfaces_ply(path, [(points, normals)], with_normals=normals is not None)


def read_ply(path):
    """Read an ASCII PLY written by this module (or a plain x y z file).

    Returns (points, normals_or_None, object_ranges) where object_ranges is a
    list of (object_index, start, count); files without object comments get a
    single range covering everything.
    """
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"PLY must be ASCII: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic line")

    vertex_count = None
    properties: list[str] = []
    ranges: list[tuple[int, int]] = []  # (object_index, count)
    body_start = None
    saw_format = False
    for ln, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["ascii", "1.0"]:
                raise FormatError(f"unsupported format: {' '.join(tokens[1:])}")
            saw_format = True
        elif tokens[0] == "comment":
            fields = dict(t.split("=", 1) for t in tokens[1:] if "=" in t)
            if "object_index" in fields and "count" in fields:
                ranges.append((int(fields["object_index"]), int(fields["count"])))
        elif tokens[0] == "element":
            if tokens[1] != "vertex":
                raise FormatError(f"unsupported element: {tokens[1]}")
            vertex_count = int(tokens[2])
        elif tokens[0] == "property":
            if len(tokens) != 3 or tokens[1] not in ("float", "double", "float32", "float64"):
                raise FormatError(f"unsupported property: {line.strip()}")
            properties.append(tokens[2])
        elif tokens[0] == "end_header":
            body_start = ln + 1
            break
        else:
            raise FormatError(f"unexpected header line: {line.strip()}")
    if not saw_format or vertex_count is None or body_start is None:
        raise FormatError("incomplete header: need format, element vertex, end_header")
    if properties not in (["x", "y", "z"], ["x", "y", "z", "nx", "ny", "nz"]):
        raise FormatError(f"expected properties x y z [nx ny nz], got {properties}")

    body = [line for line in lines[body_start:] if line.strip()]
    if len(body) != vertex_count:
        raise FormatError(f"vertex count mismatch: header says {vertex_count}, body has {len(body)}")
    if vertex_count:
        try:
            data = np.array([[float(v) for v in line.split()] for line in body], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"non-numeric vertex data: {exc}") from exc
        if data.shape[1] != len(properties):
            raise FormatError(f"row width {data.shape[1]} does not match {len(properties)} properties")
    else:
        data = np.zeros((0, len(properties)))
    points = data[:, :3]
    normals = data[:, 3:6] if len(properties) == 6 else None

    if ranges:
        if sum(c for _, c in ranges) != vertex_count:
            raise FormatError("object_index counts do not sum to the vertex count")
        object_ranges = []
        offset = 0
        for idx, count in ranges:
            object_ranges.append((idx, offset, count))
            offset += count
    else:
        object_ranges = [(0, 0, vertex_count)]
    return points, normals, object_ranges


# ---------------------------------------------------------------------------
# PGM depth maps
# ---------------------------------------------------------------------------


def write_depth_pgm(path, depth_m, scale_mm_per_unit: float = 1.0) -> None:
    """Quantize a depth map in meters to 16-bit PGM.

    Stored value = round(meters * 1000 / scale); values clip at 65535, so
    pick the scale to cover the expected range. Zero stays the invalid code.
    """
    if scale_mm_per_unit <= 0.0:
        raise ValueError(f"scale_mm_per_unit must be > 0, got {scale_mm_per_unit}")
    d = np.asarray(depth_m, dtype=np.float64)
    if d.ndim != 2 or not np.all(np.isfinite(d)) or np.any(d < 0.0):
        raise ValueError("depth must be a 2-D map of finite values >= 0")
    units = np.clip(np.round(d * 1000.0 / scale_mm_per_unit), 0, 65535).astype(">u2")
    h, w = units.shape
    header = f"P5\n# scale_mm_per_unit={scale_mm_per_unit!r}\n{w} {h}\n65535\n"
    Path(path).write_bytes(header.encode("ascii") + units.tobytes())


def read_pgm(path):
    """Low-level binary PGM reader: returns (values, maxval, scale_or_None)."""
    blob = Path(path).read_bytes()
    if blob[:2] != b"P5":
        raise FormatError(f"bad PGM magic: {blob[:2]!r}")
    pos = 2
    scale = None
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise FormatError("truncated PGM header")
        if blob[pos:pos + 1] == b"#":
            end = blob.find(b"\n", pos)
            if end < 0:
                raise FormatError("unterminated PGM comment")
            comment = blob[pos + 1:end].decode("ascii", "replace").strip()
            if comment.startswith("scale_mm_per_unit="):
                try:
                    scale = float(comment.split("=", 1)[1])
                except ValueError as exc:
                    raise FormatError(f"bad scale_mm_per_unit comment: {comment!r}") from exc
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise FormatError(f"bad PGM header token: {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval < 1 or maxval > 65535:
        raise FormatError(f"PGM maxval out of range: {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    expected = width * height * np.dtype(dtype).itemsize
    body = blob[pos:]
    if len(body) != expected:
        raise FormatError(f"PGM body size {len(body)} does not match {width}x{height} ({expected} bytes)")
    values = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return values, maxval, scale


def read_depth_pgm(path):
    """Read a depth PGM back to meters: returns (depth_m, scale_mm_per_unit).

    Files without the scale comment default to scale 1 (value = millimeters).
    """
    values, maxval, scale = read_pgm(path)
    if maxval != 65535:
        raise FormatError(f"depth PGM needs maxval 65535, got {maxval}")
    if scale is None:
        scale = 1.0
    return values.astype(np.float64) * (scale / 1000.0), scale


# ---------------------------------------------------------------------------
# JSON configs
# ---------------------------------------------------------------------------


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def read_intrinsics(path) -> CameraIntrinsics:
    doc = _load_json(path)
    try:
        return CameraIntrinsics.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad intrinsics: {exc}") from exc


def write_intrinsics(path, intrinsics: CameraIntrinsics) -> None:
    Path(path).write_text(json.dumps(intrinsics.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_transform(path) -> SimilarityTransform:
    doc = _load_json(path)
    try:
        return SimilarityTransform.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad transform: {exc}") from exc


def write_transform(path, transform: SimilarityTransform) -> None:
    Path(path).write_text(json.dumps(transform.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_matrix3(path) -> np.ndarray:
    """3x3 matrix from JSON: either a bare nested array or {"matrix": [[..]]}."""
    doc = _load_json(path)
    if isinstance(doc, dict):
        doc = doc.get("matrix")
    arr = np.asarray(doc, dtype=np.float64)
    if arr.shape != (3, 3):
        raise FormatError(f"{path}: expected a 3x3 matrix, got shape {arr.shape}")
    return arr


def read_latent(path) -> np.ndarray:
    """Latent code from JSON: a bare array or {"values": [..]}."""
    doc = _load_json(path)
    if isinstance(doc, dict):
        doc = doc.get("values")
    arr = np.asarray(doc, dtype=np.float64).reshape(-1)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: latent must be a non-empty finite vector")
    return arr


def write_latent(path, values) -> None:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    Path(path).write_text(json.dumps({"values": arr.tolist()}) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# JSON-lines pose records
# ---------------------------------------------------------------------------


def read_pose_records(path) -> list[PoseRecord]:
    """One PoseRecord per non-empty line; score defaults to 1.0 (ground truth)."""
    records = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(PoseRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{ln}: bad pose record: {exc}") from exc
    return records


def write_pose_records(path, records) -> None:
    lines = [json.dumps(r.to_dict()) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
