"""FSDW decoder weight files: binary v1 plus a JSON form for hand-written nets.

Binary layout (little-endian):
    magic   4 bytes  b"FSDW"
    u32     version (1)
    u32     depth
    u32     latent_dim
    u32     hidden_dim
    u8      output_activation (0 = none, 1 = tanh)
    per layer, in order:
        u32 rows, u32 cols
        rows*cols float32, row-major weights
        rows float32 biases

The JSON form mirrors the same fields with nested number arrays:
    {"magic": "FSDW", "version": 1, "depth": .., "latent_dim": ..,
     "hidden_dim": .., "output_activation": "tanh",
     "layers": [{"rows": .., "cols": .., "weights": [[..]], "biases": [..]}, ..]}

Round trips are bit-exact: weights are float32 in memory and on disk.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import MlpSdfDecoder

MAGIC = b"FSDW"
_ACTIVATION_CODES = {"none": 0, "tanh": 1}
_ACTIVATION_NAMES = {0: "none", 1: "tanh"}


def save_weights(decoder: MlpSdfDecoder, destination=None) -> bytes:
    """Serialize a decoder to FSDW v1 bytes; optionally write to a path or file.

    Returns the byte stream either way. Decoders with skip connections have no
    v1 representation and are rejected.
    """
    if decoder.skip_connections:
        raise ValueError("skip-connection decoders are not representable in FSDW v1")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IIII", 1, decoder.depth, decoder.latent_dim, decoder.hidden_dim))
    out.write(struct.pack("<B", _ACTIVATION_CODES[decoder.output_activation]))
    for w, b in zip(decoder.weights, decoder.biases):
        rows, cols = w.shape
        out.write(struct.pack("<II", rows, cols))
        out.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        out.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    blob = out.getvalue()
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(blob)
        else:
            Path(destination).write_bytes(blob)
    return blob


def load_weights(source) -> MlpSdfDecoder:
    """Load a decoder from a path, binary file object, or bytes.

    Accepts both the binary FSDW stream and the JSON form; the content is
    sniffed, not the file name.
    """
    blob = _read_source(source)
    if blob[:1] == b"{":
        try:
            doc = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"weight JSON is not parseable: {exc}") from exc
        return decoder_from_json_dict(doc)
    return _load_binary(blob)


def _read_source(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_bytes()


class _Cursor:
    """Bounds-checked reader over the binary blob."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated stream while reading {what} "
                              f"(need {n} bytes at offset {self.pos}, have {len(self.blob) - self.pos})")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return struct.unpack("<B", self.take(1, what))[0]


def _load_binary(blob: bytes) -> MlpSdfDecoder:
    cur = _Cursor(blob)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
    version = cur.u32("version")
    if version != 1:
        raise FormatError(f"unsupported version: {version}")
    depth = cur.u32("depth")
    latent_dim = cur.u32("latent_dim")
    hidden_dim = cur.u32("hidden_dim")
    act_code = cur.u8("output_activation")
    if act_code not in _ACTIVATION_NAMES:
        raise FormatError(f"unknown output_activation code: {act_code}")
    if depth < 1:
        raise FormatError(f"depth must be >= 1, got {depth}")

    weights, biases = [], []
    for i in range(depth):
        rows = cur.u32(f"layer {i} rows")
        cols = cur.u32(f"layer {i} cols")
        if rows < 1 or cols < 1:
            raise FormatError(f"layer {i}: rows/cols must be >= 1, got {rows}x{cols}")
        wbytes = cur.take(4 * rows * cols, f"layer {i} weights")
        bbytes = cur.take(4 * rows, f"layer {i} biases")
        weights.append(np.frombuffer(wbytes, dtype="<f4").reshape(rows, cols))
        biases.append(np.frombuffer(bbytes, dtype="<f4"))
    if cur.pos != len(blob):
        raise FormatError(f"trailing data: {len(blob) - cur.pos} unexpected bytes after last layer")
    return _build(weights, biases, depth, latent_dim, hidden_dim, _ACTIVATION_NAMES[act_code])


def decoder_from_json_dict(doc: dict) -> MlpSdfDecoder:
    """Build a decoder from the JSON form (see module docstring)."""
    if not isinstance(doc, dict):
        raise FormatError("weight JSON must be an object")
    if doc.get("magic", "FSDW") != "FSDW":
        raise FormatError(f"bad magic: expected 'FSDW', got {doc.get('magic')!r}")
    if doc.get("version", 1) != 1:
        raise FormatError(f"unsupported version: {doc.get('version')}")
    try:
        depth = int(doc["depth"])
        latent_dim = int(doc["latent_dim"])
        hidden_dim = int(doc["hidden_dim"])
        layers = doc["layers"]
    except KeyError as exc:
        raise FormatError(f"missing field: {exc.args[0]}") from exc
    act = doc.get("output_activation", "tanh")
    if isinstance(act, int):
        if act not in _ACTIVATION_NAMES:
            raise FormatError(f"unknown output_activation code: {act}")
        act = _ACTIVATION_NAMES[act]
    if act not in _ACTIVATION_CODES:
        raise FormatError(f"unknown output_activation: {act!r}")
    if not isinstance(layers, list) or len(layers) != depth:
        raise FormatError(f"layers: expected a list of length depth={depth}, "
                          f"got {len(layers) if isinstance(layers, list) else type(layers).__name__}")

    weights, biases = [], []
    for i, layer in enumerate(layers):
        try:
            w = np.asarray(layer["weights"], dtype=np.float32)
            b = np.asarray(layer["biases"], dtype=np.float32)
        except KeyError as exc:
            raise FormatError(f"layer {i}: missing field {exc.args[0]}") from exc
        except (TypeError, ValueError) as exc:
            raise FormatError(f"layer {i}: non-numeric or ragged arrays: {exc}") from exc
        if w.ndim != 2 or b.ndim != 1:
            raise FormatError(f"layer {i}: weights must be 2-D and biases 1-D, got {w.shape} and {b.shape}")
        rows = int(layer.get("rows", w.shape[0]))
        cols = int(layer.get("cols", w.shape[1]))
        if (rows, cols) != w.shape:
            raise FormatError(f"layer {i}: declared rows/cols {rows}x{cols} do not match weights {w.shape}")
        weights.append(w)
        biases.append(b)
    return _build(weights, biases, depth, latent_dim, hidden_dim, act)


def decoder_to_json_dict(decoder: MlpSdfDecoder) -> dict:
    """JSON form of a decoder (float32 values as Python floats)."""
    if decoder.skip_connections:
        raise ValueError("skip-connection decoders are not representable in FSDW v1")
    return {
        "magic": "FSDW",
        "version": 1,
        "depth": decoder.depth,
        "latent_dim": decoder.latent_dim,
        "hidden_dim": decoder.hidden_dim,
        "output_activation": decoder.output_activation,
        "layers": [
            {"rows": int(w.shape[0]), "cols": int(w.shape[1]),
             "weights": [[float(x) for x in row] for row in w],
             "biases": [float(x) for x in b]}
            for w, b in zip(decoder.weights, decoder.biases)
        ],
    }


def _build(weights, biases, depth, latent_dim, hidden_dim, activation) -> MlpSdfDecoder:
    """Construct the decoder and translate shape complaints into FormatErrors."""
    declared_hidden = weights[0].shape[0] if depth > 1 else 0
    if hidden_dim != declared_hidden:
        raise FormatError(f"hidden_dim: header says {hidden_dim}, layer 0 has {declared_hidden} rows")
    try:
        return MlpSdfDecoder(weights, biases, latent_dim, activation)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
