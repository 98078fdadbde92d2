"""Scalar signed-distance fields over the canonical cube [-1, 1]^3.

Two kinds of field live here: analytic primitives (sphere, box, torus) whose
values and gradients are closed-form and exact, and latent-conditioned MLP
decoders f(q; z). Analytic fields double as exact oracles for everything the
decoders are used for downstream.

Conventions:
    * Points are float64 arrays of shape (N, 3) in the canonical frame.
    * Values are signed distances in normalized units: negative inside,
      zero on the surface.
    * Decoder weights are stored float32 (the file-format dtype) and
      evaluated in float64.

Determinism: decoder evaluation is bit-reproducible and independent of how a
batch is composed. Every matmul is issued at a fixed (CHUNK_ROWS, width)
shape, padding the tail chunk with zero rows, so the BLAS kernel selection
never depends on batch size and per-row results never depend on the rows
around them.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

# Rows per decoder matmul. All chunks are padded to exactly this many rows;
# see the module docstring for why the shape must be fixed.
CHUNK_ROWS = 2048


def as_points(points) -> FloatArray:
    """Validate and convert an (N, 3) batch of points to float64."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    return np.ascontiguousarray(pts)


def _as_latent(latent, dim: int) -> FloatArray:
    z = np.asarray(latent, dtype=np.float64).reshape(-1)
    if z.shape[0] != dim:
        raise ValueError(f"latent length {z.shape[0]} does not match decoder latent_dim {dim}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent contains non-finite values")
    return z


# ---------------------------------------------------------------------------
# Analytic primitives
# ---------------------------------------------------------------------------


class AnalyticField:
    """Base class for closed-form signed distance fields.

    Subclasses implement exact values and exact gradients; both satisfy the
    eikonal property ||grad f|| = 1 away from the medial/singular set.
    """

    def evaluate(self, points) -> FloatArray:
        raise NotImplementedError

    def gradient(self, points) -> FloatArray:
        raise NotImplementedError

    def evaluate_with_gradient(self, points) -> tuple[FloatArray, FloatArray]:
        return self.evaluate(points), self.gradient(points)


class SphereField(AnalyticField):
    """Sphere of given radius centered at the origin."""

    def __init__(self, radius: float):
        if not 0.0 < radius <= 1.0:
            raise ValueError(f"sphere radius must be in (0, 1], got {radius}")
        self.radius = float(radius)

    def __repr__(self):
        return f"SphereField(radius={self.radius})"

    def evaluate(self, points) -> FloatArray:
        pts = as_points(points)
        return np.linalg.norm(pts, axis=1) - self.radius

    def gradient(self, points) -> FloatArray:
        pts = as_points(points)
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        # The origin is the medial point; leave a zero gradient there.
        return np.divide(pts, norms, out=np.zeros_like(pts), where=norms > 0.0)


class BoxField(AnalyticField):
    """Axis-aligned box with the given half extents, centered at the origin."""

    def __init__(self, half_extents):
        he = np.asarray(half_extents, dtype=np.float64).reshape(-1)
        if he.shape != (3,):
            raise ValueError("box half_extents must be a 3-vector")
        if not np.all((he > 0.0) & (he <= 1.0)):
            raise ValueError(f"box half extents must be in (0, 1], got {he}")
        self.half_extents = he

    def __repr__(self):
        return f"BoxField(half_extents={tuple(self.half_extents)})"

    def evaluate(self, points) -> FloatArray:
        pts = as_points(points)
        q = np.abs(pts) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def gradient(self, points) -> FloatArray:
        pts = as_points(points)
        q = np.abs(pts) - self.half_extents
        qpos = np.maximum(q, 0.0)
        out_norm = np.linalg.norm(qpos, axis=1, keepdims=True)
        sign = np.where(pts >= 0.0, 1.0, -1.0)
        grad = np.zeros_like(pts)

        outside = out_norm[:, 0] > 0.0
        if np.any(outside):
            grad[outside] = sign[outside] * qpos[outside] / out_norm[outside]
        inside = ~outside
        if np.any(inside):
            # Inside, the nearest face is along the largest (least negative)
            # component of q; ties sit on the medial set and argmax picks the
            # first axis deterministically.
            axis = np.argmax(q[inside], axis=1)
            rows = np.flatnonzero(inside)
            grad[rows, axis] = sign[rows, axis]
        return grad


class TorusField(AnalyticField):
    """Torus around the y axis: ring of major_radius in the xz plane,
    tube of minor_radius."""

    def __init__(self, major_radius: float, minor_radius: float):
        if major_radius <= 0.0 or minor_radius <= 0.0:
            raise ValueError("torus radii must be positive")
        if major_radius + minor_radius > 1.0:
            raise ValueError("torus must fit inside the canonical cube: R + r <= 1")
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def __repr__(self):
        return f"TorusField(major_radius={self.major_radius}, minor_radius={self.minor_radius})"

    def evaluate(self, points) -> FloatArray:
        pts = as_points(points)
        ring = np.hypot(pts[:, 0], pts[:, 2]) - self.major_radius
        return np.hypot(ring, pts[:, 1]) - self.minor_radius

    def gradient(self, points) -> FloatArray:
        pts = as_points(points)
        rho = np.hypot(pts[:, 0], pts[:, 2])
        ring = rho - self.major_radius
        tube = np.hypot(ring, pts[:, 1])
        grad = np.zeros_like(pts)
        ok = (rho > 0.0) & (tube > 0.0)
        # d tube / d rho, mapped back onto the xz components of p.
        radial = np.zeros_like(rho)
        radial[ok] = ring[ok] / (tube[ok] * rho[ok])
        grad[:, 0] = radial * pts[:, 0]
        grad[:, 2] = radial * pts[:, 2]
        grad[ok, 1] = pts[ok, 1] / tube[ok]
        return grad


# ---------------------------------------------------------------------------
# MLP decoder
# ---------------------------------------------------------------------------


class MlpSdfDecoder:
    """Latent-conditioned scalar field f(q; z) given by a fully connected MLP.

    The input is the latent vector concatenated with the query point, a
    (latent_dim + 3)-vector. Hidden layers use rectifier activations; the
    output activation is ``"tanh"`` or ``"none"``. With ``skip_connections``
    the input vector is concatenated onto the middle layer's input (requires
    depth >= 3); the flag is off by default.

    Parameters
    ----------
    weights : list of (out, in) arrays, float32
    biases : list of (out,) arrays, float32
    latent_dim : latent code length; layer 0 must accept latent_dim + 3 inputs
    """

    def __init__(self, weights, biases, latent_dim: int,
                 output_activation: str = "tanh", skip_connections: bool = False):
        if output_activation not in ("none", "tanh"):
            raise ValueError(f"output_activation must be 'none' or 'tanh', got {output_activation!r}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be equal-length non-empty lists")
        self.latent_dim = int(latent_dim)
        self.depth = len(weights)
        self.output_activation = output_activation
        self.skip_connections = bool(skip_connections)
        if self.skip_connections and self.depth < 3:
            raise ValueError("skip_connections requires depth >= 3")

        # Copy, then freeze: the decoder owns immutable weight storage.
        self.weights = [np.array(w, dtype=np.float32, order="C") for w in weights]
        self.biases = [np.array(b, dtype=np.float32, order="C") for b in biases]
        for arr in self.weights + self.biases:
            arr.flags.writeable = False
            if not np.all(np.isfinite(arr)):
                raise ValueError("decoder weights contain non-finite values")

        self.input_dim = self.latent_dim + 3
        self.hidden_dim = int(self.weights[0].shape[0]) if self.depth > 1 else 0
        self._validate_shapes()
        # float64 copies used by every evaluation path.
        self._w64 = [w.astype(np.float64) for w in self.weights]
        self._b64 = [b.astype(np.float64) for b in self.biases]

    # Index of the layer whose input gets the skip concatenation.
    @property
    def _skip_at(self) -> int | None:
        return self.depth // 2 if self.skip_connections else None

    def _validate_shapes(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight/bias shapes inconsistent: {w.shape} vs {b.shape}")
            expect_in = self._layer_input_width(i)
            if w.shape[1] != expect_in:
                raise ValueError(f"layer {i}: expected input width {expect_in}, got {w.shape[1]}")
            expect_out = 1 if i == self.depth - 1 else self.hidden_dim
            if w.shape[0] != expect_out:
                raise ValueError(f"layer {i}: expected output width {expect_out}, got {w.shape[0]}")

    def _layer_input_width(self, i: int) -> int:
        if i == 0:
            return self.input_dim
        width = self.hidden_dim
        if self._skip_at is not None and i == self._skip_at:
            width += self.input_dim
        return width

    def __repr__(self):
        return (f"MlpSdfDecoder(depth={self.depth}, latent_dim={self.latent_dim}, "
                f"hidden_dim={self.hidden_dim}, output_activation={self.output_activation!r})")

    # -- evaluation core ----------------------------------------------------

    def _forward_chunk(self, x: FloatArray, want_grad: bool):
        """Run one fixed-shape chunk. x has exactly (CHUNK_ROWS, input_dim)."""
        skip_at = self._skip_at
        pre_acts: list[FloatArray] = []
        h = x
        for i in range(self.depth):
            inp = np.concatenate([h, x], axis=1) if i == skip_at else h
            z = inp @ self._w64[i].T + self._b64[i]
            if i < self.depth - 1:
                if want_grad:
                    pre_acts.append(z)
                h = np.maximum(z, 0.0)
            else:
                h = z
        raw = h[:, 0]
        values = np.tanh(raw) if self.output_activation == "tanh" else raw

        if not want_grad:
            return values, None

        if self.output_activation == "tanh":
            dout = 1.0 - values * values
        else:
            dout = np.ones_like(raw)
        # Backpropagate d f / d input through the fixed-shape chunk.
        g = dout[:, None] * self._w64[-1]
        gx_skip = None
        for i in range(self.depth - 2, -1, -1):
            if skip_at is not None and i + 1 == skip_at:
                gx_skip = g[:, self.hidden_dim:]
                g = g[:, : self.hidden_dim]
            g = g * (pre_acts[i] > 0.0)
            g = g @ self._w64[i]
        if gx_skip is not None:
            g = g + gx_skip
        return values, g[:, self.latent_dim:]

    def _run(self, latent_rows: FloatArray, pts: FloatArray, want_grad: bool):
        """Chunked evaluation core. latent_rows is (N, latent_dim), row-paired
        with pts; both already validated."""
        n = pts.shape[0]
        values = np.empty(n, dtype=np.float64)
        grads = np.empty((n, 3), dtype=np.float64) if want_grad else None
        x_chunk = np.zeros((CHUNK_ROWS, self.input_dim), dtype=np.float64)
        for start in range(0, n, CHUNK_ROWS):
            stop = min(start + CHUNK_ROWS, n)
            m = stop - start
            x_chunk[:m, : self.latent_dim] = latent_rows[start:stop]
            x_chunk[:m, self.latent_dim:] = pts[start:stop]
            # Zero the tail so every chunk carries a fully defined payload
            # (per-row outputs are pad-independent; this keeps runs tidy).
            x_chunk[m:] = 0.0
            v, g = self._forward_chunk(x_chunk, want_grad)
            values[start:stop] = v[:m]
            if want_grad:
                grads[start:stop] = g[:m]
        return values, grads

    def _single(self, latent, points):
        pts = as_points(points)
        z = _as_latent(latent, self.latent_dim)
        return np.broadcast_to(z, (pts.shape[0], self.latent_dim)), pts

    def _paired(self, latents, points):
        pts = as_points(points)
        zmat = np.asarray(latents, dtype=np.float64)
        if zmat.shape != (pts.shape[0], self.latent_dim):
            raise ValueError(f"latents must have shape ({pts.shape[0]}, {self.latent_dim}), got {zmat.shape}")
        if not np.all(np.isfinite(zmat)):
            raise ValueError("latents contain non-finite values")
        return zmat, pts

    def evaluate(self, latent, points) -> FloatArray:
        """Signed distances f(points; latent), one per row of points."""
        return self._run(*self._single(latent, points), want_grad=False)[0]

    def gradient(self, latent, points) -> FloatArray:
        """Exact reverse-mode gradients d f / d q, shape (N, 3)."""
        return self._run(*self._single(latent, points), want_grad=True)[1]

    def evaluate_with_gradient(self, latent, points) -> tuple[FloatArray, FloatArray]:
        """Values and gradients from a single forward/backward pass.

        Bit-identical to calling evaluate and gradient separately.
        """
        return self._run(*self._single(latent, points), want_grad=True)

    def evaluate_rows(self, latents, points) -> FloatArray:
        """Row-paired evaluation: latents is (N, latent_dim), one code per point.

        Row i is evaluated exactly as it would be under evaluate(latents[i],
        points[i:i+1]); results do not depend on how rows are batched.
        """
        return self._run(*self._paired(latents, points), want_grad=False)[0]

    def evaluate_rows_with_gradient(self, latents, points) -> tuple[FloatArray, FloatArray]:
        """Row-paired values and gradients in one pass."""
        return self._run(*self._paired(latents, points), want_grad=True)


# ---------------------------------------------------------------------------
# Dispatch helpers and fixtures
# ---------------------------------------------------------------------------


def split_field(field):
    """Normalize a field argument to (field_object, latent_or_None).

    Accepts an AnalyticField or a (MlpSdfDecoder, latent) pair.
    """
    if isinstance(field, AnalyticField):
        return field, None
    if isinstance(field, tuple) and len(field) == 2 and isinstance(field[0], MlpSdfDecoder):
        return field[0], field[1]
    raise TypeError(f"expected AnalyticField or (MlpSdfDecoder, latent) pair, got {type(field).__name__}")


def eval_field(field, points) -> FloatArray:
    """Evaluate signed distances for an analytic field or a (decoder, latent) pair."""
    f, z = split_field(field)
    return f.evaluate(points) if z is None else f.evaluate(z, points)


def eval_gradient(field, points) -> FloatArray:
    """Evaluate point gradients d f / d q for either field kind."""
    f, z = split_field(field)
    return f.gradient(points) if z is None else f.gradient(z, points)


def gen_random_decoder(seed: int, latent_dim: int = 64, hidden_dim: int = 512,
                       depth: int = 8, output_activation: str = "tanh",
                       skip_connections: bool = False) -> MlpSdfDecoder:
    """Deterministic random decoder for tests and benchmarks.

    Weights and biases are drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)]
    per layer, then stored as float32.
    """
    if latent_dim < 1 or hidden_dim < 1 or depth < 1:
        raise ValueError("decoder dims must be >= 1")
    rng = np.random.default_rng(seed)
    input_dim = latent_dim + 3
    skip_at = depth // 2 if skip_connections else None
    weights, biases = [], []
    for i in range(depth):
        fan_in = input_dim if i == 0 else hidden_dim
        if skip_at is not None and i == skip_at:
            fan_in = hidden_dim + input_dim
        fan_out = 1 if i == depth - 1 else hidden_dim
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32))
        biases.append(rng.uniform(-bound, bound, size=fan_out).astype(np.float32))
    return MlpSdfDecoder(weights, biases, latent_dim, output_activation, skip_connections)
