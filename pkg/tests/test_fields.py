"""Analytic SDF primitives and the MLP decoder.

The decoder oracle below reruns the network one point at a time with plain
per-layer matvec loops, independent of the chunked batch path under test.
"""

import math

import numpy as np
import pytest

from fsdkit.fields import (
    CHUNK_ROWS,
    BoxField,
    MlpSdfDecoder,
    SphereField,
    TorusField,
    as_points,
    eval_field,
    eval_gradient,
    gen_random_decoder,
)

RNG_SEED = 20240811


def mlp_forward_naive(decoder, latent, point):
    """Per-point forward pass: layer loop, float64, no chunking or padding."""
    x = np.concatenate([np.asarray(latent, dtype=np.float64).reshape(-1),
                        np.asarray(point, dtype=np.float64).reshape(-1)])
    skip_at = decoder.depth // 2 if decoder.skip_connections else None
    h = x
    for i, (w, b) in enumerate(zip(decoder.weights, decoder.biases)):
        inp = np.concatenate([h, x]) if i == skip_at else h
        z = w.astype(np.float64) @ inp + b.astype(np.float64)
        h = np.maximum(z, 0.0) if i < decoder.depth - 1 else z
    value = float(h[0])
    return math.tanh(value) if decoder.output_activation == "tanh" else value


def mlp_kink_margin(decoder, latent, point):
    """Smallest |pre-activation| over all hidden units: distance to the
    nearest rectifier kink in activation space."""
    x = np.concatenate([np.asarray(latent, dtype=np.float64).reshape(-1),
                        np.asarray(point, dtype=np.float64).reshape(-1)])
    skip_at = decoder.depth // 2 if decoder.skip_connections else None
    h = x
    margin = math.inf
    for i, (w, b) in enumerate(zip(decoder.weights, decoder.biases)):
        inp = np.concatenate([h, x]) if i == skip_at else h
        z = w.astype(np.float64) @ inp + b.astype(np.float64)
        if i < decoder.depth - 1:
            margin = min(margin, float(np.min(np.abs(z))))
            h = np.maximum(z, 0.0)
        else:
            h = z
    return margin


def central_difference(fn, point, h=1e-5):
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty(3)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        grad[axis] = (fn(point + step) - fn(point - step)) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# Analytic primitives
# ---------------------------------------------------------------------------


def test_sphere_values_exact():
    field = SphereField(0.5)
    pts = np.array([[0.8, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.3, 0.4, 0.0]])
    expected = np.array([0.3, -0.5, 0.0, 0.0])
    assert np.max(np.abs(field.evaluate(pts) - expected)) < 1e-12


def test_box_values_exact():
    field = BoxField((0.5, 0.4, 0.3))
    pts = np.array([
        [0.0, 0.0, 0.0],     # deepest inside: -min(half_extents)
        [0.7, 0.0, 0.0],     # past the +x face
        [0.7, 0.6, 0.0],     # past an edge
        [0.5, 0.4, 0.3],     # exactly on the corner
        [0.4, 0.0, 0.0],     # inside, nearest +x face
    ])
    expected = np.array([-0.3, 0.2, math.hypot(0.2, 0.2), 0.0, -0.1])
    assert np.max(np.abs(field.evaluate(pts) - expected)) < 1e-12


def test_torus_values_exact():
    field = TorusField(0.5, 0.15)
    pts = np.array([
        [0.5, 0.0, 0.0],     # on the ring circle
        [0.65, 0.0, 0.0],    # outer equator
        [0.0, 0.0, 0.0],     # center: distance R to ring, minus r
        [0.0, 0.0, -0.5],    # ring circle reached along -z
        [0.5, 0.15, 0.0],    # directly above the ring
    ])
    expected = np.array([-0.15, 0.0, 0.35, -0.15, 0.0])
    assert np.max(np.abs(field.evaluate(pts) - expected)) < 1e-12


def _sample_regular_points(field, rng, n):
    """Random cube points filtered away from the field's singular sets, so
    central differences see a smooth function."""
    pts = rng.uniform(-1.0, 1.0, size=(4 * n, 3))
    if isinstance(field, SphereField):
        keep = np.linalg.norm(pts, axis=1) > 1e-2
    elif isinstance(field, BoxField):
        q = np.abs(pts) - field.half_extents
        off_faces = np.all(np.abs(q) > 1e-3, axis=1)
        top2 = np.sort(q, axis=1)[:, 1:]
        inside = q.max(axis=1) < 0.0
        # Inside points need a unique nearest face; outside kinks sit on q=0.
        tie_free = ~inside | (top2[:, 1] - top2[:, 0] > 1e-3)
        keep = off_faces & tie_free
    else:
        rho = np.hypot(pts[:, 0], pts[:, 2])
        tube = np.hypot(rho - field.major_radius, pts[:, 1])
        keep = (rho > 1e-2) & (tube > 1e-2)
    return pts[keep][:n]


@pytest.mark.parametrize("field", [
    SphereField(0.5),
    BoxField((0.4, 0.3, 0.2)),
    TorusField(0.5, 0.15),
], ids=["sphere", "box", "torus"])
def test_analytic_gradient_matches_central_differences(field):
    rng = np.random.default_rng(RNG_SEED)
    pts = _sample_regular_points(field, rng, 200)
    assert len(pts) == 200
    grads = field.gradient(pts)
    for p, g in zip(pts, grads):
        fd = central_difference(lambda q: field.evaluate(q[None, :])[0], p)
        assert np.max(np.abs(fd - g)) < 1e-7


@pytest.mark.parametrize("field", [
    SphereField(0.5),
    BoxField((0.4, 0.3, 0.2)),
    TorusField(0.5, 0.15),
], ids=["sphere", "box", "torus"])
def test_eikonal_property(field):
    rng = np.random.default_rng(RNG_SEED + 1)
    pts = _sample_regular_points(field, rng, 1000)
    norms = np.linalg.norm(field.gradient(pts), axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-9


def test_sphere_gradient_at_center_is_zero():
    # The center is the medial point; a zero gradient marks it degenerate.
    g = SphereField(0.5).gradient(np.zeros((1, 3)))
    assert np.array_equal(g, np.zeros((1, 3)))


def test_as_points_validation():
    with pytest.raises(ValueError, match=r"\(N, 3\)"):
        as_points(np.zeros(3))
    with pytest.raises(ValueError, match="finite"):
        as_points(np.array([[np.nan, 0.0, 0.0]]))
    out = as_points([[1, 2, 3]])
    assert out.shape == (1, 3) and out.dtype == np.float64


def test_field_constructor_bounds():
    with pytest.raises(ValueError):
        SphereField(0.0)
    with pytest.raises(ValueError):
        SphereField(1.5)
    with pytest.raises(ValueError):
        BoxField((0.5, -0.1, 0.2))
    with pytest.raises(ValueError):
        TorusField(0.8, 0.3)  # R + r > 1 pokes out of the cube


# ---------------------------------------------------------------------------
# MLP decoder: forward correctness
# ---------------------------------------------------------------------------


def _small_decoder(seed=3, activation="tanh", skip=False, depth=4):
    return gen_random_decoder(seed, latent_dim=8, hidden_dim=32, depth=depth,
                              output_activation=activation, skip_connections=skip)


@pytest.mark.parametrize("activation", ["tanh", "none"])
def test_decoder_matches_naive_forward(activation):
    decoder = _small_decoder(activation=activation)
    rng = np.random.default_rng(RNG_SEED + 2)
    latent = rng.normal(size=8)
    pts = rng.uniform(-1.0, 1.0, size=(64, 3))
    values = decoder.evaluate(latent, pts)
    expected = np.array([mlp_forward_naive(decoder, latent, p) for p in pts])
    assert np.max(np.abs(values - expected)) < 1e-9


def test_decoder_skip_connections_match_naive_forward():
    decoder = _small_decoder(skip=True, depth=5)
    rng = np.random.default_rng(RNG_SEED + 3)
    latent = rng.normal(size=8)
    pts = rng.uniform(-1.0, 1.0, size=(32, 3))
    values = decoder.evaluate(latent, pts)
    expected = np.array([mlp_forward_naive(decoder, latent, p) for p in pts])
    assert np.max(np.abs(values - expected)) < 1e-9


def test_decoder_hand_computed_two_layer():
    # 1 hidden unit, latent_dim 1: f = tanh(w2 * relu(w1 . [z, p] + b1) + b2)
    w1 = np.array([[0.5, 1.0, -2.0, 0.25]], dtype=np.float32)
    b1 = np.array([0.1], dtype=np.float32)
    w2 = np.array([[2.0]], dtype=np.float32)
    b2 = np.array([-0.2], dtype=np.float32)
    decoder = MlpSdfDecoder([w1, w2], [b1, b2], latent_dim=1)
    value = decoder.evaluate([2.0], np.array([[0.5, 0.25, 2.0]]))[0]
    pre = 0.5 * 2.0 + 1.0 * 0.5 - 2.0 * 0.25 + 0.25 * 2.0 + 0.1
    assert abs(value - math.tanh(2.0 * pre - 0.2)) < 1e-7


# ---------------------------------------------------------------------------
# MLP decoder: gradients
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("skip", [False, True], ids=["plain", "skip"])
def test_decoder_gradient_matches_central_differences(skip):
    decoder = _small_decoder(skip=skip, depth=4)
    rng = np.random.default_rng(RNG_SEED + 4)
    latent = rng.normal(size=8)

    checked = 0
    while checked < 50:
        p = rng.uniform(-1.0, 1.0, size=3)
        if mlp_kink_margin(decoder, latent, p) < 1e-3:
            continue  # rectifier kink nearby; finite differences see a corner
        grad = decoder.gradient(latent, p[None, :])[0]
        fd = central_difference(
            lambda q: decoder.evaluate(latent, q[None, :])[0], p, h=1e-4)
        scale = max(np.linalg.norm(fd), 1e-8)
        assert np.linalg.norm(grad - fd) / scale < 1e-3
        checked += 1


def test_decoder_gradient_none_activation():
    decoder = _small_decoder(activation="none")
    rng = np.random.default_rng(RNG_SEED + 5)
    latent = rng.normal(size=8)
    p = rng.uniform(-0.5, 0.5, size=3)
    assert mlp_kink_margin(decoder, latent, p) > 1e-4
    grad = decoder.gradient(latent, p[None, :])[0]
    fd = central_difference(lambda q: decoder.evaluate(latent, q[None, :])[0], p, h=1e-4)
    assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-8) < 1e-3


def test_evaluate_with_gradient_consistent():
    decoder = _small_decoder()
    rng = np.random.default_rng(RNG_SEED + 6)
    latent = rng.normal(size=8)
    pts = rng.uniform(-1.0, 1.0, size=(17, 3))
    values, grads = decoder.evaluate_with_gradient(latent, pts)
    assert np.array_equal(values, decoder.evaluate(latent, pts))
    assert np.array_equal(grads, decoder.gradient(latent, pts))


# ---------------------------------------------------------------------------
# Bitwise batching invariance (the fixed-chunk contract)
# ---------------------------------------------------------------------------


def test_batch_split_is_bitwise_identical():
    decoder = _small_decoder()
    rng = np.random.default_rng(RNG_SEED + 7)
    latent = rng.normal(size=8)
    pts = rng.uniform(-1.0, 1.0, size=(301, 3))
    whole = decoder.evaluate(latent, pts)
    parts = np.concatenate([decoder.evaluate(latent, pts[:37]),
                            decoder.evaluate(latent, pts[37:])])
    assert np.array_equal(whole, parts)

    wv, wg = decoder.evaluate_with_gradient(latent, pts)
    pv1, pg1 = decoder.evaluate_with_gradient(latent, pts[:190])
    pv2, pg2 = decoder.evaluate_with_gradient(latent, pts[190:])
    assert np.array_equal(wv, np.concatenate([pv1, pv2]))
    assert np.array_equal(wg, np.concatenate([pg1, pg2]))


def test_batch_permutation_is_bitwise_identical():
    decoder = _small_decoder()
    rng = np.random.default_rng(RNG_SEED + 8)
    latent = rng.normal(size=8)
    pts = rng.uniform(-1.0, 1.0, size=(200, 3))
    perm = rng.permutation(200)
    base = decoder.evaluate(latent, pts)
    shuffled = decoder.evaluate(latent, pts[perm])
    assert np.array_equal(shuffled[np.argsort(perm)], base)


def test_batch_crossing_chunk_boundary():
    decoder = _small_decoder()
    rng = np.random.default_rng(RNG_SEED + 9)
    latent = rng.normal(size=8)
    n = CHUNK_ROWS + 123
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    whole = decoder.evaluate(latent, pts)
    parts = np.concatenate([decoder.evaluate(latent, pts[:CHUNK_ROWS]),
                            decoder.evaluate(latent, pts[CHUNK_ROWS:])])
    assert np.array_equal(whole, parts)
    assert np.array_equal(whole[:5], decoder.evaluate(latent, pts[:5]))


def test_rows_api_matches_single_latent_calls():
    decoder = _small_decoder()
    rng = np.random.default_rng(RNG_SEED + 10)
    za, zb = rng.normal(size=(2, 8))
    pa = rng.uniform(-1.0, 1.0, size=(60, 3))
    pb = rng.uniform(-1.0, 1.0, size=(41, 3))

    latents = np.concatenate([np.broadcast_to(za, (60, 8)), np.broadcast_to(zb, (41, 8))])
    pts = np.concatenate([pa, pb])
    mixed, mixed_g = decoder.evaluate_rows_with_gradient(latents, pts)

    va, ga = decoder.evaluate_with_gradient(za, pa)
    vb, gb = decoder.evaluate_with_gradient(zb, pb)
    assert np.array_equal(mixed, np.concatenate([va, vb]))
    assert np.array_equal(mixed_g, np.concatenate([ga, gb]))


# ---------------------------------------------------------------------------
# Construction, immutability, helpers
# ---------------------------------------------------------------------------


def test_gen_random_decoder_is_deterministic():
    a = gen_random_decoder(11, latent_dim=4, hidden_dim=8, depth=3)
    b = gen_random_decoder(11, latent_dim=4, hidden_dim=8, depth=3)
    c = gen_random_decoder(12, latent_dim=4, hidden_dim=8, depth=3)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))


def test_decoder_owns_weight_copies():
    w1 = np.zeros((1, 4), dtype=np.float32)
    b1 = np.zeros(1, dtype=np.float32)
    decoder = MlpSdfDecoder([w1], [b1], latent_dim=1)
    before = decoder.evaluate([0.0], np.array([[0.1, 0.2, 0.3]]))[0]
    w1[0, 1] = 100.0  # caller mutates its own array after construction
    after = decoder.evaluate([0.0], np.array([[0.1, 0.2, 0.3]]))[0]
    assert before == after
    with pytest.raises(ValueError):
        decoder.weights[0][0, 0] = 1.0  # frozen storage


def test_decoder_shape_validation():
    ok_w = [np.zeros((4, 7), dtype=np.float32), np.zeros((1, 4), dtype=np.float32)]
    ok_b = [np.zeros(4, dtype=np.float32), np.zeros(1, dtype=np.float32)]
    MlpSdfDecoder(ok_w, ok_b, latent_dim=4)

    bad_w = [np.zeros((4, 6), dtype=np.float32), np.zeros((1, 4), dtype=np.float32)]
    with pytest.raises(ValueError, match="layer 0"):
        MlpSdfDecoder(bad_w, ok_b, latent_dim=4)
    with pytest.raises(ValueError, match="output_activation"):
        MlpSdfDecoder(ok_w, ok_b, latent_dim=4, output_activation="relu")
    with pytest.raises(ValueError, match="depth >= 3"):
        MlpSdfDecoder(ok_w, ok_b, latent_dim=4, skip_connections=True)
    with pytest.raises(ValueError, match="latent length"):
        MlpSdfDecoder(ok_w, ok_b, latent_dim=4).evaluate([0.0], np.zeros((1, 3)))


def test_eval_field_dispatch():
    sphere = SphereField(0.5)
    pts = np.array([[0.8, 0.0, 0.0]])
    assert eval_field(sphere, pts)[0] == pytest.approx(0.3)
    assert np.allclose(eval_gradient(sphere, pts)[0], [1.0, 0.0, 0.0])

    decoder = _small_decoder()
    latent = np.zeros(8)
    pair = (decoder, latent)
    assert np.array_equal(eval_field(pair, pts), decoder.evaluate(latent, pts))
    assert np.array_equal(eval_gradient(pair, pts), decoder.gradient(latent, pts))
    with pytest.raises(TypeError):
        eval_field("sphere", pts)
