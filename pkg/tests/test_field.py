import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import map_coordinates

from trigrid.field import (
    CHECKPOINT_MAGIC,
    Decoder,
    PLANE_AXES,
    TriGrid,
    decode,
    decoder_forward,
    field_sigma_rgb,
    init_field,
    inverse_softplus,
    load_checkpoint,
    sample_plane,
    sample_point,
    sample_points,
    save_checkpoint,
    sigmoid,
    softplus,
    softplus_prime_from_value,
)


def rand_field(rng, R=8, L=3, C=4, hidden=(8,)):
    tg, dec = init_field(R, L, C, seed=int(rng.integers(1 << 31)), hidden=hidden, dtype=np.float64)
    tg.planes[:] = rng.normal(0.0, 0.5, size=tg.planes.shape)
    return tg, dec


# ---------------------------------------------------------------- activations


def test_softplus_closed_forms():
    assert softplus(0.0) == pytest.approx(np.log(2.0))
    zs = np.linspace(-40, 40, 401)
    np.testing.assert_allclose(softplus(zs), np.logaddexp(0.0, zs), atol=1e-12)
    # softplus(x) - softplus(-x) = x
    np.testing.assert_allclose(softplus(zs) - softplus(-zs), zs, atol=1e-12)


def test_softplus_extreme_stability():
    # exp underflow to 0 is fine; overflow or nan is not
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        assert softplus(1000.0) == 1000.0
        assert softplus(-1000.0) == 0.0


def test_softplus_prime_is_sigmoid():
    zs = np.linspace(-30, 30, 301)
    np.testing.assert_allclose(
        softplus_prime_from_value(softplus(zs)), sigmoid(zs), atol=1e-12
    )


def test_sigmoid_matches_logistic():
    zs = np.linspace(-30, 30, 61)
    np.testing.assert_allclose(sigmoid(zs), 1.0 / (1.0 + np.exp(-zs)), atol=1e-12)


def test_inverse_softplus_roundtrip():
    ys = np.array([1e-3, 0.1, 1.0, 5.0, 20.0])
    np.testing.assert_allclose(softplus(inverse_softplus(ys)), ys, rtol=1e-10)


# ---------------------------------------------------------------- plane sampling


def test_nodes_reproduce_stored_features(rng):
    R, L, C = 7, 3, 5
    plane = rng.normal(size=(L, R, R, C))
    for _ in range(20):
        l = rng.integers(L)
        i = rng.integers(R)
        j = rng.integers(R)
        got = sample_plane(plane, i / (R - 1), j / (R - 1), l / (L - 1))
        np.testing.assert_allclose(got, plane[l, i, j], atol=1e-12)


def test_single_layer_ignores_w(rng):
    plane = rng.normal(size=(1, 6, 6, 3))
    u, v = rng.uniform(size=2)
    ref = sample_plane(plane, u, v, 0.0)
    for w in (0.0, 0.3, 0.71, 1.0):
        np.testing.assert_array_equal(sample_plane(plane, u, v, w), ref)


def test_plane_sampling_is_trilinear_when_L_equals_R(rng):
    R = L = 5
    C = 2
    plane = rng.normal(size=(L, R, R, C))
    pts = rng.uniform(size=(50, 3))
    got = sample_plane(plane, pts[:, 0], pts[:, 1], pts[:, 2])
    for c in range(C):
        # oracle: trilinear interpolation on the node lattice
        coords = np.stack([pts[:, 2] * (L - 1), pts[:, 0] * (R - 1), pts[:, 1] * (R - 1)])
        want = map_coordinates(plane[..., c], coords, order=1, mode="nearest")
        np.testing.assert_allclose(got[:, c], want, atol=1e-10)


def test_out_of_range_queries_clamp(rng):
    plane = rng.normal(size=(2, 4, 4, 3))
    np.testing.assert_array_equal(
        sample_plane(plane, -0.7, 1.9, 2.0), sample_plane(plane, 0.0, 1.0, 1.0)
    )
    tg, _ = rand_field(rng)
    np.testing.assert_array_equal(
        sample_point(tg, (-3.0, 0.1, 9.0)), sample_point(tg, (-0.5, 0.1, 0.5))
    )


def test_aggregation_is_plane_sum(rng):
    tg, _ = rand_field(rng, R=6, L=2, C=3)
    pts = rng.uniform(-0.5, 0.5, size=(17, 3))
    q = pts + 0.5
    want = 0.0
    for p, (ua, va, wa) in enumerate(PLANE_AXES):
        want = want + sample_plane(tg.planes[p], q[:, ua], q[:, va], q[:, wa])
    np.testing.assert_allclose(sample_points(tg, pts), want, atol=1e-12)


def test_mirror_equivariance_x(rng):
    # flipping the u axis of the XY/XZ planes and the layer axis of YZ
    # mirrors the field through x -> -x
    tg, _ = rand_field(rng, R=6, L=4, C=3)
    planes2 = tg.planes.copy()
    planes2[0] = tg.planes[0][:, ::-1]  # XY: u = qx
    planes2[1] = tg.planes[1][:, ::-1]  # XZ: u = qx
    planes2[2] = tg.planes[2][::-1]  # YZ: w = qx
    tg2 = TriGrid(planes2)
    pts = rng.uniform(-0.5, 0.5, size=(25, 3))
    mirrored = pts * np.array([-1.0, 1.0, 1.0])
    np.testing.assert_allclose(sample_points(tg2, pts), sample_points(tg, mirrored), atol=1e-10)


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.integers(0, 2**31 - 1))
def test_sample_is_convex_combination(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 4))
    R = int(rng.integers(2, 7))
    plane = rng.normal(size=(L, R, R, 2))
    u, v, w = rng.uniform(-0.2, 1.2, size=3)
    got = sample_plane(plane, u, v, w)
    lo = plane.min(axis=(0, 1, 2))
    hi = plane.max(axis=(0, 1, 2))
    assert np.all(got >= lo - 1e-12) and np.all(got <= hi + 1e-12)


# ---------------------------------------------------------------- decoder


def test_decoder_bias_only_closed_form():
    b = np.array([0.3, -1.0, 0.0, 2.0])
    dec = Decoder([np.zeros((5, 4))], [b])
    sigma, rgb = decode(dec, np.ones(5))
    assert sigma == pytest.approx(softplus(0.3))
    np.testing.assert_allclose(rgb, sigmoid(b[1:]), atol=1e-12)


def test_decoder_linear_dot_product_oracle(rng):
    W = rng.normal(size=(6, 4))
    b = rng.normal(size=4)
    dec = Decoder([W], [b])
    feats = rng.normal(size=(9, 6))
    sigma, rgb = decoder_forward(dec, feats)
    out = feats @ W + b
    np.testing.assert_allclose(sigma, softplus(out[:, 0]), atol=1e-12)
    np.testing.assert_allclose(rgb, sigmoid(out[:, 1:]), atol=1e-12)


def test_decoder_hidden_oracle(rng):
    W1 = rng.normal(size=(3, 5))
    b1 = rng.normal(size=5)
    W2 = rng.normal(size=(5, 4))
    b2 = rng.normal(size=4)
    dec = Decoder([W1, W2], [b1, b2])
    feats = rng.normal(size=(7, 3))
    sigma, rgb = decoder_forward(dec, feats)
    h = np.logaddexp(0.0, feats @ W1 + b1)
    out = h @ W2 + b2
    np.testing.assert_allclose(sigma, softplus(out[:, 0]), atol=1e-10)
    np.testing.assert_allclose(rgb, sigmoid(out[:, 1:]), atol=1e-10)


def test_keep_hidden_returns_consistent_primes(rng):
    _, dec = rand_field(rng, hidden=(6, 5))
    feats = rng.normal(size=(11, 4))
    sigma, rgb, hs, primes, out = decoder_forward(dec, feats, keep_hidden=True)
    s2, r2 = decoder_forward(dec, feats)
    np.testing.assert_array_equal(sigma, s2)
    np.testing.assert_array_equal(rgb, r2)
    assert len(hs) == len(primes) == 2
    for h, p in zip(hs, primes):
        np.testing.assert_allclose(p, softplus_prime_from_value(h), atol=1e-12)
    np.testing.assert_allclose(softplus(out[:, 0]), sigma, atol=1e-12)


def test_decoder_validation():
    with pytest.raises(ValueError, match="4 logits"):
        Decoder([np.zeros((4, 3))], [np.zeros(3)])
    with pytest.raises(ValueError, match="mismatch"):
        Decoder([np.zeros((4, 4))], [np.zeros(4), np.zeros(4)])


# ---------------------------------------------------------------- init


def test_init_field_deterministic():
    tg1, dec1 = init_field(8, 2, 4, seed=3)
    tg2, dec2 = init_field(8, 2, 4, seed=3)
    np.testing.assert_array_equal(tg1.planes, tg2.planes)
    for a, b in zip(dec1.weights, dec2.weights):
        np.testing.assert_array_equal(a, b)
    tg3, _ = init_field(8, 2, 4, seed=4)
    assert not np.array_equal(tg1.planes, tg3.planes)


def test_init_field_shapes_and_near_empty_start():
    tg, dec = init_field(16, 3, 8, seed=0, hidden=(32, 16))
    assert tg.planes.shape == (3, 3, 16, 16, 8)
    assert dec.widths == [8, 32, 16, 4]
    assert dec.biases[-1][0] == -1.0
    # density starts low so the optimizer carves structure from near-vacuum
    sigma, _ = field_sigma_rgb(tg, dec, np.zeros((1, 3)))
    assert sigma[0] < 1.0
    assert tg.planes.std() == pytest.approx(0.01, rel=0.1)


def test_init_field_rejects_bad_dims():
    with pytest.raises(ValueError, match="invalid field dims"):
        init_field(0, 1, 4, seed=0)


def test_trigrid_validation(rng):
    with pytest.raises(ValueError, match="3, L, R, R, C"):
        TriGrid(np.zeros((2, 1, 4, 4, 2)))
    with pytest.raises(ValueError, match="square"):
        TriGrid(np.zeros((3, 1, 4, 5, 2)))


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path, rng):
    tg, dec = init_field(6, 2, 4, seed=11, hidden=(5,))
    path = str(tmp_path / "f.ckpt")
    save_checkpoint(path, tg, dec)
    tg2, dec2 = load_checkpoint(path)
    np.testing.assert_array_equal(tg2.planes, tg.planes)
    for a, b in zip(dec2.weights, dec.weights):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(dec2.biases, dec.biases):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_deterministic_bytes(tmp_path):
    tg, dec = init_field(5, 1, 4, seed=2, hidden=(6,))
    p1 = str(tmp_path / "a.ckpt")
    p2 = str(tmp_path / "b.ckpt")
    save_checkpoint(p1, tg, dec)
    save_checkpoint(p2, tg, dec)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "f.ckpt"
    p.write_bytes(b"NOPE!" + b"\x00" * 64)
    with pytest.raises(ValueError, match="bad magic MLTP1"):
        load_checkpoint(str(p))


def test_checkpoint_trailing_bytes(tmp_path):
    tg, dec = init_field(4, 1, 4, seed=0, hidden=(4,))
    p = str(tmp_path / "f.ckpt")
    save_checkpoint(p, tg, dec)
    with open(p, "ab") as f:
        f.write(b"\x00\x00\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(p)


def test_checkpoint_magic_constant():
    assert CHECKPOINT_MAGIC == b"MLTP1"
