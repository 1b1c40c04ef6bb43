import numpy as np
import pytest

from trigrid.cameras import ortho_camera, pixel_grid_rays
from trigrid.render import render_rays
from trigrid.retexture import (
    OFFSET_STEPS,
    bilinear_sample,
    front_visibility,
    project_front,
    retexture_render,
    surface_points,
    transmittance_to_front,
)


def const_field(sigma, rgb=(0.3, 0.3, 0.3)):
    def f(pts):
        n = len(pts)
        return np.full(n, sigma), np.tile(np.asarray(rgb, np.float64), (n, 1))

    return f


def slab_field(z0, z1, sigma, rgb=(0.2, 0.6, 0.4)):
    """Dense slab spanning all x, y with z in [z0, z1]."""

    def f(pts):
        inside = (pts[:, 2] >= z0) & (pts[:, 2] <= z1)
        return np.where(inside, sigma, 0.0), np.tile(np.asarray(rgb, np.float64), (len(pts), 1))

    return f


# ---------------------------------------------------------------- transmittance


def test_transmittance_constant_field_closed_form():
    # midpoint quadrature is exact on a constant integrand
    field = const_field(2.0)
    origins = np.array([[0.0, 0.0, 0.0], [0.1, -0.2, -0.5], [0.0, 0.0, 0.25]])
    got = transmittance_to_front(field, origins, n_samples=16)
    want = np.exp(-2.0 * (0.5 - origins[:, 2]))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_transmittance_linear_field_closed_form():
    # sigma(z) = 3 (0.5 - z): midpoint quadrature is exact on linear integrands
    def field(pts):
        return 3.0 * (0.5 - pts[:, 2]), np.zeros((len(pts), 3))

    z0 = np.array([-0.5, 0.0, 0.3])
    origins = np.c_[np.zeros((3, 2)), z0]
    got = transmittance_to_front(field, origins, n_samples=8)
    want = np.exp(-1.5 * (0.5 - z0) ** 2)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_transmittance_at_front_face_is_one():
    got = transmittance_to_front(const_field(50.0), np.array([[0.0, 0.0, 0.5]]))
    assert got[0] == 1.0


def test_transmittance_chunking_invariance():
    field = const_field(1.3)
    rng = np.random.default_rng(0)
    origins = rng.uniform(-0.5, 0.5, size=(17, 3))
    a = transmittance_to_front(field, origins, n_samples=12)
    b = transmittance_to_front(field, origins, n_samples=12, chunk_rays=3)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------- visibility


def test_visibility_constant_field_closed_form():
    # jitter moves only (x, y); a constant field keeps every jitter equal
    sigma, ns = 1.7, 16
    pts = np.array([[0.0, 0.0, 0.0], [0.2, 0.1, -0.3]])
    vis = front_visibility(const_field(sigma), pts, n_samples=ns, jitter_radius=0.01)
    z_off = pts[:, 2] + OFFSET_STEPS / ns
    np.testing.assert_allclose(vis, np.exp(-sigma * (0.5 - z_off)), atol=1e-12)


def test_visibility_offset_clamps_at_front_face():
    vis = front_visibility(const_field(80.0), np.array([[0.0, 0.0, 0.5]]), n_samples=8)
    assert vis[0] == 1.0


def test_visibility_occluder_semantics():
    field = slab_field(0.2, 0.3, 500.0)
    behind = np.array([[0.0, 0.0, 0.0]])  # looks through the slab
    infront = np.array([[0.0, 0.0, 0.35]])  # already past it
    assert front_visibility(field, behind, n_samples=96)[0] < 1e-6
    assert front_visibility(field, infront, n_samples=96)[0] > 0.999


def test_visibility_empty_and_validation():
    assert front_visibility(const_field(1.0), np.zeros((0, 3))).shape == (0,)
    with pytest.raises(ValueError, match="n_jitter"):
        front_visibility(const_field(1.0), np.zeros((1, 3)), n_jitter=0)


def test_visibility_deterministic_in_seed():
    def bumpy(pts):
        return np.exp(-40.0 * np.sum(pts**2, axis=1)) * 30.0, np.zeros((len(pts), 3))

    pts = np.array([[0.05, -0.03, -0.2], [-0.1, 0.2, 0.0]])
    a = front_visibility(bumpy, pts, seed=4, jitter_radius=0.05)
    b = front_visibility(bumpy, pts, seed=4, jitter_radius=0.05)
    c = front_visibility(bumpy, pts, seed=5, jitter_radius=0.05)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- projection math


def test_bilinear_exact_at_nodes(rng):
    img = rng.uniform(size=(7, 9, 3))
    rr, cc = np.meshgrid(np.arange(7.0), np.arange(9.0), indexing="ij")
    got = bilinear_sample(img, rr.ravel(), cc.ravel())
    np.testing.assert_array_equal(got.reshape(7, 9, 3), img)


def test_bilinear_exact_on_linear_ramp():
    rr, cc = np.meshgrid(np.arange(6.0), np.arange(5.0), indexing="ij")
    img = (rr + 2.0 * cc)[..., None]
    r = np.array([0.25, 3.75, 4.5])
    c = np.array([1.5, 0.0, 3.25])
    got = bilinear_sample(img, r, c)
    np.testing.assert_allclose(got[:, 0], r + 2.0 * c, atol=1e-12)


def test_bilinear_clamps_outside():
    img = np.arange(12.0).reshape(3, 4)[..., None]
    got = bilinear_sample(img, np.array([-5.0, 10.0]), np.array([-3.0, 9.0]))
    assert got[0, 0] == img[0, 0, 0]
    assert got[1, 0] == img[2, 3, 0]


def test_project_front_inverts_pixel_grid():
    # pixel centers of the front ortho camera project back to their own (i, j)
    cam = ortho_camera("front", size=24)
    origins, _, _, _ = pixel_grid_rays(cam)
    row, col = project_front(origins, 24)
    ii, jj = np.meshgrid(np.arange(24.0), np.arange(24.0), indexing="ij")
    assert np.abs(row - ii.ravel()).max() < 1e-9
    assert np.abs(col - jj.ravel()).max() < 1e-9


def test_project_front_axis_signs():
    row, col = project_front(np.array([[0.4, 0.4, 0.0]]), 64)
    # +x lands right of center, +y lands above center
    assert col[0] > 40.0
    assert row[0] < 24.0


# ---------------------------------------------------------------- surface points


def test_surface_points_on_slab_face():
    field = slab_field(-0.1, 0.1, 400.0)
    cam = ortho_camera("front", size=8)
    pts, valid, bufs = surface_points(field, cam, n_samples=96)
    assert valid.all()
    # expected termination just inside the slab's front face
    assert np.abs(pts[..., 2] - 0.1).max() < 0.02
    assert bufs.alpha.min() > 0.99


def test_surface_points_empty_field_invalid():
    field = const_field(0.0)
    pts, valid, bufs = surface_points(field, ortho_camera("front", size=6))
    assert not valid.any()
    assert bufs.alpha.max() == 0.0


# ---------------------------------------------------------------- retexture


def front_pattern(size):
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.empty((size, size, 3))
    img[..., 0] = i / size
    img[..., 1] = j / size
    img[..., 2] = ((i + j) % 5) / 5.0
    return img


def test_retexture_front_view_reproduces_input():
    # front view of a front-facing wall: every pixel is valid, visible, and
    # projects onto its own pixel of the source image
    field = slab_field(-0.1, 0.1, 400.0)
    size = 16
    pat = front_pattern(size)
    cam = ortho_camera("front", size=size)
    out, info = retexture_render(field, pat, cam)
    assert info["valid"].all()
    assert info["retextured"].all()
    assert np.abs(out.rgb - pat).max() < 1e-6


def test_retexture_leaves_alpha_and_depth_untouched():
    field = slab_field(-0.1, 0.1, 400.0)
    size = 8
    cam = ortho_camera("front", size=size)
    out, info = retexture_render(field, front_pattern(size), cam, seed=0)
    origins, dirs, tn, tf = pixel_grid_rays(cam)
    _, alpha, depth = render_rays(field, origins, dirs, tn, tf, n_samples=96,
                                  mode="midpoint", seed=0)
    np.testing.assert_array_equal(out.alpha, alpha.reshape(size, size))
    np.testing.assert_array_equal(out.depth, depth.reshape(size, size))


def test_retexture_occluded_view_is_plain_render():
    # from the right, every surviving ray terminates inside the slab where
    # the path toward +z is blocked, so nothing gets repainted
    field = slab_field(-0.1, 0.1, 500.0)
    size = 8
    out, info = retexture_render(field, front_pattern(size), ortho_camera("right", size=size))
    assert info["valid"].any()
    assert not info["retextured"].any()
    np.testing.assert_array_equal(out.rgb, info["plain_rgb"])


def test_retexture_threshold_monotone():
    field = const_field(1.0)  # partial transmittance everywhere
    size = 6
    pat = front_pattern(size)
    cam = ortho_camera("front", size=size)
    masks = [retexture_render(field, pat, cam, v_thresh=v)[1]["retextured"]
             for v in (0.3, 0.6, 0.9)]
    assert masks[1][masks[2]].all()  # higher threshold selects a subset
    assert masks[0][masks[1]].all()


def test_retexture_visibility_nan_outside_valid():
    field = const_field(0.0)
    out, info = retexture_render(field, front_pattern(6), ortho_camera("front", size=6))
    assert np.isnan(info["visibility"]).all()
    assert not info["retextured"].any()


def test_retexture_input_validation():
    field = const_field(1.0)
    cam = ortho_camera("front", size=4)
    with pytest.raises(ValueError, match="front input must be"):
        retexture_render(field, np.zeros((4, 4)), cam)
    with pytest.raises(ValueError, match="resolution mismatch"):
        retexture_render(field, np.zeros((4, 6, 3)), cam)
    with pytest.raises(ValueError, match="too small"):
        retexture_render(field, np.zeros((1, 1, 3)), cam)


def test_retexture_deterministic():
    field = slab_field(-0.2, 0.0, 90.0)
    size = 8
    pat = front_pattern(size)
    cam = ortho_camera("front", size=size)
    a, _ = retexture_render(field, pat, cam, seed=2)
    b, _ = retexture_render(field, pat, cam, seed=2)
    np.testing.assert_array_equal(a.rgb, b.rgb)
