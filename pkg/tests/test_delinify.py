import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter1d

from trigrid.delinify import (
    convex_hull_2d,
    delinify_image,
    dog_response,
    inpaint,
    line_mask,
    luma,
    protected_mask,
    rasterize_hull,
    _solve_eikonal,
)


def lined_image(size=48, rng=None):
    """Smooth two-tone image with a dark 1px vertical line."""
    img = np.full((size, size, 3), 0.8, dtype=np.float64)
    img[:, : size // 2] = [0.75, 0.55, 0.45]
    img[:, size // 2 :] = [0.45, 0.55, 0.8]
    clean = img.copy()
    img[:, size // 3] = 0.05  # the line
    return clean, img


# ---------------------------------------------------------------- DoG


def test_luma_weights():
    img = np.zeros((2, 2, 3))
    img[0, 0] = [1, 0, 0]
    img[0, 1] = [0, 1, 0]
    img[1, 0] = [0, 0, 1]
    y = luma(img)
    np.testing.assert_allclose(y, [[0.299, 0.587], [0.114, 0.0]], atol=1e-12)


def test_dog_zero_on_constant():
    img = np.full((16, 16, 3), 0.37)
    np.testing.assert_allclose(dog_response(img), 0.0, atol=1e-12)


def test_dog_negates_with_image():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(20, 20, 3))
    a = dog_response(img)
    b = dog_response(1.0 - img)
    np.testing.assert_allclose(b, -a, atol=1e-12)


def test_dog_matches_separable_oracle():
    # image constant along rows: 2D gaussian equals 1D filtering of the profile
    profile = np.zeros(64)
    profile[30] = 1.0
    img = np.tile(profile[None, :, None], (64, 1, 3))
    resp = dog_response(img, sigma=1.5, k=1.6)
    want = gaussian_filter1d(profile, 1.5, mode="reflect") - gaussian_filter1d(
        profile, 1.5 * 1.6, mode="reflect"
    )
    np.testing.assert_allclose(resp[32], want, atol=1e-10)


def test_dog_parameter_validation():
    img = np.zeros((8, 8, 3))
    with pytest.raises(ValueError, match="sigma"):
        dog_response(img, sigma=0.0)
    with pytest.raises(ValueError, match="k"):
        dog_response(img, k=1.0)


def test_dark_line_fires_negative_dog():
    _, img = lined_image()
    resp = dog_response(img)
    col = img.shape[1] // 3
    assert resp[24, col] < -0.05  # dark stroke = strongly negative response


# ---------------------------------------------------------------- masks & hulls


def test_line_mask_covers_line_not_flats():
    _, img = lined_image()
    mask = line_mask(img, tau=0.05)
    col = img.shape[1] // 3
    assert mask[5:-5, col].all()
    # smooth regions away from the line and the tone boundary stay clear
    assert not mask[:, :8].any()
    assert not mask[:, -8:].any()


def test_line_mask_dilates():
    _, img = lined_image()
    m0 = line_mask(img, dilate_px=0)
    m1 = line_mask(img, dilate_px=1)
    assert m1.sum() > m0.sum()
    assert m1[m0].all()  # dilation only grows


def test_convex_hull_square_with_interior_points():
    pts = np.array([[0, 0], [10, 0], [10, 10], [0, 10], [5, 5], [2, 7]], dtype=float)
    hull = convex_hull_2d(pts)
    assert hull is not None
    assert len(hull) == 4
    assert {tuple(p) for p in hull} == {(0, 0), (10, 0), (10, 10), (0, 10)}


def test_convex_hull_degenerate_is_none():
    assert convex_hull_2d(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])) is None
    assert convex_hull_2d(np.array([[3.0, 4.0], [3.0, 4.0], [3.0, 4.0]])) is None


def test_rasterize_hull_matches_halfplane_oracle():
    hull = convex_hull_2d(np.array([[2.0, 3.0], [14.0, 4.0], [8.0, 13.0]]))
    grid = rasterize_hull(hull, (16, 16))
    # oracle: a point is inside a convex polygon iff it is left of every edge
    for i in range(16):
        for j in range(16):
            p = np.array([j, i], dtype=float)  # hull points are (x, y)
            inside = True
            n = len(hull)
            for k in range(n):
                a, b = hull[k], hull[(k + 1) % n]
                cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                if cross < -1e-9:
                    inside = False
            assert grid[i, j] == inside, (i, j)


def test_protected_mask_blocks_line_removal():
    _, img = lined_image()
    col = img.shape[1] // 3
    landmarks = {"eye": [[col - 3, 10], [col + 3, 10], [col + 3, 20], [col - 3, 20]]}
    mask = line_mask(img, landmarks=landmarks)
    assert not mask[11:20, col - 2 : col + 2].any()
    assert mask[30:40, col].all()  # outside the hull the line is still masked


def test_protected_mask_degenerate_warns_and_ignores():
    with pytest.warns(UserWarning, match="degenerate"):
        m = protected_mask({"brow": [[1, 1], [5, 5], [9, 9]]}, (16, 16))
    assert not m.any()


def test_protected_mask_out_of_bounds_names_group():
    with pytest.raises(ValueError, match="mouth"):
        protected_mask({"mouth": [[4, 4], [40, 4], [4, 40]]}, (16, 16))


# ---------------------------------------------------------------- eikonal + inpaint


def test_eikonal_single_known_neighbor():
    big = 1e6
    assert _solve_eikonal(3.0, big, True, False) == pytest.approx(4.0)
    assert _solve_eikonal(big, 7.0, False, True) == pytest.approx(8.0)


def test_eikonal_two_known_neighbors():
    # (T-a)^2 + (T-b)^2 = 1 with a = b = 0 gives T = 1/sqrt(2)
    t = _solve_eikonal(0.0, 0.0, True, True)
    assert t == pytest.approx(1.0 / np.sqrt(2.0))
    # far-apart neighbors fall back to the closer one + 1
    assert _solve_eikonal(0.0, 10.0, True, True) == pytest.approx(1.0)


def test_inpaint_empty_mask_is_identity(rng):
    img = rng.uniform(size=(12, 12, 3))
    out = inpaint(img, np.zeros((12, 12), dtype=bool))
    np.testing.assert_array_equal(out, img)


def test_inpaint_constant_fill_is_exact(rng):
    img = np.full((20, 20, 3), 0.613)
    mask = np.zeros((20, 20), dtype=bool)
    mask[6:12, 7:15] = True
    out = inpaint(img, mask)
    np.testing.assert_allclose(out, 0.613, atol=1e-12)


def test_inpaint_preserves_unmasked_pixels_bitwise(rng):
    img = rng.uniform(size=(24, 24, 3))
    mask = np.zeros((24, 24), dtype=bool)
    mask[8:12, 9:16] = True
    out = inpaint(img, mask)
    np.testing.assert_array_equal(out[~mask], img[~mask])


@settings(max_examples=15, deadline=None, derandomize=True)
@given(st.integers(0, 2**31 - 1))
def test_inpaint_is_convex_combination(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(16, 16, 3))
    mask = np.zeros((16, 16), dtype=bool)
    i0 = int(rng.integers(1, 8))
    j0 = int(rng.integers(1, 8))
    mask[i0 : i0 + int(rng.integers(2, 7)), j0 : j0 + int(rng.integers(2, 7))] = True
    out = inpaint(img, mask)
    lo = img[~mask].min() - 1e-9
    hi = img[~mask].max() + 1e-9
    assert out[mask].min() >= lo
    assert out[mask].max() <= hi


def test_inpaint_rejects_oversized_mask():
    img = np.zeros((10, 10, 3))
    mask = np.ones((10, 10), dtype=bool)
    mask[:, 5:] = False  # exactly 50%
    with pytest.raises(ValueError, match="50%"):
        inpaint(img, mask)


def test_inpaint_rejects_full_mask():
    with pytest.raises(ValueError, match="50%|whole"):
        inpaint(np.zeros((6, 6, 3)), np.ones((6, 6), dtype=bool))


def test_inpaint_recovers_lined_image():
    clean, img = lined_image()
    mask = line_mask(img)
    out = inpaint(img, mask)
    err_before = np.abs(img - clean).mean()
    err_after = np.abs(out - clean).mean()
    assert err_after < err_before / 5.0


# ---------------------------------------------------------------- pipeline helper


def test_delinify_image_returns_result_and_mask():
    clean, img = lined_image()
    out, mask = delinify_image(img)
    assert out.shape == img.shape
    assert mask.dtype == bool
    col = img.shape[1] // 3
    assert mask[10:-10, col].all()
    np.testing.assert_array_equal(out[~mask], img[~mask])
    assert np.abs(out - clean).mean() < np.abs(img - clean).mean() / 5.0


def test_delinify_weak_second_pass():
    # a second pass on the cleaned image fires on far fewer pixels
    _, img = lined_image()
    out, mask1 = delinify_image(img)
    _, mask2 = delinify_image(out)
    assert mask2.sum() <= mask1.sum() * 0.5
