import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spnclust import (
    FingerprintMatrix,
    GaussianDenoiser,
    RawImage,
    SynthCameraSet,
    correlation,
    extract_residual,
    is_dark,
    normalize,
    synthesize,
)
from spnclust.errors import DegenerateResidual, DimensionMismatch
from spnclust.fingerprint import camera_patterns, centroid, ncc, ncc_matrix


def identity(channel):
    return channel


# --- dark-image rule ----------------------------------------------------------

def test_all_zero_image_is_dark():
    assert is_dark(RawImage(np.zeros((8, 8))))


def test_all_white_image_is_not_dark():
    assert not is_dark(RawImage(np.ones((8, 8))))


def test_exactly_three_quarters_dark_is_not_dark():
    px = np.full((8, 8), 200, dtype=np.uint8)
    px[:6, :] = 40
    assert not is_dark(RawImage.from_uint8(px))
    px[6, 0] = 40
    assert is_dark(RawImage.from_uint8(px))


def test_color_image_uses_luma():
    px = np.zeros((4, 4, 3))
    px[..., 1] = 1.0  # pure green: gray = 0.587 * 255 = 149.7
    assert not is_dark(RawImage(px))
    px[..., 1] = 0.0
    px[..., 2] = 1.0  # pure blue: gray = 29.1
    assert is_dark(RawImage(px))


def test_raw_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        RawImage(np.full((3, 3), 1.5))


def test_crop_is_top_left():
    px = np.arange(36, dtype=float).reshape(6, 6) / 36
    np.testing.assert_array_equal(RawImage(px).crop(3).pixels, px[:3, :3])
    with pytest.raises(ValueError):
        RawImage(px).crop(7)


# --- residual extraction ------------------------------------------------------

def test_constant_image_identity_denoiser_gives_zero_residual():
    r = extract_residual(RawImage(np.full((10, 10), 0.4)), identity)
    assert not np.any(r)


def test_exact_clean_denoiser_returns_noise(rng):
    clean = np.full((16, 16), 0.5)
    noise = rng.normal(0, 0.01, size=clean.shape)
    r = extract_residual(RawImage(clean + noise), lambda _c: clean)
    np.testing.assert_allclose(r, noise, atol=1e-15)


def test_gaussian_denoiser_preserves_constants():
    out = GaussianDenoiser()(np.full((9, 7), 0.3))
    np.testing.assert_allclose(out, 0.3, atol=1e-15)


def test_residual_beats_raw_image_on_textured_scene():
    # Scene content (a smooth ramp) masks K in the raw image; the residual strips it.
    rng = np.random.default_rng(0)
    s = 64
    K = rng.normal(0, np.sqrt(0.001), size=(s, s))
    yy, xx = np.mgrid[0:s, 0:s] / s
    scene = 0.3 + 0.5 * (0.6 * xx + 0.4 * yy)
    raw_corr, res_corr = [], []
    for _ in range(100):
        y = np.clip(scene + scene * K + rng.normal(0, np.sqrt(0.01), size=(s, s)), 0, 1)
        raw_corr.append(ncc(y, K))
        res_corr.append(ncc(extract_residual(RawImage(y)), K))
    assert np.mean(res_corr) > np.mean(raw_corr)


def test_color_residual_is_luma_combination(rng):
    px = rng.uniform(0.2, 0.8, size=(8, 8, 3))
    r = extract_residual(RawImage(px))
    per = [extract_residual(RawImage(px[..., c])) for c in range(3)]
    np.testing.assert_allclose(r, 0.299 * per[0] + 0.587 * per[1] + 0.114 * per[2], atol=1e-14)


# --- normalization ------------------------------------------------------------

def test_constant_rows_and_columns_degenerate():
    r = np.add.outer(np.arange(5.0), np.arange(6.0))
    with pytest.raises(DegenerateResidual):
        normalize(r)


def test_pure_row_pattern_degenerate(rng):
    with pytest.raises(DegenerateResidual):
        normalize(np.outer(rng.normal(size=8), np.ones(8)))


def test_gaussian_residual_normalizes_like_direct_recomputation(rng):
    r = rng.normal(size=(8, 8))
    v = normalize(r)
    # independent recomputation with explicit loops
    w = r.copy()
    for i in range(8):
        w[i] -= w[i].mean()
    for j in range(8):
        w[:, j] -= w[:, j].mean()
    w = w.flatten() - w.mean()
    w /= np.sqrt(np.sum(w ** 2))
    assert abs(v.mean()) <= 1e-12
    assert abs(np.linalg.norm(v) - 1) <= 1e-12
    np.testing.assert_allclose(v, w, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)),
              elements=st.floats(-1, 1, allow_nan=False)))
def test_normalize_invariants(r):
    try:
        v = normalize(r)
    except DegenerateResidual:
        return
    assert v.shape == (r.size,)
    assert abs(v.sum()) < 1e-9
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    # row and column means vanish before flattening
    m = v.reshape(r.shape)
    assert np.allclose(m.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(m.mean(axis=0), 0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100))
def test_normalize_scale_invariant(seed, scale):
    r = np.random.default_rng(seed).normal(size=(6, 7))
    np.testing.assert_allclose(normalize(r * scale), normalize(r), atol=1e-12)


# --- correlation --------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_correlation_symmetric_and_bounded(seed):
    g = np.random.default_rng(seed)
    a = normalize(g.normal(size=(6, 6)))
    b = normalize(g.normal(size=(6, 6)))
    assert correlation(a, b) == pytest.approx(correlation(b, a), abs=1e-15)
    assert -1 - 1e-12 <= correlation(a, b) <= 1 + 1e-12
    assert correlation(a, a) == pytest.approx(1.0, abs=1e-12)
    # dot product equals Pearson correlation for normalized vectors
    assert correlation(a, b) == pytest.approx(ncc(a, b), abs=1e-12)


def test_correlation_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        correlation(np.ones(4), np.ones(5))


def test_ncc_matrix_matches_pairwise(rng):
    A = rng.normal(size=(20, 3))
    B = rng.normal(size=(20, 4))
    M = ncc_matrix(A, B)
    for i in range(3):
        for j in range(4):
            assert M[i, j] == pytest.approx(ncc(A[:, i], B[:, j]), abs=1e-12)


# --- centroid -----------------------------------------------------------------

def test_centroid_single_member(rng):
    a = rng.normal(size=10)
    np.testing.assert_array_equal(centroid([a]), a)


def test_centroid_of_opposites_is_zero(rng):
    a = rng.normal(size=10)
    assert not np.any(centroid([a, -a]))


def test_centroid_beats_members_on_true_pattern():
    params = SynthCameraSet(num_cameras=1, images_per_camera=50, rng_seed=4)
    fm, _ = synthesize(params)
    K = camera_patterns(params)[0]
    member_corr = [ncc(fm.X[:, i], K) for i in range(fm.n)]
    assert ncc(centroid(list(fm.X.T)), K) > max(member_corr)


# --- synthesis ----------------------------------------------------------------

def test_default_synthetic_set_shape():
    fm, labels = synthesize(SynthCameraSet())
    assert (fm.d, fm.n) == (4096, 500)
    assert len(set(labels)) == 5
    fm.check_normalized(1e-10)


def test_one_image_per_camera():
    fm, labels = synthesize(SynthCameraSet(num_cameras=4, images_per_camera=1, d=256))
    assert fm.n == 4 and len(set(labels)) == 4


def test_same_seed_bit_identical():
    p = SynthCameraSet(num_cameras=2, images_per_camera=3, d=256, rng_seed=9)
    a, la = synthesize(p)
    b, lb = synthesize(p)
    assert a.X.tobytes() == b.X.tobytes() and a.ids == b.ids and la == lb


def test_signal_dominant_limit():
    fm, labels = synthesize(SynthCameraSet(num_cameras=3, images_per_camera=4, theta_variance=1e-10, rng_seed=1))
    C = fm.X.T @ fm.X
    lab = np.array(labels)
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(fm.n, dtype=bool)
    assert C[same & off].min() > 0.99
    assert np.abs(C[~same]).max() < 0.1


def test_synth_rejects_non_square_d():
    with pytest.raises(ValueError):
        SynthCameraSet(d=1000)


def test_fingerprint_matrix_validation():
    with pytest.raises(ValueError):
        FingerprintMatrix(np.zeros((4, 2)), ("a", "a"))
    with pytest.raises(ValueError):
        FingerprintMatrix(np.zeros((4, 2)), ("a",))
    fm = FingerprintMatrix(np.eye(3), ("a", "b", "c"))
    assert fm.subset([2, 0]).ids == ("c", "a")
