import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslens.errors import TransformSpecError
from biaslens.transforms import (Compose, Fourier, Identity, Median, Wavelet,
                                 apply_transform, contains_fourier,
                                 default_audit_transforms, dft2_forward,
                                 dwt2_single_level, format_transform,
                                 fourier_log_magnitude_image,
                                 idwt2_single_level, median_filter,
                                 parse_transform, parse_transform_list,
                                 wavelet_mosaic_image)


# --- independent oracles -----------------------------------------------------

def naive_dft2(f):
    """Literal O(N^4) double sum, kept independent of the FFT path."""
    h, w = f.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for x in range(h):
                for y in range(w):
                    acc += f[x, y] * np.exp(-2j * np.pi * (u * x / h + v * y / w))
            out[u, v] = acc
    return out


def naive_median(channel, window):
    """Sort-the-neighborhood median with replicate borders."""
    h, w = channel.shape
    r = window // 2
    out = np.empty_like(channel)
    for i in range(h):
        for j in range(w):
            vals = []
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), w - 1)
                    vals.append(channel[ii, jj])
            vals.sort()
            out[i, j] = vals[len(vals) // 2]
    return out


# --- DFT ---------------------------------------------------------------------

class TestDft2:
    def test_constant_has_only_dc(self):
        f = np.full((4, 4), 0.5)
        spec = dft2_forward(f)
        assert spec[0, 0] == pytest.approx(8.0)
        spec[0, 0] = 0
        assert np.max(np.abs(spec)) < 1e-12

    def test_impulse_has_flat_spectrum(self):
        f = np.zeros((4, 4))
        f[0, 0] = 1.0
        np.testing.assert_allclose(np.abs(dft2_forward(f)), 1.0, atol=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            f = rng.random((8, 8))
            np.testing.assert_allclose(dft2_forward(f), naive_dft2(f),
                                       atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            h, w = rng.integers(2, 33, size=2)
            f = rng.random((h, w))
            spatial = np.sum(f * f)
            freq = np.sum(np.abs(dft2_forward(f)) ** 2) / (h * w)
            assert abs(spatial - freq) / spatial < 1e-9

    def test_cyclic_shift_invariant_magnitude(self):
        rng = np.random.default_rng(2)
        f = rng.random((8, 8))
        g = np.roll(f, (3, 5), axis=(0, 1))
        np.testing.assert_allclose(np.abs(dft2_forward(f)),
                                   np.abs(dft2_forward(g)), atol=1e-9)


class TestFourierImage:
    def test_constant_image_is_single_center_pixel(self):
        img = np.full((8, 8, 1), 0.3)
        out = fourier_log_magnitude_image(img)
        assert out[4, 4, 0] == pytest.approx(1.0)
        out[4, 4, 0] = 0.0
        assert np.max(out) == 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        img = rng.random((8, 8, 3))
        shifted = np.roll(img, (3, 5), axis=(0, 1))
        np.testing.assert_allclose(fourier_log_magnitude_image(img),
                                   fourier_log_magnitude_image(shifted),
                                   atol=1e-9)

    def test_checkerboard_peaks_at_nyquist(self):
        yy, xx = np.mgrid[0:8, 0:8]
        img = ((yy + xx) % 2).astype(float)[:, :, None]
        # oracle: the naive DFT of the checkerboard concentrates at DC
        # and the (4, 4) Nyquist bin
        spec = np.abs(naive_dft2(img[:, :, 0]))
        assert spec[4, 4] == pytest.approx(32.0)
        out = fourier_log_magnitude_image(img)
        # Nyquist lands on (0, 0) after centering the DC at (4, 4)
        assert out[0, 0, 0] == pytest.approx(np.max(out))
        assert out[0, 0, 0] == pytest.approx(1.0)

    def test_preserves_shape_and_range(self):
        img = np.random.default_rng(4).random((6, 10, 3))
        out = fourier_log_magnitude_image(img)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


# --- DWT ---------------------------------------------------------------------

class TestDwt2:
    def test_constant_input_haar(self):
        sub = dwt2_single_level(np.full((4, 4), 0.25), "haar")
        np.testing.assert_allclose(sub.ll, 0.5, atol=1e-12)
        for band in (sub.lh, sub.hl, sub.hh):
            np.testing.assert_allclose(band, 0.0, atol=1e-12)

    def test_2x2_haar_closed_form(self):
        a, b, c, d = 0.9, 0.1, 0.4, 0.7
        sub = dwt2_single_level(np.array([[a, b], [c, d]]), "haar")
        assert sub.ll[0, 0] == pytest.approx((a + b + c + d) / 2)
        assert sub.lh[0, 0] == pytest.approx((a - b + c - d) / 2)
        assert sub.hl[0, 0] == pytest.approx((a + b - c - d) / 2)
        assert sub.hh[0, 0] == pytest.approx((a - b - c + d) / 2)

    @pytest.mark.parametrize("family", ["haar", "db2", "db3", "db4"])
    def test_roundtrip_even_dims(self, family):
        rng = np.random.default_rng(5)
        for shape in [(6, 6), (8, 12), (16, 16)]:
            x = rng.random(shape)
            rec = idwt2_single_level(dwt2_single_level(x, family), family)
            assert np.max(np.abs(rec - x)) < 1e-10

    @pytest.mark.parametrize("family", ["haar", "db2"])
    def test_energy_preservation(self, family):
        rng = np.random.default_rng(6)
        for _ in range(10):
            h, w = 2 * rng.integers(1, 17, size=2)
            x = rng.random((h, w))
            sub = dwt2_single_level(x, family)
            e_sub = sum(np.sum(b * b) for b in (sub.ll, sub.lh, sub.hl, sub.hh))
            e_x = np.sum(x * x)
            assert abs(e_sub - e_x) / e_x < 1e-9

    def test_odd_dims_padded(self):
        sub = dwt2_single_level(np.random.default_rng(7).random((5, 7)), "haar")
        assert sub.ll.shape == (3, 4)
        assert sub.lh.shape == sub.hl.shape == sub.hh.shape == (3, 4)

    def test_too_small_rejected(self):
        with pytest.raises(TransformSpecError):
            dwt2_single_level(np.ones((1, 4)), "haar")

    def test_db2_matches_closed_form_coefficients(self):
        from biaslens.transforms import _wavelet_filters
        lo, hi = _wavelet_filters("db2")
        s3 = np.sqrt(3.0)
        expected = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * np.sqrt(2))
        np.testing.assert_allclose(lo, expected, atol=1e-12)
        np.testing.assert_allclose(hi, [expected[3], -expected[2],
                                        expected[1], -expected[0]], atol=1e-12)


class TestWaveletMosaic:
    def test_constant_input_quadrants(self):
        img = np.full((4, 4, 1), 0.8)
        out = wavelet_mosaic_image(img)
        # LL is constant, so min-max maps it to zero too; no detail anywhere
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_output_dims_match_even_input(self):
        img = np.random.default_rng(8).random((10, 6, 3))
        assert wavelet_mosaic_image(img).shape == img.shape

    def test_quadrants_equal_normalized_subbands(self):
        rng = np.random.default_rng(9)
        img = rng.random((8, 8, 1))
        sub = dwt2_single_level(img[:, :, 0], "haar")
        out = wavelet_mosaic_image(img, "haar")

        def norm(b):
            return (b - b.min()) / (b.max() - b.min())

        np.testing.assert_allclose(out[:4, :4, 0], norm(sub.ll), atol=1e-12)
        np.testing.assert_allclose(out[:4, 4:, 0], norm(sub.lh), atol=1e-12)
        np.testing.assert_allclose(out[4:, :4, 0], norm(sub.hl), atol=1e-12)
        np.testing.assert_allclose(out[4:, 4:, 0], norm(sub.hh), atol=1e-12)

    def test_approx_mode_upsamples_ll(self):
        img = np.random.default_rng(10).random((8, 8, 1))
        out = wavelet_mosaic_image(img, "haar", output="approx")
        assert out.shape == img.shape
        # nearest-neighbor upsample: 2x2 blocks are constant
        blocks = out[:, :, 0].reshape(4, 2, 4, 2)
        assert np.all(blocks == blocks[:, :1, :, :1])


# --- median ------------------------------------------------------------------

class TestMedianFilter:
    def test_constant_unchanged(self):
        img = np.full((7, 7, 1), 0.42)
        np.testing.assert_array_equal(median_filter(img, 5), img)

    def test_impulse_suppressed(self):
        img = np.zeros((9, 9, 1))
        img[4, 4, 0] = 1.0
        np.testing.assert_array_equal(median_filter(img, 5), np.zeros_like(img))

    @pytest.mark.parametrize("window", [3, 5, 7])
    def test_matches_naive_oracle(self, window):
        rng = np.random.default_rng(11)
        img = rng.random((9, 9, 1))
        expected = naive_median(img[:, :, 0], window)
        np.testing.assert_array_equal(median_filter(img, window)[:, :, 0],
                                      expected)

    def test_idempotent_on_step_image(self):
        img = np.zeros((8, 8, 1))
        img[:, 4:] = 1.0
        once = median_filter(img, 3)
        np.testing.assert_array_equal(median_filter(once, 3), once)

    def test_even_window_rejected(self):
        with pytest.raises(TransformSpecError):
            median_filter(np.zeros((4, 4, 1)), 4)


# --- spec grammar and application ---------------------------------------------

class TestSpecGrammar:
    @pytest.mark.parametrize("text,spec", [
        ("identity", Identity()),
        ("fourier", Fourier()),
        ("wavelet:haar", Wavelet("haar")),
        ("wavelet:db2", Wavelet("db2")),
        ("wavelet:haar:approx", Wavelet("haar", "approx")),
        ("median:5", Median(5)),
        ("median:5+wavelet:haar", Compose((Median(5), Wavelet("haar")))),
    ])
    def test_parse_and_format_roundtrip(self, text, spec):
        assert parse_transform(text) == spec
        assert parse_transform(format_transform(spec)) == spec

    @pytest.mark.parametrize("bad", [
        "wavelet:qux", "median:4", "median:1", "median:x", "nope",
        "wavelet", "fourier:2", "wavelet:db1",
    ])
    def test_bad_tokens_rejected(self, bad):
        with pytest.raises(TransformSpecError):
            parse_transform(bad)

    def test_parse_list(self):
        specs = parse_transform_list("fourier,median:3")
        assert specs == [Fourier(), Median(3)]

    def test_default_audit_list(self):
        assert default_audit_transforms() == [
            Fourier(), Wavelet("haar"), Median(5),
            Compose((Median(5), Wavelet("haar"))),
        ]

    def test_contains_fourier(self):
        assert contains_fourier(Fourier())
        assert contains_fourier(Compose((Median(3), Fourier())))
        assert not contains_fourier(Wavelet("haar"))


class TestApplyTransform:
    def test_identity(self):
        img = np.random.default_rng(12).random((6, 6, 1))
        np.testing.assert_array_equal(apply_transform(Identity(), img), img)

    def test_compose_equals_sequential(self):
        img = np.random.default_rng(13).random((8, 8, 1))
        composed = apply_transform(
            Compose((Median(5), Wavelet("haar"))), img)
        sequential = wavelet_mosaic_image(median_filter(img, 5), "haar")
        np.testing.assert_array_equal(composed, sequential)

    def test_nested_compose_rejected(self):
        inner = Compose((Median(3),))
        with pytest.raises(TransformSpecError):
            apply_transform(Compose((inner,)), np.zeros((4, 4, 1)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from(
        ["fourier", "wavelet:haar", "wavelet:db2", "median:3",
         "median:3+wavelet:haar"]))
    def test_outputs_finite_and_channel_preserving(self, seed, text):
        img = np.random.default_rng(seed).random((8, 8, 3))
        out = apply_transform(parse_transform(text), img)
        assert np.all(np.isfinite(out))
        assert out.shape[2] == 3

    def test_pure_function(self):
        img = np.random.default_rng(14).random((8, 8, 1))
        before = img.copy()
        a = apply_transform(Median(3), img)
        b = apply_transform(Median(3), img)
        np.testing.assert_array_equal(img, before)
        np.testing.assert_array_equal(a, b)
