import numpy as np
import pytest

from pedcascade.imageops import (
    Image,
    bilinear_resize,
    centered_gradients,
    read_pnm,
    sample_box_bilinear,
    triangle_blur,
    write_pnm,
)


def naive_sample(arr, x0, y0, w, h, out_h, out_w):
    """Scalar-loop reference for the clamped bilinear sampler."""
    H, W = arr.shape[:2]
    out = np.zeros((out_h, out_w) + arr.shape[2:])
    for i in range(out_h):
        for j in range(out_w):
            sx = min(max(x0 + (j + 0.5) * (w / out_w) - 0.5, 0.0), W - 1.0)
            sy = min(max(y0 + (i + 0.5) * (h / out_h) - 0.5, 0.0), H - 1.0)
            xf, yf = int(np.floor(sx)), int(np.floor(sy))
            tx, ty = sx - xf, sy - yf
            x1, y1 = min(xf + 1, W - 1), min(yf + 1, H - 1)
            top = arr[yf, xf] * (1 - tx) + arr[yf, x1] * tx
            bot = arr[y1, xf] * (1 - tx) + arr[y1, x1] * tx
            out[i, j] = top * (1 - ty) + bot * ty
    return out


class TestImage:
    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 4, 2)))

    def test_rejects_nan(self):
        a = np.zeros((4, 4))
        a[0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(a)

    def test_properties(self):
        img = Image(np.zeros((6, 8, 3)))
        assert (img.height, img.width, img.planes) == (6, 8, 3)
        assert Image(np.zeros((6, 8))).planes == 1


class TestPnmIo:
    def test_roundtrip_color(self, tmp_path):
        rng = np.random.default_rng(0)
        img = Image(rng.integers(0, 256, size=(10, 7, 3)) / 255.0)
        p = tmp_path / "a.ppm"
        write_pnm(p, img)
        back = read_pnm(p)
        assert np.allclose(back.data, img.data)

    def test_roundtrip_gray(self, tmp_path):
        img = Image(np.linspace(0, 1, 30).reshape(5, 6))
        p = tmp_path / "a.pgm"
        write_pnm(p, img)
        assert np.allclose(read_pnm(p).data, np.rint(img.data * 255) / 255)

    def test_reads_ascii_with_comments(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P2\n# comment line\n3 2\n255\n0 128 255\n10 20 30\n")
        img = read_pnm(p)
        assert img.data.shape == (2, 3)
        assert img.data[0, 1] == pytest.approx(128 / 255)

    def test_reads_ascii_color(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P3\n1 1\n255\n255 0 128\n")
        img = read_pnm(p)
        assert np.allclose(img.data[0, 0], [1.0, 0.0, 128 / 255])

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "x.ppm"
        p.write_bytes(b"JUNK")
        with pytest.raises(ValueError):
            read_pnm(p)


class TestBilinear:
    def test_identity_resize_is_exact(self):
        rng = np.random.default_rng(1)
        arr = rng.random((9, 13, 3))
        out = bilinear_resize(arr, 9, 13)
        assert np.array_equal(out, arr)

    def test_integer_aligned_crop_is_exact(self):
        rng = np.random.default_rng(2)
        arr = rng.random((20, 20))
        out = sample_box_bilinear(arr, 3.0, 5.0, 8.0, 6.0, 6, 8)
        assert np.array_equal(out, arr[5:11, 3:11])

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            arr = rng.random((12, 15, 3))
            x0, y0 = rng.uniform(-4, 8, 2)
            w, h = rng.uniform(3, 12, 2)
            oh, ow = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            got = sample_box_bilinear(arr, x0, y0, w, h, oh, ow)
            assert np.allclose(got, naive_sample(arr, x0, y0, w, h, oh, ow), atol=1e-12)

    def test_constant_image_stays_constant(self):
        arr = np.full((10, 10), 0.37)
        out = sample_box_bilinear(arr, -5.0, -5.0, 20.0, 20.0, 7, 7)
        assert np.allclose(out, 0.37)

    def test_out_of_bounds_replicates_border(self):
        arr = np.zeros((4, 4))
        arr[:, 0] = 1.0
        out = sample_box_bilinear(arr, -10.0, 0.0, 4.0, 4.0, 4, 4)
        assert np.allclose(out[:, 0], 1.0)

    def test_upscale_preserves_range(self):
        rng = np.random.default_rng(4)
        arr = rng.random((6, 6))
        out = bilinear_resize(arr, 17, 23)
        assert out.min() >= arr.min() - 1e-12
        assert out.max() <= arr.max() + 1e-12


class TestBlurAndGradients:
    def test_blur_preserves_constant(self):
        arr = np.full((8, 9), 2.5)
        assert np.allclose(triangle_blur(arr), 2.5)

    def test_blur_kernel_weights(self):
        arr = np.zeros((5, 5))
        arr[2, 2] = 16.0
        out = triangle_blur(arr)
        # separable [1,2,1]/4 x [1,2,1]/4 on the impulse
        expected = np.outer([1, 2, 1], [1, 2, 1]) / 16.0 * 16.0
        assert np.allclose(out[1:4, 1:4], expected)

    def test_blur_preserves_total_mass_interior(self):
        rng = np.random.default_rng(5)
        arr = np.zeros((11, 11))
        arr[3:8, 3:8] = rng.random((5, 5))
        assert triangle_blur(arr).sum() == pytest.approx(arr.sum())

    def test_gradients_of_linear_ramp(self):
        yy, xx = np.mgrid[0:8, 0:9].astype(float)
        gx, gy = centered_gradients(3.0 * xx + 2.0 * yy)
        assert np.allclose(gx[:, 1:-1], 3.0)
        assert np.allclose(gy[1:-1, :], 2.0)

    def test_gradient_borders_use_replication(self):
        plane = np.arange(5.0)[None, :].repeat(3, axis=0)
        gx, _ = centered_gradients(plane)
        # at the border, one side is replicated so the step is halved
        assert np.allclose(gx[:, 0], 0.5)
        assert np.allclose(gx[:, -1], 0.5)
