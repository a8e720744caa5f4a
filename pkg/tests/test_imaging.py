import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from pmiris.errors import InvalidParam, UnsupportedFormat
from pmiris.imaging import GrayImage, Kernel2D, convolve2d_wrap_x, correlate_bank, load_gray, \
    save_gray

from conftest import naive_correlate


def test_pgm_two_by_two(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = load_gray(p)
    assert (img.width, img.height) == (2, 2)
    assert img.data.ravel().tolist() == [0, 255, 128, 64]


def test_pgm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 1\n# depth\n255\n" + bytes([1, 2, 3]))
    assert load_gray(p).data.tolist() == [[1, 2, 3]]


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_round_trip(tmp_path, rng, suffix):
    data = rng.integers(0, 256, (17, 23), dtype=np.uint8)
    p = tmp_path / f"x{suffix}"
    save_gray(GrayImage(data), p)
    back = load_gray(p)
    assert np.array_equal(back.data, data)
    save_gray(back, tmp_path / f"y{suffix}")
    assert np.array_equal(load_gray(tmp_path / f"y{suffix}").data, data)


def test_png_16bit_rejected(tmp_path):
    p = tmp_path / "deep.png"
    Image.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(p)
    with pytest.raises(UnsupportedFormat):
        load_gray(p)


def test_pgm_16bit_rejected(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x01")
    with pytest.raises(UnsupportedFormat):
        load_gray(p)


def test_rgb_png_averaged(tmp_path):
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 30, 60, 90
    p = tmp_path / "rgb.png"
    Image.fromarray(rgb, mode="RGB").save(p)
    assert (load_gray(p).data == 60).all()


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_gray(tmp_path / "nope.pgm")


def test_not_an_image(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_text("hello")
    with pytest.raises(UnsupportedFormat):
        load_gray(p)


def test_gray_image_validation():
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        GrayImage(np.array([[300]]))
    img = GrayImage(np.array([[1, 2]], dtype=np.int64))
    assert img.data.dtype == np.uint8 and img.width == 2 and img.height == 1


@pytest.mark.parametrize("w", [np.ones((2, 3)), np.ones((3, 4)), np.array([[np.nan]]),
                               np.ones(3)])
def test_kernel_invariants(w):
    with pytest.raises(InvalidParam):
        Kernel2D(w)


def test_kernel_provenance():
    with pytest.raises(InvalidParam):
        Kernel2D(np.ones((1, 1)), "handmade")


def test_kernel_dict_round_trip(rng):
    k = Kernel2D(rng.standard_normal((3, 5)), "learned", "x")
    assert Kernel2D.from_dict(k.to_dict()) == k


def test_identity_kernel(rng):
    img = rng.random((6, 9))
    assert np.allclose(convolve2d_wrap_x(img, Kernel2D(np.ones((1, 1)))), img, atol=1e-12)


def test_constant_image(rng):
    w = rng.standard_normal((5, 7))
    out = convolve2d_wrap_x(np.full((8, 12), 3.0), Kernel2D(w))
    assert np.allclose(out, 3.0 * w.sum(), atol=1e-9)


def test_matches_naive_oracle_8x8(rng):
    img = rng.random((8, 8))
    w = rng.standard_normal((3, 3))
    assert np.abs(convolve2d_wrap_x(img, Kernel2D(w)) - naive_correlate(img, w)).max() < 1e-9


def test_kernel_wider_and_taller_than_image(rng):
    img = rng.random((3, 4))
    w = rng.standard_normal((7, 9))
    assert np.abs(convolve2d_wrap_x(img, Kernel2D(w)) - naive_correlate(img, w)).max() < 1e-9


def test_bank_shapes(rng):
    imgs = rng.random((2, 5, 8, 10))
    ks = [Kernel2D(rng.standard_normal((3, 3))), Kernel2D(rng.standard_normal((5, 1)))]
    out = correlate_bank(imgs, ks)
    assert out.shape == (2, 5, 2, 8, 10)
    assert np.allclose(out[1, 3, 1], naive_correlate(imgs[1, 3], ks[1].weights), atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    r = np.random.default_rng(seed)
    x, y = r.random((6, 10)), r.random((6, 10))
    k = Kernel2D(r.standard_normal((3, 5)))
    lhs = convolve2d_wrap_x(a * x + b * y, k)
    rhs = a * convolve2d_wrap_x(x, k) + b * convolve2d_wrap_x(y, k)
    assert np.abs(lhs - rhs).max() < 1e-9


@given(st.integers(0, 2 ** 32 - 1), st.integers(-20, 20))
def test_shift_equivariance(seed, s):
    r = np.random.default_rng(seed)
    x = r.random((5, 16))
    k = Kernel2D(r.standard_normal((3, 3)))
    a = convolve2d_wrap_x(np.roll(x, s, axis=1), k)
    b = np.roll(convolve2d_wrap_x(x, k), s, axis=1)
    assert np.abs(a - b).max() < 1e-9
