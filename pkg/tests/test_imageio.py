import numpy as np
import pytest

from glintlab import imageio


def test_pfm_round_trip(tmp_path, rng):
    img = rng.random((7, 5, 3)) * 100
    p = tmp_path / "a.pfm"
    imageio.write_pfm(img, p)
    head = p.read_bytes()[:20]
    assert head.startswith(b"PF\n5 7\n-1.0\n")
    np.testing.assert_array_equal(imageio.read_pfm(p), img.astype(np.float32))


def test_pfm_rows_are_stored_bottom_up(tmp_path):
    img = np.zeros((2, 1, 3))
    img[0] = 1.0  # top row
    p = tmp_path / "a.pfm"
    imageio.write_pfm(img, p)
    data = np.frombuffer(p.read_bytes()[len(b"PF\n1 2\n-1.0\n"):], dtype="<f4")
    np.testing.assert_array_equal(data, [0, 0, 0, 1, 1, 1])


def test_grayscale_pfm_is_expanded(tmp_path):
    p = tmp_path / "g.pfm"
    imageio.write_pfm(np.ones((3, 4)), p)
    assert imageio.read_pfm(p).shape == (3, 4, 3)


@pytest.mark.parametrize("bad", [np.full((2, 2, 3), np.nan), -np.ones((2, 2, 3)), np.ones((2, 2, 4))])
def test_invalid_images_rejected(tmp_path, bad):
    with pytest.raises(ValueError):
        imageio.write_pfm(bad, tmp_path / "x.pfm")


def test_truncated_pfm(tmp_path):
    p = tmp_path / "t.pfm"
    imageio.write_pfm(np.ones((4, 4, 3)), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(OSError):
        imageio.read_pfm(p)
    p.write_bytes(b"P6\n1 1\n255\n")
    with pytest.raises(OSError):
        imageio.read_pfm(p)


def test_tonemap_is_monotone_and_bounded():
    x = np.linspace(0, 100, 500)
    img = np.stack([x, x, x], axis=-1)[None]
    q = imageio.tonemap(img)[0, :, 0]
    assert q[0] == 0 and q[-1] <= 255
    assert np.all(np.diff(q.astype(int)) >= 0)
    # without tonemapping values clip at one
    assert imageio.tonemap(np.full((1, 1, 3), 2.0), enabled=False)[0, 0, 0] == 255


def test_ppm_round_trip(tmp_path, rng):
    img = rng.random((6, 9, 3))
    p = tmp_path / "a.ppm"
    imageio.write_ppm(img, p, exposure=2.0)
    np.testing.assert_array_equal(imageio.read_ppm(p), imageio.tonemap(img, 2.0))


def test_write_image_dispatch(tmp_path):
    img = np.ones((2, 2, 3))
    imageio.write_image(img, tmp_path / "a.pfm")
    imageio.write_image(img, tmp_path / "a.ppm")
    with pytest.raises(ValueError):
        imageio.write_image(img, tmp_path / "a.png")
