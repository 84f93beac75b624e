"""Map-construction tests: normalization, padding, quantization, export."""

import numpy as np
import pytest

from taalab import maps


class FakeVessel:
    def __init__(self, r_sys, r_dia):
        self.r_sys = np.asarray(r_sys, dtype=float)
        self.r_dia = np.asarray(r_dia, dtype=float)


def test_dilatation_uniform_vessel():
    v = FakeVessel(np.full((5, 4), 0.9), np.full((5, 4), 0.85))
    m = maps.dilatation_map(v)
    assert m.kind == "dilatation" and m.fmt == "heat"
    assert m.values.shape == (5, 5)
    assert np.allclose(m.values, 1.0, atol=1e-15)


def test_dilatation_scale_invariance():
    rng = np.random.default_rng(4)
    r = rng.uniform(0.8, 1.3, size=(7, 6))
    a = maps.dilatation_map(FakeVessel(r, r)).values
    b = maps.dilatation_map(FakeVessel(2 * r, 2 * r)).values
    assert np.allclose(a, b, rtol=1e-15, atol=0)


def test_distensibility_examples():
    r_dia = np.full((5, 4), 1.0)
    assert np.array_equal(
        maps.distensibility_map(FakeVessel(r_dia, r_dia)).values, np.zeros((5, 5)))
    m = maps.distensibility_map(FakeVessel(1.1 * r_dia, r_dia))
    assert np.allclose(m.values, 0.1, atol=1e-12)


def test_pad_unpad_roundtrip():
    rng = np.random.default_rng(1)
    raw = rng.normal(size=(41, 40))
    padded = maps.pad_circular(raw)
    assert padded.shape == (41, 41)
    assert np.array_equal(padded[:, -1], padded[:, 0])
    assert np.array_equal(maps.unpad_circular(padded), raw)
    const = maps.pad_circular(np.full((4, 3), 2.0))
    assert np.all(const == 2.0)
    with pytest.raises(ValueError):
        maps.pad_circular(np.zeros(5))
    with pytest.raises(ValueError):
        maps.unpad_circular(padded + np.eye(41) * 0.1)


def test_quantize_endpoints_and_midpoint():
    vr = (1.0, 3.0)
    assert maps.quantize(1.0, vr) == 0
    assert maps.quantize(3.0, vr) == 255
    assert maps.quantize(0.0, vr) == 0      # clamped below
    assert maps.quantize(9.0, vr) == 255    # clamped above
    assert maps.quantize(2.0, vr) == 128    # round half away from zero


def test_quantize_monotone():
    rng = np.random.default_rng(2)
    v = np.sort(rng.uniform(-0.5, 0.6, size=2000))
    g = maps.quantize(v, (0.0, 0.5))
    assert np.all(np.diff(g.astype(int)) >= 0)


def test_roundtrip_error_bound_exhaustive():
    # every representable code reconstructs within half a quantization step
    vr = (0.9, 1.7)
    step = (vr[1] - vr[0]) / 255.0
    codes = np.arange(256, dtype=np.uint8)
    centers = maps.dequantize(codes, vr)
    # any in-range value quantizing to code g lies within step/2 of center
    probe = np.linspace(vr[0], vr[1], 20001)
    g = maps.quantize(probe, vr)
    err = np.abs(probe - maps.dequantize(g, vr))
    assert err.max() <= (vr[1] - vr[0]) / 510.0 + 1e-12
    assert np.array_equal(maps.quantize(centers, vr), codes)


def test_to_grayscale_wraps_quantize():
    rng = np.random.default_rng(3)
    heat = maps.FieldMap(rng.uniform(0.9, 1.7, size=(41, 40)), "dilatation")
    gray = maps.to_grayscale(heat, maps.DILATATION_RANGE)
    assert gray.fmt == "grayscale"
    assert gray.values.dtype == np.uint8
    assert gray.vrange == maps.DILATATION_RANGE
    with pytest.raises(ValueError):
        maps.to_grayscale(gray, maps.DILATATION_RANGE)


def test_heat_and_gray_argmax_agree_when_unique():
    rng = np.random.default_rng(5)
    v = rng.uniform(1.0, 1.5, size=(41, 41))
    v[13, 21] = 1.69  # unique max, more than 1 LSB above the rest
    gray = maps.quantize(v, maps.DILATATION_RANGE)
    assert np.unravel_index(np.argmax(v), v.shape) == \
        np.unravel_index(np.argmax(gray), gray.shape)


def test_grayscale_requires_uint8_and_range():
    with pytest.raises(ValueError):
        maps.FieldMap(np.zeros((4, 4)), "dilatation", fmt="grayscale",
                      vrange=(0, 1))
    with pytest.raises(ValueError):
        maps.FieldMap(np.zeros((4, 4), dtype=np.uint8), "dilatation",
                      fmt="grayscale")
    with pytest.raises(ValueError):
        maps.quantize(np.zeros(3), (1.0, 1.0))


def test_png_exports(tmp_path):
    from PIL import Image
    rng = np.random.default_rng(6)
    heat = maps.FieldMap(rng.uniform(0.9, 1.7, size=(41, 41)), "dilatation")
    gray = maps.to_grayscale(heat, maps.DILATATION_RANGE)

    gray_path = tmp_path / "map_gray.png"
    maps.write_grayscale_png(gray, gray_path)
    img = Image.open(gray_path)
    assert img.mode == "L" and img.size == (41, 41)
    assert np.array_equal(np.asarray(img), gray.values)

    heat_path = tmp_path / "map_heat.png"
    maps.write_heat_png(heat, heat_path, vrange=maps.DILATATION_RANGE)
    img2 = Image.open(heat_path)
    assert img2.mode == "RGB"
    assert img2.size[0] > 41 * 8  # map plus the rendered value bar
