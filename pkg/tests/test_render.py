import numpy as np
import pytest

from pixattack.datagen import class_palette
from pixattack.errors import ShapeError
from pixattack.render import (
    disparity_to_gray,
    flow_to_rgb,
    hsv_to_rgb,
    labels_to_rgb,
    line_plot,
    magnitude_to_rgb,
)


def test_hsv_primaries():
    rgb = hsv_to_rgb(np.array([0.0, 1 / 3, 2 / 3]), np.ones(3), np.ones(3))
    assert rgb[:, 0].tolist() == [1.0, 0.0, 0.0]
    assert rgb[:, 1].tolist() == [0.0, 1.0, 0.0]
    assert rgb[:, 2].tolist() == [0.0, 0.0, 1.0]


def test_hsv_zero_saturation_is_gray():
    rgb = hsv_to_rgb(np.full((2, 2), 0.37), np.zeros((2, 2)), np.full((2, 2), 0.6))
    assert np.all(rgb == 0.6)
    assert rgb.shape == (3, 2, 2)


def test_flow_rendering_contract():
    flow = np.zeros((2, 4, 4))
    flow[0, 0, 0] = 2.0
    rgb = flow_to_rgb(flow)
    assert rgb.shape == (3, 4, 4)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0
    # zero flow is fully desaturated
    assert np.all(rgb[:, 1:, 1:] == 1.0)
    with pytest.raises(ShapeError):
        flow_to_rgb(np.zeros((3, 4, 4)))


def test_flow_rendering_of_still_fields_is_white():
    rgb = flow_to_rgb(np.zeros((2, 3, 3)))
    assert np.all(rgb == 1.0)


def test_labels_rendering_uses_the_palette():
    labels = np.array([[0, 1], [2, 0]])
    rgb = labels_to_rgb(labels, 3)
    pal = class_palette(3)
    assert rgb.shape == (3, 2, 2)
    assert np.array_equal(rgb[:, 0, 1], pal[1])
    assert np.array_equal(rgb[:, 1, 0], pal[2])


def test_disparity_rendering_normalizes():
    disp = np.array([[0.0, 2.0], [4.0, 1.0]])
    gray = disparity_to_gray(disp)
    assert gray.shape == (3, 2, 2)
    assert gray[0, 1, 0] == 1.0
    assert gray[0, 0, 1] == 0.5
    assert np.all(disparity_to_gray(np.zeros((2, 2))) == 0.0)


def test_magnitude_rendering_scales_and_clips():
    delta = np.full((3, 2, 2), -0.02)
    out = magnitude_to_rgb(delta, scale=10.0)
    assert np.all(out == pytest.approx(0.2))
    assert np.all(magnitude_to_rgb(delta, scale=1000.0) == 1.0)


def test_line_plot_draws_on_white():
    img = line_plot({"a": [(0, 0), (1, 1)], "b": [(0, 1), (1, 0)]})
    assert img.shape == (3, 320, 480)
    assert img.min() >= 0.0 and img.max() <= 1.0
    # something other than the white background and black axes got painted
    colored = (img != 0.0).any(axis=0) & (img != 1.0).any(axis=0)
    assert colored.any()


def test_line_plot_empty_series_gives_bare_axes():
    img = line_plot({})
    assert img.shape == (3, 320, 480)
    # axes only: pure black and pure white pixels
    assert set(np.unique(img).tolist()) == {0.0, 1.0}


def test_line_plot_is_deterministic():
    series = {"m": [(0, 2.0), (1, 1.0), (2, 4.0)]}
    assert line_plot(series).tobytes() == line_plot(series).tobytes()
