"""Turn predictions and report tables into PPM-ready RGB arrays.

Flow fields use the usual polar color wheel: hue encodes direction,
saturation encodes magnitude relative to the maximum, value stays 1, so zero
flow renders white.  Label maps reuse the generator's class palette and
disparities render as grayscale.  A tiny polyline plotter backs the report
images; no text, no external plotting dependency.
"""

from __future__ import annotations

import numpy as np

from .datagen import class_palette
from .errors import ShapeError

PLOT_COLORS = [
    (0.85, 0.20, 0.20),
    (0.15, 0.45, 0.80),
    (0.15, 0.65, 0.25),
    (0.80, 0.55, 0.10),
    (0.55, 0.25, 0.70),
    (0.10, 0.60, 0.60),
]


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB; all inputs share a shape, result is [3, ...]."""
    h = np.asarray(h, dtype=np.float64) % 1.0
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def flow_to_rgb(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Color-wheel rendering of a [2, H, W] flow field."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeError(f"flow must be [2,H,W], got {flow.shape}")
    u, v = flow[0], flow[1]
    mag = np.sqrt(u * u + v * v)
    if max_magnitude is None:
        max_magnitude = float(mag.max())
    hue = (np.arctan2(v, u) / (2.0 * np.pi)) % 1.0
    sat = mag / max_magnitude if max_magnitude > 0 else np.zeros_like(mag)
    return hsv_to_rgb(hue, np.clip(sat, 0.0, 1.0), np.ones_like(mag))


def labels_to_rgb(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    palette = class_palette(num_classes)
    return palette[labels].transpose(2, 0, 1)


def disparity_to_gray(disp: np.ndarray, max_disparity: float | None = None) -> np.ndarray:
    disp = np.asarray(disp, dtype=np.float64)
    if max_disparity is None:
        max_disparity = float(np.abs(disp).max())
    gray = np.abs(disp) / max_disparity if max_disparity > 0 else np.zeros_like(disp)
    return np.broadcast_to(np.clip(gray, 0.0, 1.0), (3,) + disp.shape).copy()


def magnitude_to_rgb(delta: np.ndarray, scale: float) -> np.ndarray:
    """|delta| * scale of the first three channels, clipped into [0, 1]."""
    delta = np.asarray(delta, dtype=np.float64)
    return np.clip(np.abs(delta[:3]) * scale, 0.0, 1.0)


def line_plot(series: dict, width: int = 480, height: int = 320) -> np.ndarray:
    """Render `{name: [(x, y), ...]}` polylines onto a white [3, H, W] canvas.

    Colors cycle through PLOT_COLORS in sorted-name order; axes are drawn in
    black along the left and bottom margins.
    """
    canvas = np.ones((3, height, width))
    margin = 24
    canvas[:, height - margin, margin:width - margin // 2] = 0.0
    canvas[:, margin // 2:height - margin + 1, margin] = 0.0
    points = [p for pts in series.values() for p in pts]
    if not points:
        return canvas
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def to_px(x, y):
        col = margin + (x - x_lo) / x_span * (width - margin - margin // 2 - 1)
        row = (height - margin) - (y - y_lo) / y_span * (height - margin - margin // 2 - 1)
        return row, col

    for k, name in enumerate(sorted(series)):
        color = np.asarray(PLOT_COLORS[k % len(PLOT_COLORS)])
        pts = sorted(series[name])
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            r0, c0 = to_px(x0, y0)
            r1, c1 = to_px(x1, y1)
            n = int(max(abs(r1 - r0), abs(c1 - c0), 1)) * 2 + 1
            rows = np.clip(np.round(np.linspace(r0, r1, n)).astype(int), 0, height - 1)
            cols = np.clip(np.round(np.linspace(c0, c1, n)).astype(int), 0, width - 1)
            canvas[:, rows, cols] = color[:, None]
        for x, y in pts:  # small square marker per data point
            r, c = to_px(x, y)
            r, c = int(round(r)), int(round(c))
            rr = slice(max(r - 1, 0), min(r + 2, height))
            cc = slice(max(c - 1, 0), min(c + 2, width))
            canvas[:, rr, cc] = color[:, None, None]
    return canvas
