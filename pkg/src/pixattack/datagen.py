"""Synthetic scene generation for the three pixel-wise tasks.

Scenes are layered compositions of axis-aligned rectangles and ellipses over
a uniform background, painted back to front.  Every object owns a color (one
of the class palette entries), a full-frame noise texture, and a per-task
integer shift.  Because textures translate with their object, a second frame
or a stereo partner reproduces the first frame's values exactly wherever the
same surface stays visible, which the tests exploit as a geometric oracle.

Everything is reproducible bit for bit from (GeneratorSpec, scene seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .tasks import get_task


@dataclass(frozen=True)
class GeneratorSpec:
    """Knobs for the scene generator; validated on construction."""

    task: str
    height: int = 16
    width: int = 16
    num_classes: int = 5
    objects_min: int = 2
    objects_max: int = 4
    noise: float = 0.02
    max_displacement: int = 3
    background_flow: tuple[int, int] = (0, 0)   # (u, v) = (columns, rows)
    sparse_fraction: float = 0.0

    def __post_init__(self):
        get_task(self.task)
        for name, v in (("height", self.height), ("width", self.width)):
            if not 8 <= v <= 256:
                raise ConfigError(f"{name} must be in [8, 256], got {v}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ConfigError(
                f"object count range [{self.objects_min}, {self.objects_max}] is invalid")
        if not 0.0 <= self.noise <= 0.2:
            raise ConfigError(f"noise amplitude must be in [0, 0.2], got {self.noise}")
        limit = min(self.height, self.width) / 4
        if not 0 <= self.max_displacement < limit:
            raise ConfigError(
                f"max displacement must be in [0, {limit}) for this frame size")
        u, v = self.background_flow
        if int(u) != u or int(v) != v:
            raise ConfigError("background flow must be integral")
        if max(abs(u), abs(v)) > self.max_displacement:
            raise ConfigError("background flow exceeds max displacement")
        if not 0.0 <= self.sparse_fraction < 1.0:
            raise ConfigError(
                f"sparse fraction must be in [0, 1), got {self.sparse_fraction}")


@dataclass
class SceneSample:
    """One generated scene: inputs, ground truth, and validity."""

    task: str
    inputs: np.ndarray                      # [3,H,W] or [6,H,W] in [0, 1]
    valid_mask: np.ndarray                  # bool [H,W]
    seed: int
    labels: Optional[np.ndarray] = None     # int [H,W], segmentation
    flow: Optional[np.ndarray] = None       # float [2,H,W] = (u, v), flow
    disparity: Optional[np.ndarray] = None  # float [H,W], disparity
    occlusion: Optional[np.ndarray] = None  # bool [H,W], disparity


def class_palette(num_classes: int) -> np.ndarray:
    """Distinct base colors, one per class, kept inside [0.25, 0.75] so the
    maximum noise amplitude cannot push pixels out of [0, 1].  Class 0 is the
    neutral background gray."""
    pal = np.full((num_classes, 3), 0.5)
    for c in range(1, num_classes):
        hue = (c - 1) / max(num_classes - 1, 1)
        pal[c] = 0.25 + 0.5 * np.asarray(_hsv_to_rgb(hue, 0.85, 1.0))
    return pal


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))[i]


class _SceneObject:
    __slots__ = ("kind", "cls", "cy", "cx", "ry", "rx", "texture", "shift")

    def __init__(self, kind, cls, cy, cx, ry, rx, texture, shift):
        self.kind = kind
        self.cls = cls
        self.cy = cy
        self.cx = cx
        self.ry = ry
        self.rx = rx
        self.texture = texture  # (3,H,W) additive noise, moves with the object
        self.shift = shift      # (dy, dx) rows/columns, integers

    def footprint(self, h: int, w: int, dy: int = 0, dx: int = 0) -> np.ndarray:
        y = np.arange(h, dtype=np.float64)[:, None] - (self.cy + dy)
        x = np.arange(w, dtype=np.float64)[None, :] - (self.cx + dx)
        if self.kind == "rect":
            return (np.abs(y) <= self.ry) & (np.abs(x) <= self.rx)
        return (y / self.ry) ** 2 + (x / self.rx) ** 2 <= 1.0


def _draw_objects(rng, spec: GeneratorSpec) -> list[_SceneObject]:
    h, w, d = spec.height, spec.width, spec.max_displacement
    count = int(rng.integers(spec.objects_min, spec.objects_max + 1))
    objects = []
    for _ in range(count):
        kind = "rect" if rng.integers(0, 2) == 0 else "ellipse"
        cls = int(rng.integers(1, spec.num_classes))
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry = rng.uniform(h / 8, h / 4)
        rx = rng.uniform(w / 8, w / 4)
        texture = spec.noise * rng.uniform(-1.0, 1.0, size=(3, h, w))
        if spec.task == "flow":
            dx, dy = (int(s) for s in rng.integers(-d, d + 1, size=2))
            shift = (dy, dx)
        elif spec.task == "disparity":
            disp = int(rng.integers(1, d + 1)) if d > 0 else 0
            shift = (0, -disp)  # the right view sees nearer content further left
        else:
            shift = (0, 0)
        objects.append(_SceneObject(kind, cls, cy, cx, ry, rx, texture, shift))
    return objects


def _background(rng, spec: GeneratorSpec, palette) -> np.ndarray:
    noise = spec.noise * rng.uniform(-1.0, 1.0, size=(3, spec.height, spec.width))
    return palette[0][:, None, None] + noise


def _sparse_valid(rng, spec: GeneratorSpec) -> np.ndarray:
    valid = np.ones((spec.height, spec.width), dtype=bool)
    if spec.sparse_fraction > 0.0:
        valid = rng.random((spec.height, spec.width)) >= spec.sparse_fraction
    return valid


def _paint(canvas: np.ndarray, obj: _SceneObject, palette, dy: int = 0, dx: int = 0):
    """Paint one object (color + its translated texture) onto [3,H,W] canvas.
    Returns the footprint painted."""
    fp = obj.footprint(canvas.shape[1], canvas.shape[2], dy, dx)
    tex = np.roll(obj.texture, (dy, dx), axis=(1, 2)) if (dy or dx) else obj.texture
    layer = palette[obj.cls][:, None, None] + tex
    canvas[:, fp] = layer[:, fp]
    return fp


def gen_segmentation(spec: GeneratorSpec, seed: int) -> SceneSample:
    """One [3,H,W] image with per-pixel class labels."""
    if spec.task != "segmentation":
        raise ConfigError(f"generator spec is for task {spec.task!r}")
    rng = np.random.default_rng(seed)
    palette = class_palette(spec.num_classes)
    objects = _draw_objects(rng, spec)
    image = _background(rng, spec, palette)
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    for obj in objects:
        fp = _paint(image, obj, palette)
        labels[fp] = obj.cls
    valid = _sparse_valid(rng, spec)
    return SceneSample(task="segmentation", inputs=np.clip(image, 0.0, 1.0),
                       valid_mask=valid, seed=seed, labels=labels)


def gen_flow(spec: GeneratorSpec, seed: int) -> SceneSample:
    """Two frames with dense ground-truth flow from frame 0 to frame 1.

    flow[0] is the horizontal displacement u (columns), flow[1] the vertical
    displacement v (rows).  Pixels whose target lands outside the frame are
    invalid; the background translates periodically by `background_flow`.
    """
    if spec.task != "flow":
        raise ConfigError(f"generator spec is for task {spec.task!r}")
    rng = np.random.default_rng(seed)
    palette = class_palette(spec.num_classes)
    objects = _draw_objects(rng, spec)
    bg_u, bg_v = (int(c) for c in spec.background_flow)

    frame0 = _background(rng, spec, palette)
    frame1 = np.roll(frame0, (bg_v, bg_u), axis=(1, 2))
    flow = np.empty((2, spec.height, spec.width))
    flow[0], flow[1] = float(bg_u), float(bg_v)
    for obj in objects:
        dy, dx = obj.shift
        fp0 = _paint(frame0, obj, palette)
        _paint(frame1, obj, palette, dy=dy, dx=dx)
        flow[0][fp0] = float(dx)
        flow[1][fp0] = float(dy)

    ys = np.arange(spec.height)[:, None] + flow[1]
    xs = np.arange(spec.width)[None, :] + flow[0]
    inside = (ys >= 0) & (ys < spec.height) & (xs >= 0) & (xs < spec.width)
    valid = inside & _sparse_valid(rng, spec)
    inputs = np.clip(np.concatenate([frame0, frame1], axis=0), 0.0, 1.0)
    return SceneSample(task="flow", inputs=inputs, valid_mask=valid, seed=seed, flow=flow)


def gen_stereo(spec: GeneratorSpec, seed: int) -> SceneSample:
    """A left/right pair with ground-truth disparity and occlusion.

    Nearer objects carry larger disparity and appear shifted further left in
    the right view; painting runs far-to-near so visibility is depth
    consistent in both views.  A left pixel is occluded when its projection
    into the right view is covered by nearer content or leaves the frame.
    """
    if spec.task != "disparity":
        raise ConfigError(f"generator spec is for task {spec.task!r}")
    rng = np.random.default_rng(seed)
    palette = class_palette(spec.num_classes)
    objects = _draw_objects(rng, spec)
    objects.sort(key=lambda o: -o.shift[1])  # ascending disparity, stable

    left = _background(rng, spec, palette)
    right = left.copy()
    owner_left = np.full((spec.height, spec.width), -1, dtype=np.int64)
    owner_right = np.full_like(owner_left, -1)
    disparity = np.zeros((spec.height, spec.width))
    for idx, obj in enumerate(objects):
        dy, dx = obj.shift
        fp_left = _paint(left, obj, palette)
        fp_right = _paint(right, obj, palette, dy=dy, dx=dx)
        owner_left[fp_left] = idx
        owner_right[fp_right] = idx
        disparity[fp_left] = float(-dx)

    xs = np.arange(spec.width)[None, :] - disparity.astype(np.int64)
    ys = np.broadcast_to(np.arange(spec.height)[:, None], xs.shape)
    outside = xs < 0
    xs_safe = np.where(outside, 0, xs)
    occlusion = outside | (owner_right[ys, xs_safe] != owner_left)
    valid = _sparse_valid(rng, spec)
    inputs = np.clip(np.concatenate([left, right], axis=0), 0.0, 1.0)
    return SceneSample(task="disparity", inputs=inputs, valid_mask=valid, seed=seed,
                       disparity=disparity, occlusion=occlusion)


def generate_scene(spec: GeneratorSpec, seed: int) -> SceneSample:
    """Dispatch to the task-specific generator."""
    if spec.task == "segmentation":
        return gen_segmentation(spec, seed)
    if spec.task == "flow":
        return gen_flow(spec, seed)
    return gen_stereo(spec, seed)


def generate_dataset(spec: GeneratorSpec, base_seed: int, count: int) -> list[SceneSample]:
    """`count` scenes with consecutive seeds starting at `base_seed`."""
    if count < 1:
        raise ConfigError(f"scene count must be positive, got {count}")
    return [generate_scene(spec, base_seed + i) for i in range(count)]
