"""Bit-exact file formats: binary PPM/PGM images, .flo flow fields, masks.

Images quantize [0, 1] floats to 8 bits with round(255 * v); flow fields are
stored losslessly as little-endian float32.  Readers validate magic numbers,
header syntax, and payload sizes, and raise FormatError on anything off.

A scene directory holds one generated scene:

    scene_{seed}/frame0.ppm              input image (left image for stereo)
    scene_{seed}/frame1.ppm              second frame / right image
    scene_{seed}/labels.pgm              segmentation class ids
    scene_{seed}/gt.flo                  ground-truth flow (u, v)
    scene_{seed}/disp.pgm                integer disparities
    scene_{seed}/occ.pgm                 occlusion mask, 0 or 255
    scene_{seed}/mask.pgm                validity mask, 0 or 255
"""

from __future__ import annotations

import os
import re
import struct

import numpy as np

from .datagen import SceneSample
from .errors import FormatError

FLO_MAGIC = 202021.25
_MAX_PIXELS = 1 << 26  # refuse absurd headers before allocating


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0 or width * height > _MAX_PIXELS:
        raise FormatError(f"dimension overflow: {width} x {height}")


# -- netpbm ------------------------------------------------------------------


def _parse_pnm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload offset) of a binary netpbm file."""
    if raw[:2] != magic:
        raise FormatError(f"{path}: bad magic {raw[:2]!r}, expected {magic!r}")
    i, n, fields = 2, len(raw), []
    while len(fields) < 3:
        while i < n:
            c = raw[i:i + 1]
            if c in b" \t\r\n":
                i += 1
            elif c == b"#":
                nl = raw.find(b"\n", i)
                i = n if nl < 0 else nl + 1
            else:
                break
        j = i
        while j < n and raw[j:j + 1].isdigit():
            j += 1
        if j == i:
            raise FormatError(f"{path}: malformed header, expected an integer")
        fields.append(int(raw[i:j]))
        i = j
    if i >= n or raw[i:i + 1] not in b" \t\r\n":
        raise FormatError(f"{path}: missing whitespace after maxval")
    width, height, maxval = fields
    _check_dims(width, height)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    return width, height, maxval, i + 1


def write_ppm(path, image: np.ndarray) -> None:
    """Write a [3, H, W] float image in [0, 1] as binary 8-bit PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"PPM wants a [3,H,W] image, got {image.shape}")
    q = np.clip(np.round(255.0 * image), 0, 255).astype(np.uint8)
    _, h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a [3, H, W] float array with values q / 255."""
    with open(path, "rb") as fh:
        raw = fh.read()
    w, h, _, off = _parse_pnm_header(raw, b"P6", path)
    expected = 3 * w * h
    payload = raw[off:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, expected {expected}")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return q.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, values: np.ndarray) -> None:
    """Write an integer [H, W] array with values in [0, 255] as binary PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise FormatError(f"PGM wants a [H,W] array, got {arr.shape}")
    rounded = np.rint(arr)
    if not np.array_equal(rounded, arr) or rounded.min() < 0 or rounded.max() > 255:
        raise FormatError("PGM values must be integers in [0, 255]")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rounded.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    w, h, _, off = _parse_pnm_header(raw, b"P5", path)
    payload = raw[off:]
    if len(payload) != w * h:
        raise FormatError(f"{path}: payload holds {len(payload)} bytes, expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0))


def read_mask(path) -> np.ndarray:
    values = read_pgm(path)
    if not np.isin(values, (0, 255)).all():
        raise FormatError(f"{path}: mask values must be 0 or 255")
    return values == 255


# -- middlebury-style flow files ----------------------------------------------


def write_flo(path, flow: np.ndarray) -> None:
    """Write a [2, H, W] flow field: float32 magic, int32 width and height,
    then row-major interleaved (u, v) float32 pairs, all little-endian."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FormatError(f".flo wants a [2,H,W] flow, got {flow.shape}")
    _, h, w = flow.shape
    with open(path, "wb") as fh:
        fh.write(np.float32(FLO_MAGIC).tobytes())
        fh.write(struct.pack("<ii", w, h))
        fh.write(flow.transpose(1, 2, 0).astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise FormatError(f"{path}: too short for a .flo header")
    magic = np.frombuffer(raw[:4], dtype="<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad magic {magic!r}")
    w, h = struct.unpack_from("<ii", raw, 4)
    _check_dims(w, h)
    expected = 8 * w * h
    if len(raw) - 12 != expected:
        raise FormatError(f"{path}: payload holds {len(raw) - 12} bytes, expected {expected}")
    uv = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w, 2)
    return uv.transpose(2, 0, 1).astype(np.float64)


# -- scene directories ---------------------------------------------------------


def save_scene(sample: SceneSample, root) -> str:
    """Write one scene under `root` using the layout in the module docstring."""
    scene_dir = os.path.join(root, f"scene_{sample.seed}")
    os.makedirs(scene_dir, exist_ok=True)
    write_ppm(os.path.join(scene_dir, "frame0.ppm"), sample.inputs[:3])
    write_mask(os.path.join(scene_dir, "mask.pgm"), sample.valid_mask)
    if sample.task == "segmentation":
        write_pgm(os.path.join(scene_dir, "labels.pgm"), sample.labels)
    elif sample.task == "flow":
        write_ppm(os.path.join(scene_dir, "frame1.ppm"), sample.inputs[3:])
        write_flo(os.path.join(scene_dir, "gt.flo"), sample.flow)
    else:
        write_ppm(os.path.join(scene_dir, "frame1.ppm"), sample.inputs[3:])
        write_pgm(os.path.join(scene_dir, "disp.pgm"), sample.disparity)
        write_mask(os.path.join(scene_dir, "occ.pgm"), sample.occlusion)
    return scene_dir


def load_scene(scene_dir) -> SceneSample:
    """Read a scene directory back; the task is inferred from the files."""
    def path(name):
        return os.path.join(scene_dir, name)

    if not os.path.isdir(scene_dir):
        raise FormatError(f"{scene_dir} is not a scene directory")
    m = re.fullmatch(r"scene_(-?\d+)", os.path.basename(os.path.normpath(scene_dir)))
    seed = int(m.group(1)) if m else 0
    frame0 = read_ppm(path("frame0.ppm"))
    valid = read_mask(path("mask.pgm"))
    if os.path.exists(path("labels.pgm")):
        return SceneSample(task="segmentation", inputs=frame0, valid_mask=valid,
                           seed=seed, labels=read_pgm(path("labels.pgm")))
    frame1 = read_ppm(path("frame1.ppm"))
    inputs = np.concatenate([frame0, frame1], axis=0)
    if os.path.exists(path("gt.flo")):
        return SceneSample(task="flow", inputs=inputs, valid_mask=valid, seed=seed,
                           flow=read_flo(path("gt.flo")))
    if os.path.exists(path("disp.pgm")):
        return SceneSample(task="disparity", inputs=inputs, valid_mask=valid, seed=seed,
                           disparity=read_pgm(path("disp.pgm")).astype(np.float64),
                           occlusion=read_mask(path("occ.pgm")))
    raise FormatError(f"{scene_dir} holds no recognizable ground truth")
