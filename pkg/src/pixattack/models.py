"""Toy convolutional models for pixel-wise prediction.

Every architecture is a stack of 3x3 / stride 1 / padding 1 convolutions with
relu between them, so the spatial size is preserved end to end:

    tiny_seg   3 -> hidden -> ... -> num_classes   (segmentation logits)
    tiny_flow  6 -> hidden -> ... -> 2             (u, v flow regression)
    tiny_disp  6 -> hidden -> ... -> 2             (disparity, occlusion logit)

``depth`` counts the hidden conv+relu blocks; one final linear conv projects
to the output channels.  Weights are Glorot-uniform, drawn from a seeded
generator in a fixed traversal order (layer ascending, then output channel,
input channel, kernel row, kernel column); biases start at zero.  The same
spec therefore always builds bit-identical parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError, ShapeError, TrainingError
from .tasks import per_pixel_task_loss

CHECKPOINT_MAGIC = b"PXSM1"

# arch -> (input channels, task name)
ARCHS = {
    "tiny_seg": (3, "segmentation"),
    "tiny_flow": (6, "flow"),
    "tiny_disp": (6, "disparity"),
}


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model's parameters bit-for-bit."""

    arch: str
    hidden: int = 8
    depth: int = 2
    seed: int = 0
    num_classes: int = 5  # used by tiny_seg only

    def out_channels(self) -> int:
        return self.num_classes if self.arch == "tiny_seg" else 2


def _validate_spec(spec: ModelSpec) -> None:
    if spec.arch not in ARCHS:
        raise ConfigError(f"unknown architecture {spec.arch!r}, expected one of {sorted(ARCHS)}")
    if not 1 <= spec.depth <= 4:
        raise ConfigError(f"depth must be in [1, 4], got {spec.depth}")
    if not 4 <= spec.hidden <= 32:
        raise ConfigError(f"hidden width must be in [4, 32], got {spec.hidden}")
    if spec.arch == "tiny_seg" and spec.num_classes < 2:
        raise ConfigError(f"tiny_seg needs at least 2 classes, got {spec.num_classes}")


def _layer_dims(spec: ModelSpec) -> list[tuple[int, int]]:
    cin, _ = ARCHS[spec.arch]
    dims = [(cin, spec.hidden)]
    dims += [(spec.hidden, spec.hidden)] * (spec.depth - 1)
    dims.append((spec.hidden, spec.out_channels()))
    return dims


class PixelwiseModel:
    """A built model: parameter tensors plus the forward pass."""

    def __init__(self, spec: ModelSpec, weights, biases):
        self.spec = spec
        self.weights = list(weights)
        self.biases = list(biases)
        self.task = ARCHS[spec.arch][1]
        self.in_channels = ARCHS[spec.arch][0]
        self.out_channels = spec.out_channels()

    def parameters(self) -> list[ad.Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        """Map a [in_channels, H, W] tensor to [out_channels, H, W] logits."""
        if x.data.ndim != 3 or x.data.shape[0] != self.in_channels:
            raise ShapeError(
                f"{self.spec.arch} expects [{self.in_channels}, H, W] input, "
                f"got {x.data.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.conv2d(h, w, b)
            if i != last:
                h = ad.relu(h)
        return h


def build(spec: ModelSpec) -> PixelwiseModel:
    """Construct a model with seeded Glorot-uniform weights and zero biases."""
    _validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for cin, cout in _layer_dims(spec):
        fan_in, fan_out = cin * 9, cout * 9
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        # C-order fill == (out channel, in channel, row, column) traversal
        weights.append(ad.Tensor(rng.uniform(-bound, bound, size=(cout, cin, 3, 3))))
        biases.append(ad.Tensor(np.zeros(cout)))
    return PixelwiseModel(spec, weights, biases)


def clean_loss(model: PixelwiseModel, sample) -> ad.Tensor:
    """Scalar training loss of the model on one clean scene.

    The task's per-pixel loss is averaged over valid pixels; tiny_disp adds a
    squared-error term on the sigmoid of the occlusion logit so the occlusion
    head trains alongside the disparity head.
    """
    out = model.forward(ad.Tensor(sample.inputs))
    loss = ad.masked_mean(per_pixel_task_loss(out, sample), sample.valid_mask)
    if model.task == "disparity":
        occ_prob = ad.sigmoid(ad.channel_slice(out, 1))
        diff = ad.sub(occ_prob, ad.Tensor(sample.occlusion[None].astype(np.float64)))
        occ_term = ad.masked_mean(ad.reduce_sum(ad.mul(diff, diff), 0), sample.valid_mask)
        loss = ad.add(loss, occ_term)
    return loss


def fit_toy(model: PixelwiseModel, dataset, steps: int, lr: float) -> PixelwiseModel:
    """Plain gradient descent, cycling through the dataset one scene per step.

    The model is updated in place and returned.  ``steps == 0`` or ``lr == 0``
    leave the parameters bit-identical.  A non-finite loss raises
    TrainingError rather than continuing silently.
    """
    if steps < 0:
        raise ConfigError(f"steps must be non-negative, got {steps}")
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    if steps > 0 and not dataset:
        raise ConfigError("cannot fit on an empty dataset")
    params = model.parameters()
    for p in params:
        p.requires_grad = True
    try:
        for step in range(steps):
            sample = dataset[step % len(dataset)]
            for p in params:
                p.grad = None
            loss = clean_loss(model, sample)
            if not np.all(np.isfinite(loss.data)):
                raise TrainingError(f"non-finite loss at step {step}")
            ad.backward(loss)
            for p in params:
                if p.grad is not None:
                    p.data = p.data - lr * p.grad
                p.grad = None
    finally:
        for p in params:
            p.requires_grad = False
    return model


# -- checkpoints -------------------------------------------------------------
#
# Layout (all little-endian):
#   5s   magic "PXSM1"
#   H    architecture name length, followed by that many ASCII bytes
#   i    hidden width
#   i    depth
#   i    num_classes
#   q    seed
#   then per layer, ascending: weights [C_out,C_in,3,3] then bias [C_out],
#   both float64 in C order.


def save_checkpoint(model: PixelwiseModel, path) -> None:
    spec = model.spec
    name = spec.arch.encode("ascii")
    blob = [CHECKPOINT_MAGIC, struct.pack("<H", len(name)), name,
            struct.pack("<iiiq", spec.hidden, spec.depth, spec.num_classes, spec.seed)]
    for w, b in zip(model.weights, model.biases):
        blob.append(w.data.astype("<f8").tobytes())
        blob.append(b.data.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_checkpoint(path) -> PixelwiseModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:5]!r}")
    off = 5
    try:
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        arch = raw[off:off + name_len].decode("ascii")
        off += name_len
        hidden, depth, num_classes, seed = struct.unpack_from("<iiiq", raw, off)
        off += struct.calcsize("<iiiq")
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"truncated or corrupt checkpoint header: {exc}") from exc
    if arch not in ARCHS:
        raise FormatError(f"checkpoint names unknown architecture {arch!r}")
    spec = ModelSpec(arch=arch, hidden=hidden, depth=depth, seed=seed,
                     num_classes=num_classes)
    try:
        _validate_spec(spec)
    except ConfigError as exc:
        raise FormatError(f"checkpoint spec invalid: {exc}") from exc
    weights, biases = [], []
    for cin, cout in _layer_dims(spec):
        for shape, store in (((cout, cin, 3, 3), weights), ((cout,), biases)):
            n = int(np.prod(shape))
            end = off + 8 * n
            if end > len(raw):
                raise FormatError("checkpoint payload shorter than its spec requires")
            arr = np.frombuffer(raw[off:end], dtype="<f8").reshape(shape)
            store.append(ad.Tensor(arr.astype(np.float64)))
            off = end
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes after checkpoint payload")
    return PixelwiseModel(spec, weights, biases)
