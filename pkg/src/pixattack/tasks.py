"""Pixel-wise prediction tasks and their per-pixel losses.

A task ties together what a model emits per pixel, what the ground truth
looks like, and which per-pixel loss the attacks ascend.  Three tasks exist:

``segmentation``
    classification over M classes; loss is per-pixel cross entropy.
``flow``
    2-channel regression (horizontal u, vertical v); loss is the per-pixel
    endpoint error.
``disparity``
    1-channel regression plus an occlusion logit channel.  Only the disparity
    channel carries the attack loss; the occlusion head is trained and
    evaluated but never attacked directly.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class PixelTask:
    """Static description of a pixel-wise prediction task."""

    name: str
    kind: str            # "classification" | "regression"
    loss_channels: slice  # model output channels entering the per-pixel loss


PIXEL_TASKS = {
    "segmentation": PixelTask("segmentation", "classification", slice(None)),
    "flow": PixelTask("flow", "regression", slice(0, 2)),
    "disparity": PixelTask("disparity", "regression", slice(0, 1)),
}


def get_task(name: str) -> PixelTask:
    task = PIXEL_TASKS.get(name)
    if task is None:
        raise ConfigError(f"unknown task {name!r}, expected one of {sorted(PIXEL_TASKS)}")
    return task


def per_pixel_task_loss(output: ad.Tensor, sample) -> ad.Tensor:
    """The [H, W] loss map the attacks ascend, for a model output on `sample`.

    Segmentation uses cross entropy against the label map, flow the endpoint
    error against the ground-truth flow, and disparity the endpoint error of
    the disparity channel alone (which degenerates to an absolute difference).
    """
    task = get_task(sample.task)
    if task.name == "segmentation":
        return ad.per_pixel_cross_entropy(output, sample.labels)
    if task.name == "flow":
        return ad.per_pixel_epe(output, ad.Tensor(sample.flow))
    disp_pred = ad.channel_slice(output, 0)
    return ad.per_pixel_epe(disp_pred, ad.Tensor(sample.disparity[None]))
