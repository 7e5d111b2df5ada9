"""Evaluation metrics for the three pixel-wise tasks.

All functions work on plain numpy arrays (model outputs are evaluated after
the fact, no gradients involved) and honor a boolean validity mask.  An
evaluation over zero valid pixels raises DomainError rather than returning a
made-up number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


class ConfusionMatrix:
    """Class-by-class pixel counts; rows index ground truth, columns prediction."""

    def __init__(self, counts: np.ndarray):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {counts.shape}")
        self.counts = counts.astype(np.int64)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, pred, gt, valid_mask, num_classes: int) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        valid = np.asarray(valid_mask, dtype=bool)
        if not pred.shape == gt.shape == valid.shape:
            raise ShapeError(
                f"pred {pred.shape}, gt {gt.shape} and mask {valid.shape} must match")
        if num_classes < 2:
            raise DomainError(f"need at least 2 classes, got {num_classes}")
        p, g = pred[valid], gt[valid]
        if p.size and (p.min() < 0 or p.max() >= num_classes
                       or g.min() < 0 or g.max() >= num_classes):
            raise DomainError(f"labels must lie in [0, {num_classes})")
        counts = np.bincount(
            num_classes * g.astype(np.int64) + p.astype(np.int64),
            minlength=num_classes * num_classes).reshape(num_classes, num_classes)
        return cls(counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ShapeError("cannot add confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)


def miou_macc(cm: ConfusionMatrix) -> tuple[float, float]:
    """Mean IoU and mean class accuracy, both in percent.

    Classes absent from both prediction and ground truth are excluded from
    the IoU mean; classes absent from the ground truth are excluded from the
    accuracy mean (their accuracy is 0/0).
    """
    if cm.total == 0:
        raise DomainError("confusion matrix holds no pixels")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    gt_total = c.sum(axis=1)
    pred_total = c.sum(axis=0)
    union = gt_total + pred_total - tp
    iou = tp[union > 0] / union[union > 0]
    acc = tp[gt_total > 0] / gt_total[gt_total > 0]
    return 100.0 * float(iou.mean()), 100.0 * float(acc.mean())


def flow_metrics(pred, gt, valid_mask) -> tuple[float, float]:
    """Mean endpoint error and percentage of outlier pixels for optical flow.

    A pixel is an outlier when its endpoint error exceeds 3.0 or exceeds 5%
    of the ground-truth magnitude; at zero magnitude only the absolute
    threshold applies.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    if pred.ndim != 3 or pred.shape[0] != 2 or pred.shape != gt.shape:
        raise ShapeError(f"flow maps must both be [2,H,W], got {pred.shape} and {gt.shape}")
    if valid.shape != pred.shape[1:]:
        raise ShapeError(f"mask shape {valid.shape} does not match {pred.shape[1:]}")
    if not valid.any():
        raise DomainError("no valid pixels to evaluate")
    diff = pred - gt
    epe = np.sqrt((diff * diff).sum(axis=0))
    mag = np.sqrt((gt * gt).sum(axis=0))
    relative_bad = np.zeros(epe.shape, dtype=bool)
    moving = mag > 0.0
    relative_bad[moving] = epe[moving] / mag[moving] > 0.05
    outlier = (epe > 3.0) | relative_bad
    return float(epe[valid].mean()), 100.0 * float(outlier[valid].mean())


def disparity_metrics(pred, gt, occ_pred, occ_gt, valid_mask) -> tuple[float, float, float]:
    """Disparity endpoint error, >3px error fraction, and occlusion IoU (%).

    Error statistics cover valid non-occluded pixels (per the ground-truth
    occlusion mask); the occlusion IoU compares the two occlusion masks over
    all valid pixels, and a jointly empty pair counts as perfect agreement.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    occ_pred = np.asarray(occ_pred, dtype=bool)
    occ_gt = np.asarray(occ_gt, dtype=bool)
    valid = np.asarray(valid_mask, dtype=bool)
    if not pred.shape == gt.shape == occ_pred.shape == occ_gt.shape == valid.shape:
        raise ShapeError("disparity maps and masks must share one [H,W] shape")
    scored = valid & ~occ_gt
    if not scored.any():
        raise DomainError("no valid non-occluded pixels to evaluate")
    err = np.abs(pred - gt)[scored]
    inter = float((occ_pred & occ_gt & valid).sum())
    union = float(((occ_pred | occ_gt) & valid).sum())
    occ_iou = 100.0 if union == 0 else 100.0 * inter / union
    return float(err.mean()), float((err > 3.0).mean()), occ_iou


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 999.0 for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    if not peak > 0:
        raise DomainError(f"peak must be positive, got {peak}")
    diff = a - b
    rmse = float(np.sqrt((diff * diff).mean()))
    if rmse == 0.0:
        return 999.0
    return min(20.0 * float(np.log10(peak / rmse)), 999.0)


@dataclass
class MetricsReport:
    """Named metric values plus the run context they came from."""

    values: dict = field(default_factory=dict)
    method: str = ""
    epsilon: float = 0.0
    alpha: float = 0.0
    iterations: int = 0
    seed: int = 0
    scenes: int = 0


def evaluate_output(task: str, output, sample) -> dict:
    """Task metrics of a raw model output on one scene, as metric-name -> value."""
    output = np.asarray(output, dtype=np.float64)
    if task == "segmentation":
        pred = np.argmax(output, axis=0)
        cm = ConfusionMatrix.from_labels(pred, sample.labels, sample.valid_mask,
                                         output.shape[0])
        miou, macc = miou_macc(cm)
        return {"miou": miou, "macc": macc}
    if task == "flow":
        epe, f1_all = flow_metrics(output[:2], sample.flow, sample.valid_mask)
        return {"epe": epe, "f1_all": f1_all}
    if task == "disparity":
        occ_pred = output[1] > 0.0  # sigmoid(x) > 0.5 without computing sigmoid
        epe, px_error, occ_iou = disparity_metrics(
            output[0], sample.disparity, occ_pred, sample.occlusion, sample.valid_mask)
        return {"epe": epe, "px_error": px_error, "occ_iou": occ_iou}
    raise DomainError(f"unknown task {task!r}")
