"""L-infinity adversarial attacks for pixel-wise prediction models.

Four untargeted methods share one loop: ascend a scalar loss by the sign of
its input gradient, step size alpha, then project back into the epsilon ball
around the clean input (and by default into the [0, 1] input range):

    fgsm     one step from the clean input, alpha = epsilon
    pgd      random start, plain mean of the per-pixel loss
    segpgd   pgd with the per-pixel loss split by current correctness; the
             wrongly-predicted share grows linearly with the iteration
    cospgd   pgd with each pixel's loss scaled by the cosine similarity
             between prediction and target, so pixels the model still gets
             right keep attracting the attack

All methods rebuild the autodiff graph every iteration; tensors passed in are
never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, NumericsError, ShapeError
from .tasks import per_pixel_task_loss

METHODS = ("fgsm", "pgd", "segpgd", "cospgd")

_DEFAULT_ALPHA = {"pgd": 0.01, "segpgd": 0.01, "cospgd": 0.15}


def default_alpha(method: str, epsilon: float) -> float:
    """Per-method default step size; fgsm spends the whole budget at once."""
    if method == "fgsm":
        return epsilon
    try:
        return _DEFAULT_ALPHA[method]
    except KeyError:
        raise ConfigError(f"unknown method {method!r}") from None


@dataclass(frozen=True)
class AttackConfig:
    """Settings for one attack run.

    ``alpha=None`` resolves to the method default.  ``clamp_input=None``
    disables the input-range clamp that otherwise follows the ball
    projection.  ``force_cossim`` and ``force_segpgd_lambda`` pin the
    respective weighting to a constant; they exist so the reduction
    equivalences against plain pgd can be exercised end to end and are not
    meant for benchmarking.
    """

    method: str
    epsilon: float = 0.03
    alpha: float | None = None
    iterations: int = 10
    random_init: bool = True
    clamp_input: tuple[float, float] | None = (0.0, 1.0)
    cossim_through_grad: bool = False
    seed: int = 0
    force_cossim: float | None = None
    force_segpgd_lambda: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError(f"epsilon must be positive and finite, got {self.epsilon}")
        if self.alpha is not None and not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be positive and finite, got {self.alpha}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be a positive integer, got {self.iterations}")
        if self.clamp_input is not None:
            lo, hi = self.clamp_input
            if not lo < hi:
                raise ConfigError(f"clamp range out of order: [{lo}, {hi}]")
        if self.force_segpgd_lambda is not None and not 0.0 <= self.force_segpgd_lambda <= 1.0:
            raise ConfigError("forced lambda must lie in [0, 1]")

    def resolved_alpha(self) -> float:
        return self.alpha if self.alpha is not None else default_alpha(self.method, self.epsilon)

    def resolved_iterations(self) -> int:
        # fgsm is by definition a single step from the clean input
        return 1 if self.method == "fgsm" else int(self.iterations)

    def resolved_random_init(self) -> bool:
        return False if self.method == "fgsm" else self.random_init


@dataclass
class AttackTrace:
    """What one attack run produced, iteration by iteration."""

    losses: list = field(default_factory=list)   # ascended loss, one per iteration
    linf: list = field(default_factory=list)     # max |x_adv - clean| after each step
    x_adv: np.ndarray | None = None
    cossim_map: np.ndarray | None = None         # cospgd only, last iteration
    correct_mask: np.ndarray | None = None       # segpgd only, last iteration
    alpha: float = 0.0
    iterations: int = 0


# -- geometry ----------------------------------------------------------------


def project_linf(candidate: np.ndarray, clean: np.ndarray, epsilon: float,
                 clamp_range: tuple[float, float] | None = None) -> np.ndarray:
    """Clamp `candidate` into the epsilon ball around `clean`, then optionally
    into `clamp_range`.  Idempotent; never mutates its inputs."""
    candidate = np.asarray(candidate, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if candidate.shape != clean.shape:
        raise ShapeError(
            f"candidate shape {candidate.shape} does not match clean {clean.shape}")
    if not (np.isfinite(epsilon) and epsilon >= 0):
        raise DomainError(f"epsilon must be non-negative, got {epsilon}")
    out = np.clip(candidate, clean - epsilon, clean + epsilon)
    if clamp_range is not None:
        out = np.clip(out, clamp_range[0], clamp_range[1])
    return out


def random_init(clean: np.ndarray, epsilon: float, seed: int,
                clamp_range: tuple[float, float] | None = None) -> np.ndarray:
    """Clean input plus i.i.d. uniform noise from (-epsilon, +epsilon)."""
    clean = np.asarray(clean, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noisy = clean + rng.uniform(-epsilon, epsilon, size=clean.shape)
    return project_linf(noisy, clean, epsilon, clamp_range)


# -- per-pixel weighting -----------------------------------------------------


def cosine_similarity_map(pred, target) -> ad.Tensor:
    """Per-pixel cosine similarity of two [C, H, W] tensors, as a [H, W] tensor.

    Pixels where either vector has zero norm get similarity 0.  The result is
    clipped into [-1, 1]; a prediction that is a positive multiple of the
    target yields exactly 1.  Differentiable in both arguments (zero gradient
    at zero-norm pixels).
    """
    pred = pred if isinstance(pred, ad.Tensor) else ad.Tensor(pred)
    target = target if isinstance(target, ad.Tensor) else ad.Tensor(target)
    if pred.data.ndim != 3 or pred.data.shape != target.data.shape:
        raise ShapeError(
            f"cosine similarity needs matching [C,H,W] tensors, got "
            f"{pred.data.shape} and {target.data.shape}")
    p, t = pred.data, target.data
    dot = (p * t).sum(axis=0)
    psq = (p * p).sum(axis=0)
    tsq = (t * t).sum(axis=0)
    # single sqrt of the product keeps exactly-parallel vectors at exactly 1
    norm = np.sqrt(psq * tsq)
    nz = norm > 0.0
    safe_norm = np.where(nz, norm, 1.0)
    raw = np.where(nz, dot / safe_norm, 0.0)
    out = np.clip(raw, -1.0, 1.0)

    safe_psq = np.where(psq > 0.0, psq, 1.0)
    safe_tsq = np.where(tsq > 0.0, tsq, 1.0)

    def _bwd(g):
        gm = np.where(nz, g, 0.0)[None]
        if pred.requires_grad:
            ad.accumulate_grad(pred, (t / safe_norm[None] - raw[None] * p / safe_psq[None]) * gm)
        if target.requires_grad:
            ad.accumulate_grad(target, (p / safe_norm[None] - raw[None] * t / safe_tsq[None]) * gm)

    return ad.graph_node(out, (pred, target), _bwd)


def vectorize_classification(logits: ad.Tensor, labels) -> tuple[ad.Tensor, ad.Tensor]:
    """Turn [M, H, W] logits and integer labels into cosine-ready vectors:
    elementwise sigmoid of the logits against the one-hot target."""
    if logits.data.ndim != 3:
        raise ShapeError(f"logits must be [M,H,W], got {logits.data.shape}")
    m = logits.data.shape[0]
    labels = np.asarray(labels)
    if labels.shape != logits.data.shape[1:]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match spatial size {logits.data.shape[1:]}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DomainError("labels must be integers")
    if labels.min() < 0 or labels.max() >= m:
        raise DomainError(f"labels must lie in [0, {m})")
    onehot = np.zeros(logits.data.shape)
    np.put_along_axis(onehot, labels[None], 1.0, axis=0)
    return ad.sigmoid(logits), ad.Tensor(onehot)


def cosine_similarity_for_sample(output: ad.Tensor, sample) -> ad.Tensor:
    """Cosine similarity map between a model output and a sample's target."""
    if sample.task == "segmentation":
        pred, target = vectorize_classification(output, sample.labels)
    elif sample.task == "flow":
        pred, target = output, ad.Tensor(sample.flow)
    elif sample.task == "disparity":
        pred, target = ad.channel_slice(output, 0), ad.Tensor(sample.disparity[None])
    else:
        raise ConfigError(f"unknown task {sample.task!r}")
    return cosine_similarity_map(pred, target)


# -- method losses -----------------------------------------------------------


def cospgd_loss(per_pixel_loss: ad.Tensor, cossim: ad.Tensor, valid_mask,
                cossim_through_grad: bool = False) -> ad.Tensor:
    """Mean over valid pixels of cosine-similarity-scaled per-pixel loss.

    The similarity map is detached from the graph unless
    `cossim_through_grad` is set, so by default gradients flow only through
    the loss factor.
    """
    if per_pixel_loss.data.shape != cossim.data.shape:
        raise ShapeError(
            f"loss map {per_pixel_loss.data.shape} and cossim map "
            f"{cossim.data.shape} differ")
    weight = cossim if cossim_through_grad else cossim.detach()
    return ad.masked_mean(ad.mul(weight, per_pixel_loss), valid_mask)


def segpgd_schedule(t: int, total: int) -> float:
    """Weight shift lambda at iteration t of `total`: (t - 1) / (2 * total)."""
    if total < 1:
        raise ConfigError(f"iteration count must be positive, got {total}")
    if not 1 <= t <= total:
        raise ConfigError(f"iteration {t} outside [1, {total}]")
    return (t - 1) / (2.0 * total)


def segpgd_loss(per_pixel_loss: ad.Tensor, pred_labels, gt_labels, valid_mask,
                t: int, total: int, lam: float | None = None) -> ad.Tensor:
    """Correctness-weighted mean loss: correctly predicted pixels weigh
    (1 - lambda), wrong ones lambda, averaged over all valid pixels."""
    if lam is None:
        lam = segpgd_schedule(t, total)
    elif not 1 <= t <= total:
        raise ConfigError(f"iteration {t} outside [1, {total}]")
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != per_pixel_loss.data.shape or gt_labels.shape != pred_labels.shape:
        raise ShapeError("label maps must match the loss map shape")
    weights = np.where(pred_labels == gt_labels, 1.0 - lam, lam)
    return ad.masked_mean(ad.mul(per_pixel_loss, ad.Tensor(weights)), valid_mask)


# -- the attack loop ---------------------------------------------------------


def attack_step(model, x_adv: np.ndarray, sample, cfg: AttackConfig,
                t: int) -> tuple[np.ndarray, float, dict]:
    """One ascent-and-project step at iteration `t` (1-based).

    Returns the projected next iterate, the scalar loss that was ascended,
    and method-specific extras (cossim map or correctness mask).
    """
    total = cfg.resolved_iterations()
    if not 1 <= t <= total:
        raise ConfigError(f"iteration {t} outside [1, {total}]")
    clean = np.asarray(sample.inputs, dtype=np.float64)
    x_t = ad.Tensor(x_adv, requires_grad=True)
    out = model.forward(x_t)
    loss_map = per_pixel_task_loss(out, sample)
    info: dict = {}

    if cfg.method in ("fgsm", "pgd"):
        loss = ad.masked_mean(loss_map, sample.valid_mask)
    elif cfg.method == "segpgd":
        if sample.task != "segmentation":
            raise ConfigError("segpgd is defined for classification tasks only")
        pred_labels = np.argmax(out.data, axis=0)
        loss = segpgd_loss(loss_map, pred_labels, sample.labels, sample.valid_mask,
                           t, total, lam=cfg.force_segpgd_lambda)
        info["correct_mask"] = pred_labels == np.asarray(sample.labels)
    else:  # cospgd
        if cfg.force_cossim is not None:
            cossim = ad.Tensor(np.full(loss_map.data.shape, float(cfg.force_cossim)))
        else:
            cossim = cosine_similarity_for_sample(out, sample)
        loss = cospgd_loss(loss_map, cossim, sample.valid_mask, cfg.cossim_through_grad)
        info["cossim_map"] = np.array(cossim.data, copy=True)

    ad.backward(loss)
    grad = x_t.grad if x_t.grad is not None else np.zeros_like(clean)
    if not np.all(np.isfinite(grad)):
        raise NumericsError(f"non-finite input gradient at iteration {t}")
    stepped = x_adv + cfg.resolved_alpha() * np.sign(grad)
    return project_linf(stepped, clean, cfg.epsilon, cfg.clamp_input), float(loss.data), info


def run_attack(model, sample, cfg: AttackConfig) -> AttackTrace:
    """Run the configured attack on one scene and record its trajectory.

    The starting point is the clean input plus uniform noise when
    `cfg.random_init` is set (never for fgsm), else the clean input itself.
    Identical (model, sample, cfg) always reproduce the identical trace.
    """
    total = cfg.resolved_iterations()
    clean = np.asarray(sample.inputs, dtype=np.float64)
    if cfg.resolved_random_init():
        x = random_init(clean, cfg.epsilon, cfg.seed, cfg.clamp_input)
    else:
        x = project_linf(clean, clean, cfg.epsilon, cfg.clamp_input)
    trace = AttackTrace(alpha=cfg.resolved_alpha(), iterations=total)
    info: dict = {}
    for t in range(1, total + 1):
        x, loss_value, info = attack_step(model, x, sample, cfg, t)
        trace.losses.append(loss_value)
        trace.linf.append(float(np.max(np.abs(x - clean))))
    trace.x_adv = x
    trace.cossim_map = info.get("cossim_map")
    trace.correct_mask = info.get("correct_mask")
    return trace
