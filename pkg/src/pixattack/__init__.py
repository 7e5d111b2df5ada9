"""Adversarial attacks on pixel-wise prediction tasks, from scratch on numpy.

The package bundles a small reverse-mode autodiff core, toy convolutional
models for segmentation / optical flow / disparity, iterative sign-gradient
attacks (fgsm, pgd, segpgd, cospgd), the matching evaluation metrics, a
deterministic synthetic scene generator with file round-trips, and a
benchmark CLI that writes long-form CSV reports.
"""

from . import autodiff
from .attacks import (AttackConfig, AttackTrace, cosine_similarity_map,
                      cospgd_loss, default_alpha, project_linf, run_attack,
                      segpgd_loss, segpgd_schedule)
from .autodiff import Tensor, backward, graph_node
from .bench import RunConfig, load_config, run_attack_grid
from .datagen import GeneratorSpec, SceneSample, generate_dataset, generate_scene
from .errors import (ConfigError, DomainError, FormatError, GraphError,
                     NumericsError, PixattackError, ShapeError, TrainingError)
from .metrics import (ConfusionMatrix, disparity_metrics, evaluate_output,
                      flow_metrics, miou_macc, psnr)
from .models import (ModelSpec, PixelwiseModel, build, fit_toy,
                     load_checkpoint, save_checkpoint)
from .tasks import PIXEL_TASKS, PixelTask, get_task, per_pixel_task_loss

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackTrace", "ConfigError", "ConfusionMatrix",
    "DomainError", "FormatError", "GeneratorSpec", "GraphError", "ModelSpec",
    "NumericsError", "PIXEL_TASKS", "PixattackError", "PixelTask",
    "PixelwiseModel", "RunConfig", "SceneSample", "ShapeError", "Tensor",
    "TrainingError", "autodiff", "backward", "build", "cosine_similarity_map",
    "cospgd_loss", "default_alpha", "disparity_metrics", "evaluate_output",
    "fit_toy", "flow_metrics", "generate_dataset", "generate_scene",
    "get_task", "graph_node", "load_checkpoint", "load_config", "miou_macc",
    "per_pixel_task_loss", "project_linf", "psnr", "run_attack",
    "run_attack_grid", "save_checkpoint", "segpgd_loss", "segpgd_schedule",
]
