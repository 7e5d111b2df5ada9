"""Benchmark harness: configs, attack grids, CSV reports, dumps.

A run config is a flat UTF-8 ``key = value`` file (``#`` starts a comment,
list values are comma separated).  One config describes a task, a scene
generator, a model, and an attack grid; the harness executes the full cross
product methods x iterations x epsilons x alphas x scenes x seeds and writes
one long-form CSV with the schema

    task,method,epsilon,alpha,iters,seed,scene,metric,value,wall_ms

Rows are emitted in sorted order and all values except wall_ms are
deterministic, so two runs of the same config differ at most in the wall_ms
column regardless of the worker count.
"""

from __future__ import annotations

import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import render
from .attacks import METHODS, AttackConfig, run_attack
from .autodiff import Tensor
from .datagen import GeneratorSpec, generate_dataset, generate_scene
from .errors import ConfigError, FormatError, PixattackError
from .imageio import read_ppm, save_scene, write_ppm
from .metrics import evaluate_output, psnr
from .models import ARCHS, ModelSpec, build, fit_toy, load_checkpoint, save_checkpoint
from .tasks import get_task

CSV_HEADER = "task,method,epsilon,alpha,iters,seed,scene,metric,value,wall_ms"

TASK_ARCH = {"segmentation": "tiny_seg", "flow": "tiny_flow", "disparity": "tiny_disp"}

# metric rows every grid point contributes, per task
TASK_METRICS = {
    "segmentation": ("clean_miou", "clean_macc", "adv_miou", "adv_macc", "psnr"),
    "flow": ("clean_epe", "clean_f1_all", "adv_epe", "adv_f1_all", "psnr"),
    "disparity": ("clean_epe", "clean_px_error", "clean_occ_iou",
                  "adv_epe", "adv_px_error", "adv_occ_iou", "psnr"),
}

SWEEP_ALPHAS = (0.01, 0.07, 0.10, 0.15)
SWEEP_ITERS = (3, 5, 10, 20, 40, 100)


@dataclass(frozen=True)
class RunConfig:
    """A parsed run config; see `parse_config` for the file syntax."""

    task: str
    out: str = "runs/out"
    height: int = 16
    width: int = 16
    classes: int = 5
    objects_min: int = 2
    objects_max: int = 4
    noise: float = 0.02
    max_displacement: int = 3
    background_flow_u: int = 0
    background_flow_v: int = 0
    sparse_fraction: float = 0.0
    scene_count: int = 8
    scene_seed: int = 1000
    arch: str = ""                 # defaults to the task's architecture
    hidden: int = 8
    depth: int = 2
    model_seed: int = 7
    checkpoint: str = ""
    fit_steps: int = 200
    fit_lr: float = 0.05
    methods: tuple = ("pgd",)
    iters: tuple = (10,)
    epsilons: tuple = (0.03,)
    alphas: tuple = (None,)        # None = per-method default
    seeds: tuple = (1,)
    random_init: bool = True
    input_clamp: bool = True
    cossim_grad: bool = False
    workers: int = 1
    save_adv: bool = False

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            task=self.task, height=self.height, width=self.width,
            num_classes=self.classes, objects_min=self.objects_min,
            objects_max=self.objects_max, noise=self.noise,
            max_displacement=self.max_displacement,
            background_flow=(self.background_flow_u, self.background_flow_v),
            sparse_fraction=self.sparse_fraction)

    def model_spec(self) -> ModelSpec:
        arch = self.arch or TASK_ARCH[self.task]
        return ModelSpec(arch=arch, hidden=self.hidden, depth=self.depth,
                         seed=self.model_seed, num_classes=self.classes)

    def validate(self) -> None:
        get_task(self.task)
        self.generator_spec()
        spec = self.model_spec()
        if ARCHS[spec.arch][1] != self.task:
            raise ConfigError(f"architecture {spec.arch} does not serve task {self.task}")
        if not self.methods:
            raise ConfigError("no attack methods configured")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}, expected one of {METHODS}")
            if m == "segpgd" and self.task != "segmentation":
                raise ConfigError("segpgd applies to the segmentation task only")
        if not self.seeds:
            raise ConfigError("no attack seeds configured")
        if self.scene_count < 1:
            raise ConfigError(f"scene count must be positive, got {self.scene_count}")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}")
        if self.checkpoint and not os.path.exists(self.checkpoint):
            raise ConfigError(f"checkpoint {self.checkpoint!r} does not exist")
        if not self.out:
            raise ConfigError("output directory must not be empty")
        # constructing one attack config per grid axis validates the numbers
        for method in self.methods:
            for eps in self.epsilons:
                for alpha in self.alphas:
                    for iters in self.iters:
                        self.attack_config(method, eps, alpha, iters, self.seeds[0])

    def attack_config(self, method, epsilon, alpha, iterations, seed) -> AttackConfig:
        return AttackConfig(
            method=method, epsilon=epsilon, alpha=alpha, iterations=iterations,
            random_init=self.random_init,
            clamp_input=(0.0, 1.0) if self.input_clamp else None,
            cossim_through_grad=self.cossim_grad, seed=seed)


_CONFIG_TYPES = {
    "task": str, "out": str, "arch": str, "checkpoint": str,
    "height": int, "width": int, "classes": int, "objects_min": int,
    "objects_max": int, "max_displacement": int, "background_flow_u": int,
    "background_flow_v": int, "scene_count": int, "scene_seed": int,
    "hidden": int, "depth": int, "model_seed": int, "fit_steps": int,
    "workers": int, "noise": float, "sparse_fraction": float, "fit_lr": float,
    "methods": "str_list", "iters": "int_list", "epsilons": "float_list",
    "alphas": "alpha_list", "seeds": "int_list",
    "random_init": bool, "input_clamp": bool, "cossim_grad": bool,
    "save_adv": bool,
}


def _convert(key: str, raw: str):
    kind = _CONFIG_TYPES[key]
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "str_list":
            return tuple(items)
        if kind == "int_list":
            return tuple(int(s) for s in items)
        if kind == "float_list":
            return tuple(float(s) for s in items)
        # alpha_list: floats, or the word "default" for per-method defaults
        if not items or items == ["default"]:
            return (None,)
        return tuple(float(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = _convert(key, raw.strip())
    return values


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a config file, apply overrides, and fully validate the result."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    if "task" not in values:
        raise ConfigError("config must set 'task'")
    values.update(overrides or {})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


# -- grid execution ------------------------------------------------------------


@dataclass(frozen=True)
class GridPoint:
    method: str
    epsilon: float
    alpha: float | None
    iters: int
    seed: int
    scene_seed: int

    def run_id(self, task: str) -> str:
        alpha = "default" if self.alpha is None else repr(float(self.alpha))
        return (f"{task}-{self.method}-e{float(self.epsilon)!r}-a{alpha}"
                f"-T{self.iters}-s{self.seed}-c{self.scene_seed}")


@dataclass
class ResultRow:
    task: str
    method: str
    epsilon: float
    alpha: float
    iters: int
    seed: int
    scene: int
    metric: str
    value: float
    wall_ms: float

    def sort_key(self):
        return (self.task, self.method, self.epsilon, self.alpha, self.iters,
                self.seed, self.scene, self.metric)

    def to_csv(self) -> str:
        return ",".join([
            self.task, self.method, repr(float(self.epsilon)),
            repr(float(self.alpha)), str(self.iters), str(self.seed),
            str(self.scene), self.metric, repr(float(self.value)),
            repr(round(float(self.wall_ms), 3))])


def grid_points(cfg: RunConfig, scenes) -> list[GridPoint]:
    return [GridPoint(method, eps, alpha, iters, seed, scene.seed)
            for method in cfg.methods
            for eps in cfg.epsilons
            for alpha in cfg.alphas
            for iters in cfg.iters
            for seed in cfg.seeds
            for scene in scenes]


def prepare_model(cfg: RunConfig, scenes):
    """Load the configured checkpoint or build and fit a fresh model."""
    if cfg.checkpoint:
        model = load_checkpoint(cfg.checkpoint)
        if model.task != cfg.task:
            raise ConfigError(
                f"checkpoint serves task {model.task!r}, config wants {cfg.task!r}")
        return model
    return fit_toy(build(cfg.model_spec()), scenes, cfg.fit_steps, cfg.fit_lr)


def _clean_outputs(model, scenes) -> dict:
    outs = {}
    for scene in scenes:
        outs[scene.seed] = model.forward(Tensor(scene.inputs)).data
    return outs


def run_attack_grid(cfg: RunConfig) -> list[ResultRow]:
    """Execute the full grid and return sorted result rows."""
    cfg.validate()
    scenes = generate_dataset(cfg.generator_spec(), cfg.scene_seed, cfg.scene_count)
    by_seed = {scene.seed: scene for scene in scenes}
    model = prepare_model(cfg, scenes)
    clean_out = _clean_outputs(model, scenes)
    clean_metrics = {seed: evaluate_output(cfg.task, out, by_seed[seed])
                     for seed, out in clean_out.items()}
    points = grid_points(cfg, scenes)
    adv_dir = os.path.join(cfg.out, "runs")
    if cfg.save_adv:
        os.makedirs(adv_dir, exist_ok=True)

    def run_point(point: GridPoint) -> list[ResultRow]:
        started = time.perf_counter()
        scene = by_seed[point.scene_seed]
        try:
            attack_cfg = cfg.attack_config(point.method, point.epsilon, point.alpha,
                                           point.iters, point.seed)
            trace = run_attack(model, scene, attack_cfg)
            adv_out = model.forward(Tensor(trace.x_adv)).data
            adv = {f"adv_{k}": v
                   for k, v in evaluate_output(cfg.task, adv_out, scene).items()}
            values = {f"clean_{k}": v for k, v in clean_metrics[point.scene_seed].items()}
            values.update(adv)
            values["psnr"] = psnr(scene.inputs, trace.x_adv)
        except PixattackError as exc:
            raise PixattackError(
                f"grid point {point.run_id(cfg.task)} failed: {exc}") from exc
        if cfg.save_adv:
            np.save(os.path.join(adv_dir, point.run_id(cfg.task) + ".npy"), trace.x_adv)
        wall_ms = 1000.0 * (time.perf_counter() - started)
        alpha = trace.alpha
        return [ResultRow(cfg.task, point.method, point.epsilon, alpha, point.iters,
                          point.seed, point.scene_seed, metric, values[metric], wall_ms)
                for metric in TASK_METRICS[cfg.task]]

    if cfg.workers == 1:
        nested = [run_point(p) for p in points]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            nested = list(pool.map(run_point, points))
    rows = [row for rows in nested for row in rows]
    rows.sort(key=ResultRow.sort_key)
    return rows


def write_rows_csv(rows, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = [CSV_HEADER] + [row.to_csv() for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_rows_csv(path) -> list[ResultRow]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError(f"{path}: missing or wrong CSV header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise FormatError(f"{path}:{lineno}: expected 10 columns, got {len(parts)}")
        try:
            rows.append(ResultRow(
                task=parts[0], method=parts[1], epsilon=float(parts[2]),
                alpha=float(parts[3]), iters=int(parts[4]), seed=int(parts[5]),
                scene=int(parts[6]), metric=parts[7], value=float(parts[8]),
                wall_ms=float(parts[9])))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return rows


# -- commands ------------------------------------------------------------------


def cmd_attack(cfg: RunConfig) -> str:
    """Run the attack grid and write {out}/results.csv."""
    rows = run_attack_grid(cfg)
    out_path = os.path.join(cfg.out, "results.csv")
    write_rows_csv(rows, out_path)
    return out_path


def cmd_sweep_alpha(cfg: RunConfig) -> tuple[str, str]:
    """Step-size ablation: a full alpha x iterations grid for one method.

    Writes the long-form results.csv plus alpha_pivot.csv laid out with one
    row per alpha and per-iteration-count median adversarial mIoU and mAcc
    columns.
    """
    if len(cfg.methods) != 1 or cfg.methods[0] not in ("cospgd", "segpgd"):
        raise ConfigError("sweep-alpha expects exactly one method, cospgd or segpgd")
    if cfg.task != "segmentation":
        raise ConfigError("sweep-alpha tabulates mIoU/mAcc, so the task must be segmentation")
    if cfg.alphas == (None,):
        cfg = replace(cfg, alphas=SWEEP_ALPHAS)
    if cfg.iters == (10,):
        cfg = replace(cfg, iters=SWEEP_ITERS)
    rows = run_attack_grid(cfg)
    out_path = os.path.join(cfg.out, "results.csv")
    write_rows_csv(rows, out_path)

    by_cell: dict = {}
    for row in rows:
        if row.metric in ("adv_miou", "adv_macc"):
            by_cell.setdefault((row.alpha, row.iters, row.metric), []).append(row.value)
    header = ["alpha"]
    for iters in cfg.iters:
        header += [f"miou_T{iters}", f"macc_T{iters}"]
    lines = [",".join(header)]
    for alpha in sorted({row.alpha for row in rows}):
        cells = [repr(float(alpha))]
        for iters in cfg.iters:
            for metric in ("adv_miou", "adv_macc"):
                cells.append(repr(float(np.median(by_cell[(alpha, iters, metric)]))))
        lines.append(",".join(cells))
    pivot_path = os.path.join(cfg.out, "alpha_pivot.csv")
    with open(pivot_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path, pivot_path


def aggregate_rows(rows) -> list[tuple]:
    """Median and IQR per (task, method, epsilon, alpha, iters, metric).

    Duplicate rows (same key including seed and scene) collapse first, so
    feeding the same CSV twice aggregates exactly like feeding it once.
    """
    unique = {}
    for row in rows:
        unique.setdefault(row.sort_key(), row.value)
    groups: dict = {}
    for key, value in unique.items():
        task, method, eps, alpha, iters, _seed, _scene, metric = key
        groups.setdefault((task, method, eps, alpha, iters, metric), []).append(value)
    out = []
    for key in sorted(groups):
        values = np.asarray(groups[key])
        q25, q50, q75 = np.percentile(values, [25.0, 50.0, 75.0])
        out.append(key + (float(q50), float(q75 - q25), len(values)))
    return out


def cmd_report(csv_paths, out_dir, plots: bool = False) -> str:
    """Aggregate result CSVs into {out}/summary.csv (and optional plot PPMs)."""
    if not csv_paths:
        raise ConfigError("report needs at least one results CSV")
    rows = []
    for path in csv_paths:
        rows.extend(read_rows_csv(path))
    if not rows:
        raise ConfigError("no rows to aggregate")
    summary = aggregate_rows(rows)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "summary.csv")
    header = "task,method,epsilon,alpha,iters,metric,median,iqr,n"
    lines = [header]
    for task, method, eps, alpha, iters, metric, med, iqr, n in summary:
        lines.append(",".join([task, method, repr(float(eps)), repr(float(alpha)),
                               str(iters), metric, repr(med), repr(iqr), str(n)]))
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if plots:
        _write_plots(summary, out_dir)
    return out_path


def _write_plots(summary, out_dir) -> None:
    per_plot: dict = {}
    for task, method, eps, alpha, iters, metric, med, _iqr, _n in summary:
        series = per_plot.setdefault((task, metric), {})
        series.setdefault(f"{method}_e{eps}_a{alpha}", []).append((iters, med))
    for (task, metric), series in sorted(per_plot.items()):
        image = render.line_plot(series)
        write_ppm(os.path.join(out_dir, f"plot_{task}_{metric}.ppm"), image)


def cmd_dump(cfg: RunConfig, run_id: str) -> str:
    """Render one saved run as PPM images under {out}/dump/{run_id}.

    Needs the adversarial tensor saved by `attack --save-adv`; the scene and
    model are rebuilt deterministically from the config.
    """
    adv_path = os.path.join(cfg.out, "runs", run_id + ".npy")
    if not os.path.exists(adv_path):
        raise ConfigError(f"no saved run at {adv_path!r}; run attack with save_adv first")
    m = re.search(r"-c(-?\d+)$", run_id)
    if not m:
        raise ConfigError(f"run id {run_id!r} does not end in a scene seed")
    scene = generate_scene(cfg.generator_spec(), int(m.group(1)))
    scenes = generate_dataset(cfg.generator_spec(), cfg.scene_seed, cfg.scene_count)
    model = prepare_model(cfg, scenes)
    x_adv = np.load(adv_path)

    dump_dir = os.path.join(cfg.out, "dump", run_id)
    os.makedirs(dump_dir, exist_ok=True)
    write_ppm(os.path.join(dump_dir, "clean.ppm"), scene.inputs[:3])
    write_ppm(os.path.join(dump_dir, "adv.ppm"), x_adv[:3])
    delta = x_adv - scene.inputs
    peak = float(np.abs(delta).max())
    write_ppm(os.path.join(dump_dir, "delta.ppm"),
              render.magnitude_to_rgb(delta, 1.0 / peak if peak > 0 else 1.0))

    clean_out = model.forward(Tensor(scene.inputs)).data
    adv_out = model.forward(Tensor(x_adv)).data
    if cfg.task == "segmentation":
        clean_img = render.labels_to_rgb(np.argmax(clean_out, 0), cfg.classes)
        adv_img = render.labels_to_rgb(np.argmax(adv_out, 0), cfg.classes)
    elif cfg.task == "flow":
        shared = float(max(np.sqrt((clean_out[:2] ** 2).sum(0)).max(),
                           np.sqrt((adv_out[:2] ** 2).sum(0)).max()))
        clean_img = render.flow_to_rgb(clean_out[:2], shared)
        adv_img = render.flow_to_rgb(adv_out[:2], shared)
    else:
        shared = float(max(np.abs(clean_out[0]).max(), np.abs(adv_out[0]).max()))
        clean_img = render.disparity_to_gray(clean_out[0], shared)
        adv_img = render.disparity_to_gray(adv_out[0], shared)
    write_ppm(os.path.join(dump_dir, "pred_clean.ppm"), clean_img)
    write_ppm(os.path.join(dump_dir, "pred_adv.ppm"), adv_img)

    quantized_psnr = psnr(read_ppm(os.path.join(dump_dir, "clean.ppm")),
                          read_ppm(os.path.join(dump_dir, "adv.ppm")))
    with open(os.path.join(dump_dir, "psnr.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"psnr_db = {quantized_psnr!r}\n")
    return dump_dir


def cmd_gen_data(cfg: RunConfig) -> list[str]:
    """Write the configured scenes to disk as scene directories."""
    scenes = generate_dataset(cfg.generator_spec(), cfg.scene_seed, cfg.scene_count)
    os.makedirs(cfg.out, exist_ok=True)
    return [save_scene(scene, cfg.out) for scene in scenes]


def cmd_fit(cfg: RunConfig) -> str:
    """Fit a model on the configured scenes and save it as a checkpoint."""
    scenes = generate_dataset(cfg.generator_spec(), cfg.scene_seed, cfg.scene_count)
    model = fit_toy(build(cfg.model_spec()), scenes, cfg.fit_steps, cfg.fit_lr)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "model.pxsm")
    save_checkpoint(model, path)
    return path
