"""Optimization loop for supervised and semi-supervised training with modal dropout."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data.sample import StereoSample
from .losses import (
    EmptySupervision,
    LossComponents,
    LossWeights,
    PhotometricConfig,
    loss_gradient,
    loss_lidar,
    loss_noise,
    loss_photometric,
    loss_semi,
    loss_sup,
    warp_image,
)
from .network import ModalCombo, ModelParams, NetworkConfig, forward, init_params, save_checkpoint
from .sgm import reproject_to_right

log = logging.getLogger(__name__)

MODES = ("supervised", "semi")
MODAL_DROPOUT = "modal_dropout"
UNIVERSES = {
    "supervised": (ModalCombo.DUAL_LIDAR, ModalCombo.MONO_LIDAR, ModalCombo.DUAL),
    "semi": (ModalCombo.DUAL_LIDAR, ModalCombo.DUAL),
}
# (progress, multiplier of lr0); progress is epochs for supervised, iterations for semi
DEFAULT_SCHEDULES = {
    "supervised": ((10, 0.5), (14, 0.1), (17, 0.01)),
    "semi": ((10_000, 0.1), (14_000, 0.01)),
}
SUPERVISED_COLUMNS = ("sup",)
SEMI_COLUMNS = ("lidar", "photometric", "gradient", "noise")
DIVERGENCE_PATIENCE = 10


class TrainingDiverged(RuntimeError):
    """Raised when the loss stays non-finite for too many consecutive steps."""


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "supervised"
    combo: str = MODAL_DROPOUT  # a ModalCombo key or "modal_dropout"
    weights: LossWeights = LossWeights()
    photometric: PhotometricConfig = PhotometricConfig()
    lr0: float = 1e-4
    lr_schedule: tuple[tuple[float, float], ...] | None = None  # None: mode default
    batch_size: int = 4
    steps: int = 200
    seed: int = 0
    checkpoint_every: int = 0  # 0 writes only the final checkpoint

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.combo != MODAL_DROPOUT:
            combo = ModalCombo.parse(self.combo)
            if combo not in UNIVERSES[self.mode]:
                raise ValueError(f"{combo} cannot be trained in {self.mode} mode: semi-supervised "
                                 "training covers only the two stereo combos (dual_lidar, dual)")
            object.__setattr__(self, "combo", combo.key)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0 or self.checkpoint_every < 0:
            raise ValueError("steps and checkpoint_every must be nonnegative")
        if not self.lr0 >= 0:
            raise ValueError(f"lr0 must be nonnegative, got {self.lr0}")
        if self.lr_schedule is not None:
            sched = tuple((float(p), float(f)) for p, f in self.lr_schedule)
            if any(b[0] < a[0] for a, b in zip(sched, sched[1:])):
                raise ValueError("lr_schedule milestones must be non-decreasing")
            object.__setattr__(self, "lr_schedule", sched)

    @property
    def schedule(self) -> tuple[tuple[float, float], ...]:
        return DEFAULT_SCHEDULES[self.mode] if self.lr_schedule is None else self.lr_schedule

    @property
    def components(self) -> tuple[str, ...]:
        return SUPERVISED_COLUMNS if self.mode == "supervised" else SEMI_COLUMNS


class MdtState:
    """Seeded uniform draws over the combos a training mode allows."""

    def __init__(self, mode: str, seed: int = 0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.universe = UNIVERSES[mode]
        self._rng = np.random.default_rng(seed)

    def sample(self) -> ModalCombo:
        return self.universe[int(self._rng.integers(len(self.universe)))]


def mdt_sample(state: MdtState) -> ModalCombo:
    return state.sample()


def lr_at(progress: float, cfg: TrainConfig) -> float:
    """Piecewise-constant rate: lr0 times the multiplier of the last milestone reached."""
    factor = 1.0
    for milestone, mult in cfg.schedule:
        if progress >= milestone:
            factor = mult
    return cfg.lr0 * factor


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, lr: float) -> None:
        """Update every parameter that received a gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.values)
                self._v[name] = np.zeros_like(p.values)
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            update = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.values -= update.astype(p.values.dtype, copy=False)


@dataclass
class StepResult:
    loss: float
    components: dict[str, float] = field(default_factory=dict)
    skipped: bool = False


class _Accumulator:
    """Backpropagates each sample's loss immediately so its graph can be freed."""

    def __init__(self, params: ModelParams, batch_size: int, names: Sequence[str]):
        self.params, self.batch_size, self.names = params, batch_size, names
        self.losses: list[float] = []
        self.comps: list[dict[str, float]] = []
        params.zero_grad()

    def add(self, loss, comps: dict[str, float]) -> None:
        value = loss.item()
        self.losses.append(value)
        self.comps.append(comps)
        if math.isfinite(value):
            T.scale(loss, 1.0 / self.batch_size).backward()

    def finish(self, optimizer: Adam, lr: float) -> StepResult:
        if not self.losses:
            log.warning("no sample in the batch has supervision; step skipped")
            return StepResult(math.nan, {k: math.nan for k in self.names}, skipped=True)
        value = float(np.mean(self.losses))
        averaged = {k: float(np.mean([c[k] for c in self.comps])) for k in self.names}
        if not math.isfinite(value):
            return StepResult(value, averaged)
        if len(self.losses) != self.batch_size:
            rescale = self.batch_size / len(self.losses)
            for _, p in self.params.items():
                if p.grad is not None:
                    p.grad *= rescale
        optimizer.step(self.params, lr)
        return StepResult(value, averaged)


def train_step_supervised(batch: Sequence[StereoSample], combo: ModalCombo, params: ModelParams,
                          net: NetworkConfig, optimizer: Adam, lr: float) -> StepResult:
    """One update on the left-view depth L2 loss; returns the pre-update batch loss."""
    acc = _Accumulator(params, len(batch), SUPERVISED_COLUMNS)
    for sample in batch:
        try:
            pred = forward(sample, combo, params, net, side="left")
            loss = loss_sup(pred.depth, sample.gt)
        except EmptySupervision:
            continue
        acc.add(loss, {"sup": loss.item()})
    return acc.finish(optimizer, lr)


def _try(fn, *args):
    try:
        return fn(*args)
    except EmptySupervision:
        return None


def semi_components(sample: StereoSample, combo: ModalCombo, params: ModelParams, net: NetworkConfig,
                    cfg: TrainConfig, noise_right: np.ndarray | None = None) -> LossComponents:
    """Right-view prediction and the terms that supervise it.

    Terms without valid pixels, or with zero weight, come back as ``None``.
    """
    w = cfg.weights
    pred = forward(sample, combo, params, net, side="right")
    lidar = _try(loss_lidar, pred.depth, sample.sparse_right) if w.w_l > 0 else None
    photo = None
    if w.w_p > 0:
        rec, valid = warp_image(sample.left, pred.disparity, direction=-1)
        photo = _try(loss_photometric, sample.right, rec, valid, cfg.photometric)
    grad = loss_gradient(pred.disparity, sample.right) if w.w_g > 0 else None
    noise = None
    if noise_right is not None and w.w_n > 0:
        noise = _try(loss_noise, pred.depth, noise_right)
    return LossComponents(lidar, photo, grad, noise)


def train_step_semi(batch: Sequence[StereoSample], combo: ModalCombo, params: ModelParams,
                    net: NetworkConfig, cfg: TrainConfig, optimizer: Adam, lr: float,
                    noise_right: dict[str, np.ndarray] | None = None) -> StepResult:
    """One update on the weighted semi-supervised objective for the right view.

    ``noise_right`` maps sample ids to right-view noise depth labels. Absent
    terms are logged as 0.
    """
    combo = ModalCombo.parse(combo)
    if combo not in UNIVERSES["semi"]:
        raise ValueError(f"{combo} has no stereo input; semi-supervised training covers "
                         "only dual_lidar and dual")
    acc = _Accumulator(params, len(batch), SEMI_COLUMNS)
    for sample in batch:
        labels = None if noise_right is None else noise_right.get(sample.sample_id)
        parts = semi_components(sample, combo, params, net, cfg, labels)
        if all(p is None for p in parts):
            continue
        comps = {k: 0.0 if p is None else T.as_tensor(p).item() for k, p in zip(SEMI_COLUMNS, parts)}
        acc.add(loss_semi(parts, cfg.weights), comps)
    return acc.finish(optimizer, lr)


@dataclass
class FitResult:
    params: ModelParams
    trace: list[dict] = field(default_factory=list)


def _seeds(seed: int) -> tuple[int, int, int]:
    children = np.random.SeedSequence(seed).generate_state(3)
    return int(children[0]), int(children[1]), int(children[2])


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of (epoch, indices) over per-epoch permutations."""
    order: list[int] = []
    consumed = 0
    while True:
        while len(order) < batch_size:
            order.extend(rng.permutation(n).tolist())
        yield consumed // n, order[:batch_size]
        del order[:batch_size]
        consumed += batch_size


def checkpoint_path(final: Path, step: int) -> Path:
    return final.with_name(f"{final.stem}_step{step:06d}{final.suffix}")


def fit(dataset: Sequence[StereoSample], cfg: TrainConfig, net: NetworkConfig = NetworkConfig(), *,
        params: ModelParams | None = None, noise_labels: dict[str, np.ndarray] | None = None,
        csv_path: str | Path | None = None, checkpoint: str | Path | None = None) -> FitResult:
    """Train for ``cfg.steps`` steps.

    A combo is drawn per batch under modal dropout, otherwise the fixed combo
    is used. ``noise_labels`` are left-view depth maps keyed by sample id.
    Checkpoints are written every ``cfg.checkpoint_every`` steps and at the end.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    init_seed, mdt_seed, order_seed = _seeds(cfg.seed)
    params = init_params(net, init_seed) if params is None else params
    mdt = MdtState(cfg.mode, mdt_seed)
    fixed = None if cfg.combo == MODAL_DROPOUT else ModalCombo.parse(cfg.combo)
    batches = _batches(len(dataset), cfg.batch_size, np.random.default_rng(order_seed))
    noise_right = None
    if cfg.mode == "semi" and noise_labels:
        by_id = {s.sample_id: s for s in dataset}
        noise_right = {k: reproject_to_right(v, by_id[k].calib) for k, v in noise_labels.items() if k in by_id}
    optimizer = Adam()
    result = FitResult(params)
    checkpoint = None if checkpoint is None else Path(checkpoint)
    writer = None
    handle = None
    if csv_path is not None:
        handle = open(csv_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(["step", "epoch", "combo", "lr", "loss", *cfg.components])
    bad = 0
    try:
        for step in range(1, cfg.steps + 1):
            epoch, idx = next(batches)
            batch = [dataset[i] for i in idx]
            combo = fixed if fixed is not None else mdt.sample()
            progress = epoch if cfg.mode == "supervised" else step - 1
            lr = lr_at(progress, cfg)
            if cfg.mode == "supervised":
                res = train_step_supervised(batch, combo, params, net, optimizer, lr)
            else:
                res = train_step_semi(batch, combo, params, net, cfg, optimizer, lr, noise_right)
            row = {"step": step, "epoch": epoch, "combo": combo.key, "lr": lr, "loss": res.loss,
                   **res.components}
            result.trace.append(row)
            if writer is not None:
                writer.writerow([step, epoch, combo.key, repr(lr), repr(res.loss),
                                 *(repr(res.components[k]) for k in cfg.components)])
            bad = 0 if (res.skipped or math.isfinite(res.loss)) else bad + 1
            if bad >= DIVERGENCE_PATIENCE:
                raise TrainingDiverged(f"loss non-finite for {bad} consecutive steps (step {step})")
            if checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 \
                    and step != cfg.steps:
                save_checkpoint(checkpoint_path(checkpoint, step), params, net)
    finally:
        if handle is not None:
            handle.close()
    if checkpoint is not None:
        save_checkpoint(checkpoint, params, net)
    return result

