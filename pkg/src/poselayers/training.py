"""Pair sampling, augmentation, and the joint generator/discriminator
optimization loop.

Training examples are ordered frame pairs from a single video, so identity
carries over: same person, same attire, same background. The discriminator
(when enabled) is updated once per generator step.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field


import numpy as np
import torch

from . import geometry, losses, networks, pipeline
from .pose import Keypoints


@dataclass
class TrainingExample:
    image_s: np.ndarray
    image_t: np.ndarray
    kp_s: Keypoints
    kp_t: Keypoints
    video_id: str = ""
    person_id: str = ""


@dataclass
class AugmentRanges:
    scale: tuple = (0.9, 1.1)
    translate_px: float = 10.0
    rotate_deg: float = 10.0
    flip_prob: float = 0.5
    saturation: tuple = (0.8, 1.2)

    @classmethod
    def identity(cls) -> "AugmentRanges":
        return cls(scale=(1.0, 1.0), translate_px=0.0, rotate_deg=0.0, flip_prob=0.0, saturation=(1.0, 1.0))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    max_steps: int = 1000
    loss_mode: str = "l1"  # l1 | vgg | vgg+gan
    lam: float = losses.DEFAULT_LAMBDA
    augment: AugmentRanges = field(default_factory=AugmentRanges)
    seed: int = 0
    checkpoint_every: int = 500
    saturating_gan: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.loss_mode not in ("l1", "vgg", "vgg+gan"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if isinstance(self.augment, dict):
            a = dict(self.augment)
            for k in ("scale", "saturation"):
                if k in a:
                    a[k] = tuple(a[k])
            self.augment = AugmentRanges(**a)


def split_dataset(videos: list, fraction: float, seed: int) -> tuple:
    """Split videos into (train, test) at video granularity.

    All videos of a given person land on the same side, so no individual
    appears in both sets.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    by_person = {}
    for v in videos:
        by_person.setdefault(v.person_id, []).append(v)
    groups = sorted(by_person.items())
    rng = np.random.default_rng(seed)
    rng.shuffle(groups)
    target = max(1, round(fraction * len(videos)))
    test, train = [], []
    for person, vids in groups:
        if len(test) < target:
            test.extend(vids)
        else:
            train.extend(vids)
    if not train:
        blocker = test[-1].person_id
        raise ValueError(
            f"cannot split: person {blocker!r} forces every video into the test side at fraction {fraction}"
        )
    return train, test


def sample_pair(video, rng: np.random.Generator) -> TrainingExample:
    """Uniformly sample an ordered frame pair (s != t) from one video."""
    n = len(video.frames)
    if n < 2:
        raise ValueError(f"video {video.video_id!r} has fewer than 2 frames")
    s = int(rng.integers(n))
    t = int(rng.integers(n - 1))
    if t >= s:
        t += 1
    image_s, kp_s = video.load_frame(s)
    image_t, kp_t = video.load_frame(t)
    return TrainingExample(image_s, image_t, kp_s, kp_t, video.video_id, video.person_id)


def _warp_image(image: np.ndarray, T_fwd: geometry.SimilarityTransform) -> np.ndarray:
    """Apply a forward similarity to image content (backward sampling)."""
    t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))
    out = geometry.warp_bilinear(t, geometry.invert(T_fwd))
    return out.numpy().transpose(1, 2, 0)


def _adjust_saturation(image: np.ndarray, factor: float) -> np.ndarray:
    gray = image.mean(axis=2, keepdims=True)
    return np.clip(gray + factor * (image - gray), -1.0, 1.0)


def augment(example: TrainingExample, ranges: AugmentRanges, rng: np.random.Generator) -> TrainingExample:
    """One random draw of each augmentation, applied identically to both
    frames. Keypoints follow the same spatial map; flips swap left/right
    joint labels; saturation touches images only."""
    H, W = example.image_s.shape[:2]
    img_s, img_t = example.image_s, example.image_t
    kp_s, kp_t = example.kp_s, example.kp_t

    if rng.uniform() < ranges.flip_prob:
        img_s = img_s[:, ::-1].copy()
        img_t = img_t[:, ::-1].copy()
        kp_s = kp_s.flipped_lr(W)
        kp_t = kp_t.flipped_lr(W)

    s = rng.uniform(*ranges.scale)
    theta = math.radians(rng.uniform(-ranges.rotate_deg, ranges.rotate_deg))
    tx = rng.uniform(-ranges.translate_px, ranges.translate_px)
    ty = rng.uniform(-ranges.translate_px, ranges.translate_px)
    a = s * math.cos(theta)
    b = s * math.sin(theta)
    # rotate/scale about the image center, then translate
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    T = geometry.SimilarityTransform(a, b, cx - a * cx + b * cy + tx, cy - b * cx - a * cy + ty)
    if T.params().tolist() != [1.0, 0.0, 0.0, 0.0]:
        img_s = _warp_image(img_s, T)
        img_t = _warp_image(img_t, T)
        kp_s = Keypoints(T.apply(kp_s.coords), kp_s.present.copy())
        kp_t = Keypoints(T.apply(kp_t.coords), kp_t.present.copy())

    sat = rng.uniform(*ranges.saturation)
    if sat != 1.0:
        img_s = _adjust_saturation(img_s, sat)
        img_t = _adjust_saturation(img_t, sat)

    return TrainingExample(img_s, img_t, kp_s, kp_t, example.video_id, example.person_id)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, report: losses.LossReport):
        super().__init__(f"non-finite loss at step {step}: {report}")
        self.step = step
        self.report = report


class Trainer:
    """Joint training of the three generator networks (and optionally the
    discriminator) on sampled, augmented frame pairs."""

    def __init__(
        self,
        nets: pipeline.GeneratorNets,
        gen_config: pipeline.GeneratorConfig,
        train_videos: list,
        config: TrainConfig,
        disc: networks.NetworkHandle | None = None,
        feature_extractor: losses.FeatureExtractor | None = None,
    ):
        self.nets = nets
        self.gen_config = gen_config
        self.videos = train_videos
        self.config = config
        self.disc = disc
        self.features = feature_extractor
        if config.loss_mode in ("vgg", "vgg+gan") and feature_extractor is None:
            raise ValueError(f"loss mode {config.loss_mode!r} requires a feature extractor")
        if config.loss_mode == "vgg+gan" and disc is None:
            raise ValueError("vgg+gan mode requires a discriminator")
        self.rng = np.random.default_rng(config.seed)
        self.noise_rng = torch.Generator().manual_seed(config.seed)
        self.opt_g = torch.optim.Adam(
            list(nets.parameters()),
            lr=config.learning_rate,
            betas=(config.beta1, config.beta2),
            eps=config.adam_eps,
        )
        self.opt_d = None
        if disc is not None:
            self.opt_d = torch.optim.Adam(
                disc.module.parameters(),
                lr=config.learning_rate,
                betas=(config.beta1, config.beta2),
                eps=config.adam_eps,
            )
        self.step_count = 0
        self.d_updates = 0

    def sample_batch(self) -> list:
        batch = []
        for _ in range(self.config.batch_size):
            video = self.videos[int(self.rng.integers(len(self.videos)))]
            ex = sample_pair(video, self.rng)
            batch.append(augment(ex, self.config.augment, self.rng))
        return batch

    def train_step(self, batch: list | None = None) -> losses.LossReport:
        """One generator update (plus one discriminator update in vgg+gan
        mode). Raises TrainingDiverged on a non-finite loss."""
        cfg = self.config
        if batch is None:
            batch = self.sample_batch()
        dt = self.gen_config.torch_dtype
        prepared = pipeline.prepare_batch(
            [pipeline.GeneratorInput(ex.image_s, ex.kp_s, ex.kp_t) for ex in batch], self.gen_config
        )
        target = torch.stack(
            [torch.as_tensor(ex.image_t, dtype=dt).permute(2, 0, 1) for ex in batch]
        )
        out = pipeline.generator_forward(prepared, self.nets, self.gen_config, self.noise_rng)

        report = losses.LossReport(lam=cfg.lam)
        l1 = losses.loss_l1(out.y, target)
        report.l1 = float(l1.detach())
        if cfg.loss_mode == "l1":
            g_loss = l1
            report.combined = report.l1
        else:
            vgg = losses.loss_vgg(out.y, target, self.features)
            report.vgg = float(vgg.detach())
            if cfg.loss_mode == "vgg":
                g_loss = vgg
                report.combined = report.vgg
            else:
                gan_d, gan_g = losses.loss_gan(self.disc, target, out.y, prepared.heat_t, cfg.saturating_gan)
                report.gan_d = float(gan_d.detach())
                report.gan_g = float(gan_g.detach())
                g_loss = losses.loss_combined(vgg, gan_g, cfg.lam)
                report.combined = float(g_loss.detach())

        if not math.isfinite(report.combined):
            raise TrainingDiverged(self.step_count, report)
        # generator backward runs before the discriminator weights move,
        # since gan_g was computed against the current discriminator
        self.opt_g.zero_grad()
        g_loss.backward(retain_graph=cfg.loss_mode == "vgg+gan")
        if cfg.loss_mode == "vgg+gan":
            # clear the spillover gradients gan_g pushed into the
            # discriminator, then apply its own update
            self.opt_d.zero_grad()
            gan_d.backward()
            self.opt_d.step()
            self.d_updates += 1
        self.opt_g.step()
        self.step_count += 1
        return report

    def train(self, max_steps: int | None = None, log_path=None, checkpoint_path=None, progress=None) -> list:
        """Run the loop; returns the per-step LossReports and writes the
        append-only CSV loss curve if log_path is given."""
        steps = max_steps if max_steps is not None else self.config.max_steps
        reports = []
        writer = None
        log_file = None
        if log_path is not None:
            log_file = open(log_path, "a", newline="")
            writer = csv.writer(log_file)
            if log_file.tell() == 0:
                writer.writerow(["step", "l1", "vgg", "gan_g", "gan_d", "combined", "wall_ms"])
        try:
            for _ in range(steps):
                t0 = time.monotonic()
                report = self.train_step()
                wall_ms = (time.monotonic() - t0) * 1000.0
                reports.append(report)
                if writer is not None:
                    writer.writerow(
                        [self.step_count, f"{report.l1:.6f}", f"{report.vgg:.6f}", f"{report.gan_g:.6f}",
                         f"{report.gan_d:.6f}", f"{report.combined:.6f}", f"{wall_ms:.1f}"]
                    )
                if checkpoint_path is not None and self.step_count % self.config.checkpoint_every == 0:
                    self.save(checkpoint_path)
                if progress is not None:
                    progress(self.step_count, report)
        finally:
            if log_file is not None:
                log_file.close()
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return reports

    def save(self, path) -> None:
        extra = {}
        if self.features is not None and self.features.fitted:
            extra["feature_stats"] = self.features.stats_dict()
        pipeline.save_checkpoint(path, self.nets, self.gen_config, extra=extra)


def warm_start_gan(vgg_checkpoint_path, seed: int = 0):
    """Initialize a vgg+gan run: generator weights copied from an existing
    checkpoint, discriminator freshly initialized."""
    nets, config, extra = pipeline.load_checkpoint(vgg_checkpoint_path)
    disc = networks.build(
        networks.discriminator_spec(config.width_scale),
        resolution=config.resolution,
        dtype=config.torch_dtype,
        seed=seed,
    )
    return nets, disc, config, extra
