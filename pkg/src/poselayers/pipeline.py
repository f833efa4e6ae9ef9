"""Full generator: segment the source into part layers, move the parts,
synthesize foreground + mask and a hole-filled background, then composite.

Everything is differentiable end to end except the pose-derived part
transforms. Tensors are batched NCHW torch tensors; images live in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import geometry, networks, pose

NUM_LAYERS = pose.NUM_PARTS + 1  # 10 parts + background


@dataclass
class GeneratorConfig:
    resolution: int = 256
    sigma_heat: float | None = None  # default: scaled from 7px @ 256
    noise_sigma: float = 1.0
    width_scale: float = 1.0  # 0.25 = desk profile
    dtype: str = "float32"

    def __post_init__(self):
        if self.resolution % 32 != 0:
            raise ValueError("resolution must be divisible by 32")
        if self.sigma_heat is None:
            self.sigma_heat = pose.default_sigma_heat(self.resolution)

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "sigma_heat": self.sigma_heat,
            "noise_sigma": self.noise_sigma,
            "width_scale": self.width_scale,
            "dtype": self.dtype,
        }


@dataclass
class GeneratorNets:
    seg: networks.NetworkHandle
    fg: networks.NetworkHandle
    bg: networks.NetworkHandle

    def handles(self):
        return {"seg": self.seg, "fg": self.fg, "bg": self.bg}

    def parameters(self):
        for h in (self.seg, self.fg, self.bg):
            yield from h.module.parameters()

    def train(self, mode=True):
        for h in (self.seg, self.fg, self.bg):
            h.module.train(mode)


def build_generator(config: GeneratorConfig, seed: int | None = None) -> GeneratorNets:
    dt = config.torch_dtype
    ws = config.width_scale
    base = 0 if seed is None else seed
    return GeneratorNets(
        seg=networks.build(networks.segmentation_net_spec(ws), dtype=dt, seed=None if seed is None else base),
        fg=networks.build(networks.foreground_net_spec(ws), dtype=dt, seed=None if seed is None else base + 1),
        bg=networks.build(networks.background_net_spec(ws), dtype=dt, seed=None if seed is None else base + 2),
    )


@dataclass
class GeneratorInput:
    """One synthesis request: source image (H, W, 3 in [-1, 1]) plus the
    source and target poses."""

    image: np.ndarray
    kp_s: pose.Keypoints
    kp_t: pose.Keypoints


@dataclass
class GeneratorOutput:
    m_s: torch.Tensor  # (B, L+1, H, W) normalized masks
    layers: torch.Tensor  # (B, L+1, 3, H, W) masked source layers
    warped: torch.Tensor  # (B, 3L, H, W) warped foreground stack
    y_fg: torch.Tensor  # (B, 3, H, W)
    m_t: torch.Tensor  # (B, 1, H, W)
    y_bg: torch.Tensor  # (B, 3, H, W)
    y: torch.Tensor  # (B, 3, H, W)
    transforms: list = field(default_factory=list)


def segment_source(image, heat_s, prior, seg_net) -> torch.Tensor:
    """M_s = softmax(residual_logits + log prior) per pixel over layers."""
    if image.shape[-2:] != prior.shape[-2:]:
        raise ValueError("image/prior shape mismatch")
    delta = seg_net.forward(torch.cat([image, heat_s], dim=1))
    return torch.softmax(delta + torch.log(prior), dim=1)


def mask_layers(image, m_s) -> torch.Tensor:
    """I_s^l = M_s^l * I_s, for every layer including background."""
    return m_s.unsqueeze(2) * image.unsqueeze(1)


def warp_layers(layers, transforms) -> torch.Tensor:
    """Warp the L foreground layers; returns the (B, 3L, H, W) stack in
    canonical part order."""
    B = layers.shape[0]
    out = []
    for b in range(B):
        parts = [geometry.warp_bilinear(layers[b, l], transforms[b][l]) for l in range(pose.NUM_PARTS)]
        out.append(torch.cat(parts, dim=0))
    return torch.stack(out, dim=0)


def synthesize_foreground(warped, heat_t, fg_net):
    y_fg, m_t = fg_net.forward(torch.cat([warped, heat_t], dim=1))
    return y_fg, m_t


def synthesize_background(image, m_s, heat_s, noise_sigma, bg_net, rng: torch.Generator):
    """Fill the foreground region with Gaussian noise and inpaint."""
    bg_mask = m_s[:, -1:]
    noise = torch.empty_like(image).normal_(0.0, 1.0, generator=rng) * noise_sigma if noise_sigma > 0 else torch.zeros_like(image)
    bg_layer = image * bg_mask + noise * (1.0 - bg_mask)
    return bg_net.forward(torch.cat([bg_layer, bg_mask, heat_s], dim=1))


def composite(y_fg, y_bg, m_t) -> torch.Tensor:
    return m_t * y_fg + (1.0 - m_t) * y_bg


@dataclass
class PreparedBatch:
    image: torch.Tensor  # (B, 3, H, W)
    heat_s: torch.Tensor  # (B, J, H, W)
    heat_t: torch.Tensor  # (B, J, H, W)
    prior: torch.Tensor  # (B, L+1, H, W)
    transforms: list  # per item: list of L SimilarityTransforms


def prepare_batch(inputs: list, config: GeneratorConfig) -> PreparedBatch:
    """Rasterize poses and fit part transforms for a batch of inputs."""
    dt = config.torch_dtype
    scheme = pose.part_scheme()
    images, hs, ht, priors, transforms = [], [], [], [], []
    for inp in inputs:
        H, W = inp.image.shape[:2]
        if (H, W) != (config.resolution, config.resolution):
            raise ValueError(f"image is {H}x{W}, config expects {config.resolution}")
        images.append(torch.as_tensor(inp.image, dtype=dt).permute(2, 0, 1))
        hs.append(torch.as_tensor(pose.render_heatmaps(inp.kp_s, H, W, config.sigma_heat), dtype=dt).permute(2, 0, 1))
        ht.append(torch.as_tensor(pose.render_heatmaps(inp.kp_t, H, W, config.sigma_heat), dtype=dt).permute(2, 0, 1))
        priors.append(torch.as_tensor(pose.prior_masks(inp.kp_s, scheme, H, W), dtype=dt).permute(2, 0, 1))
        transforms.append(geometry.compute_part_transforms(inp.kp_s, inp.kp_t, scheme))
    return PreparedBatch(
        image=torch.stack(images),
        heat_s=torch.stack(hs),
        heat_t=torch.stack(ht),
        prior=torch.stack(priors),
        transforms=transforms,
    )


def generator_forward(batch: PreparedBatch, nets: GeneratorNets, config: GeneratorConfig, rng: torch.Generator) -> GeneratorOutput:
    m_s = segment_source(batch.image, batch.heat_s, batch.prior, nets.seg)
    layers = mask_layers(batch.image, m_s)
    warped = warp_layers(layers, batch.transforms)
    y_fg, m_t = synthesize_foreground(warped, batch.heat_t, nets.fg)
    y_bg = synthesize_background(batch.image, m_s, batch.heat_s, config.noise_sigma, nets.bg, rng)
    y = composite(y_fg, y_bg, m_t)
    return GeneratorOutput(
        m_s=m_s, layers=layers, warped=warped, y_fg=y_fg, m_t=m_t, y_bg=y_bg, y=y,
        transforms=batch.transforms,
    )


def synthesize(inp: GeneratorInput, nets: GeneratorNets, config: GeneratorConfig, seed: int = 0) -> GeneratorOutput:
    """Single-example convenience wrapper with a fixed noise seed."""
    rng = torch.Generator().manual_seed(seed)
    batch = prepare_batch([inp], config)
    with torch.no_grad():
        return generator_forward(batch, nets, config, rng)


# ---------------------------------------------------------------------------
# Whole-generator checkpoint bundle


def save_checkpoint(path, nets: GeneratorNets, config: GeneratorConfig, extra: dict | None = None) -> None:
    blob = {
        "format_version": networks.CHECKPOINT_FORMAT_VERSION,
        "kind": "generator-bundle",
        "config": config.to_dict(),
        "nets": {
            name: {
                "fingerprint": h.fingerprint,
                "spec": networks._spec_to_dict(h.spec),
                "state": h.module.state_dict(),
            }
            for name, h in nets.handles().items()
        },
    }
    if extra:
        blob["extra"] = extra
    torch.save(blob, path)


def load_checkpoint(path) -> tuple:
    """Returns (nets, config, extra)."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise IOError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(blob, dict) or blob.get("kind") != "generator-bundle":
        raise IOError(f"{path}: not a generator checkpoint bundle")
    config = GeneratorConfig(**blob["config"])
    nets = build_generator(config)
    for name, h in nets.handles().items():
        rec = blob["nets"][name]
        if networks.spec_fingerprint(networks._spec_from_dict(rec["spec"])) != h.fingerprint:
            raise ValueError(f"{path}: stored {name} network does not match config {config.to_dict()}")
        h.module.load_state_dict(rec["state"])
        h.module.to(config.torch_dtype)
    return nets, config, blob.get("extra", {})
