"""Training losses: pixel L1, normalized deep-feature L1, and the
pose-conditioned adversarial loss, combined as feature + lambda * gan.

All reductions are means per element so magnitudes are resolution
independent. Probabilities are clamped to [1e-7, 1 - 1e-7] before logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import networks

DEFAULT_LAMBDA = 0.1
PROB_CLAMP = 1e-7
STD_FLOOR = 1e-5

# VGG19 conv topology: the 16 conv layers, with max-pools between blocks.
# Entries are conv output channels; "P" marks a 2x2 max pool.
_VGG19_FEATURES = [64, 64, "P", 128, 128, "P", 256, 256, 256, 256, "P", 512, 512, 512, 512, "P", 512, 512, 512, 512]

# ImageNet statistics used when running actual pretrained VGG19 weights.
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class LossReport:
    l1: float = 0.0
    vgg: float = 0.0
    gan_g: float = 0.0
    gan_d: float = 0.0
    combined: float = 0.0
    lam: float = DEFAULT_LAMBDA


def loss_l1(y: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if y.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(y.shape)} vs {tuple(target.shape)}")
    return (y - target).abs().mean()


class FeatureExtractor(nn.Module):
    """Fixed conv feature map with per-channel normalization statistics.

    profile "vgg19" expects pretrained weights supplied via a weight file
    (see load_vgg19_weights); profile "random-fixed" freezes a seeded
    random init of the same topology for offline / desk-scale runs.
    """

    def __init__(self, profile: str = "random-fixed", seed: int = 0, dtype=torch.float32):
        super().__init__()
        if profile not in ("vgg19", "random-fixed"):
            raise ValueError(f"unknown feature profile {profile!r}")
        self.profile = profile
        convs = []
        self.plan = []  # "conv" indices into convs, or "pool"
        ch = 3
        for item in _VGG19_FEATURES:
            if item == "P":
                self.plan.append("pool")
            else:
                self.plan.append(len(convs))
                convs.append(nn.Conv2d(ch, item, 3, padding=1))
                ch = item
        self.convs = nn.ModuleList(convs)
        self.n_channels = sum(c for c in _VGG19_FEATURES if c != "P")
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for c in self.convs:
                nn.init.kaiming_normal_(c.weight)
                nn.init.zeros_(c.bias)
        self.register_buffer("chan_mean", torch.zeros(self.n_channels, dtype=dtype))
        self.register_buffer("chan_std", torch.ones(self.n_channels, dtype=dtype))
        self.fitted = False
        self.to(dtype)
        self.requires_grad_(False)

    def load_vgg19_weights(self, path) -> None:
        """Load pretrained kernels from a tensor-container file.

        Layout: a dict mapping "conv{i}.weight" / "conv{i}.bias" for
        i = 0..15, in VGG19 layer order (conv1_1 ... conv5_4).
        """
        blob = torch.load(path, map_location="cpu", weights_only=True)
        for i, conv in enumerate(self.convs):
            w, b = blob[f"conv{i}.weight"], blob[f"conv{i}.bias"]
            if w.shape != conv.weight.shape:
                raise ValueError(f"conv{i}: weight shape {tuple(w.shape)} != {tuple(conv.weight.shape)}")
            conv.weight.data.copy_(w)
            conv.bias.data.copy_(b)

    def save_weights(self, path) -> None:
        torch.save(
            {f"conv{i}.{k}": getattr(c, k).detach().clone() for i, c in enumerate(self.convs) for k in ("weight", "bias")},
            path,
        )

    def forward(self, x: torch.Tensor) -> list:
        """Post-activation volumes of the 16 conv layers. Input in [-1, 1]."""
        if self.profile == "vgg19":
            x = (x + 1.0) / 2.0
            mean = x.new_tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
            std = x.new_tensor(_IMAGENET_STD).view(1, 3, 1, 1)
            x = (x - mean) / std
        feats = []
        for step in self.plan:
            if step == "pool":
                x = F.max_pool2d(x, 2)
            else:
                x = F.relu(self.convs[step](x))
                feats.append(x)
        return feats

    def stats_dict(self) -> dict:
        return {"chan_mean": self.chan_mean.detach().clone(), "chan_std": self.chan_std.detach().clone()}

    def load_stats(self, d: dict) -> None:
        self.chan_mean.copy_(d["chan_mean"])
        self.chan_std.copy_(d["chan_std"])
        self.fitted = True


def fit_feature_stats(extractor: FeatureExtractor, images: torch.Tensor, batch_size: int = 8) -> FeatureExtractor:
    """Fit per-channel activation mean/std over a sample of images
    (N, 3, H, W). Stds are floored at 1e-5."""
    if len(images) == 0:
        raise ValueError("empty sample")
    total = torch.zeros(extractor.n_channels, dtype=torch.float64)
    total_sq = torch.zeros(extractor.n_channels, dtype=torch.float64)
    count = torch.zeros(extractor.n_channels, dtype=torch.float64)
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            feats = extractor(images[i : i + batch_size])
            off = 0
            for f in feats:
                c = f.shape[1]
                fd = f.double()
                total[off : off + c] += fd.sum(dim=(0, 2, 3))
                total_sq[off : off + c] += (fd**2).sum(dim=(0, 2, 3))
                count[off : off + c] += fd.shape[0] * fd.shape[2] * fd.shape[3]
                off += c
    mean = total / count
    var = torch.clamp(total_sq / count - mean**2, min=0.0)
    std = torch.clamp(var.sqrt(), min=STD_FLOOR)
    extractor.chan_mean.copy_(mean.to(extractor.chan_mean.dtype))
    extractor.chan_std.copy_(std.to(extractor.chan_std.dtype))
    extractor.fitted = True
    return extractor


def loss_vgg(y: torch.Tensor, target: torch.Tensor, extractor: FeatureExtractor) -> torch.Tensor:
    """Mean absolute difference of normalized feature activations."""
    if not extractor.fitted:
        raise RuntimeError("feature statistics not fitted; call fit_feature_stats first")
    fy = extractor(y)
    ft = extractor(target)
    total = None
    n_elems = 0
    off = 0
    for a, b in zip(fy, ft):
        c = a.shape[1]
        mean = extractor.chan_mean[off : off + c].view(1, c, 1, 1)
        std = extractor.chan_std[off : off + c].view(1, c, 1, 1)
        diff = ((a - mean) / std - (b - mean) / std).abs().sum()
        total = diff if total is None else total + diff
        n_elems += a.numel()
        off += c
    return total / n_elems


def loss_gan(disc: networks.NetworkHandle, real: torch.Tensor, fake: torch.Tensor, heat_t: torch.Tensor, saturating: bool = False):
    """(gan_d, gan_g) for a pose-conditioned discriminator.

    gan_d = -E[log D(real) + log(1 - D(fake))], fake detached.
    gan_g defaults to the non-saturating -E[log D(fake)];
    saturating=True uses the literal minimax E[log(1 - D(fake))].
    """
    p_real = networks.prob_real(disc.forward(torch.cat([real, heat_t], dim=1))).clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    p_fake_d = networks.prob_real(disc.forward(torch.cat([fake.detach(), heat_t], dim=1))).clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    gan_d = -(torch.log(p_real) + torch.log(1.0 - p_fake_d)).mean()
    p_fake_g = networks.prob_real(disc.forward(torch.cat([fake, heat_t], dim=1))).clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    if saturating:
        gan_g = torch.log(1.0 - p_fake_g).mean()
    else:
        gan_g = -torch.log(p_fake_g).mean()
    return gan_d, gan_g


def loss_combined(vgg: torch.Tensor, gan_g: torch.Tensor, lam: float = DEFAULT_LAMBDA) -> torch.Tensor:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return vgg + lam * gan_g
