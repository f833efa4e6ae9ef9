"""The four trainable networks: segmentation, background and foreground
UNets plus the pose-conditioned discriminator.

Architectures are declared as data (LayerSpec sequences) so they can be
serialized, fingerprinted and asserted against golden fixtures; `build`
turns a spec into a torch module.
"""

from __future__ import annotations

import hashlib

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT_VERSION = 1

LEAKY_SLOPE = 0.2
INIT_STD = 0.02


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | upsample | dense | flatten
    filters: int = 0
    kernel: int = 3
    stride: int = 1
    activation: str = "lrelu"  # lrelu | linear | tanh | sigmoid | softmax

    def label(self) -> str:
        if self.kind == "conv":
            s = f"C{self.filters}"
            if self.stride == 2:
                s += "_2"
            if self.kernel != 3:
                s += f"(k{self.kernel})"
            if self.activation != "lrelu":
                s += f"[{self.activation}]"
            return s
        if self.kind == "upsample":
            return "U"
        if self.kind == "flatten":
            return "F"
        if self.kind == "dense":
            s = f"D{self.filters}"
            if self.activation != "lrelu":
                s += f"[{self.activation}]"
            return s
        raise ValueError(self.kind)


@dataclass(frozen=True)
class UNetSpec:
    name: str
    in_channels: int
    encoder: tuple
    decoder: tuple
    # (encoder_layer, decoder_layer) 1-based pairs; activations of the
    # encoder layer are concatenated onto the named decoder layer's output.
    skips: tuple
    heads: tuple

    def to_text(self) -> str:
        lines = [
            f"{self.name}:",
            f"  input_channels: {self.in_channels}",
            "  encoder: " + ", ".join(l.label() for l in self.encoder),
            "  decoder: " + ", ".join(l.label() for l in self.decoder),
            "  skips: " + ", ".join(f"enc{e}->dec{d}" for e, d in self.skips),
            "  heads: " + ", ".join(l.label() for l in self.heads),
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class DiscriminatorSpec:
    name: str
    in_channels: int
    layers: tuple

    def to_text(self) -> str:
        return (
            f"{self.name}:\n"
            f"  input_channels: {self.in_channels}\n"
            "  layers: " + ", ".join(l.label() for l in self.layers)
        )


def _scaled(filters: int, width_scale: float) -> int:
    return max(1, round(filters * width_scale))


def _conv(f, stride=1, kernel=3, activation="lrelu"):
    return LayerSpec("conv", filters=f, kernel=kernel, stride=stride, activation=activation)


def _unet_body(widths_enc, widths_dec, width_scale):
    """Shared encoder/decoder shape: 5 downsampling stages, 5 upsampling
    stages, skips wired between equal spatial resolutions."""
    enc = []
    for i, f in enumerate(widths_enc):
        enc.append(_conv(_scaled(f, width_scale), stride=2 if i % 2 == 1 else 1, kernel=7 if i == 0 else 3))
    dec = []
    for f in widths_dec[:-1]:
        dec.append(_conv(_scaled(f, width_scale)))
        dec.append(LayerSpec("upsample"))
    dec.append(_conv(_scaled(widths_dec[-1], width_scale)))
    # pre-downsample encoder activations -> equal-resolution decoder outputs
    skips = ((9, 3), (7, 5), (5, 7), (3, 9), (1, 11))
    return tuple(enc), tuple(dec), skips


def segmentation_net_spec(width_scale: float = 1.0) -> UNetSpec:
    """Residual mask logits from [I_s, p_s] (17ch in, L+1 = 11ch out, linear)."""
    enc, dec, skips = _unet_body(
        [64, 64, 128, 128, 128, 128, 128, 128, 128, 128],
        [128, 128, 128, 128, 128, 64],
        width_scale,
    )
    return UNetSpec(
        name="segmentation",
        in_channels=17,
        encoder=enc,
        decoder=dec,
        skips=skips,
        heads=(_conv(11, activation="linear"),),
    )


def background_net_spec(width_scale: float = 1.0) -> UNetSpec:
    """Hole-filled background from [I_s^{L+1}, M_s^{L+1}, p_s] (18ch in, 3ch tanh out)."""
    enc, dec, skips = _unet_body(
        [64, 64, 128, 128, 128, 128, 128, 128, 128, 128],
        [128, 128, 128, 128, 128, 64],
        width_scale,
    )
    return UNetSpec(
        name="background",
        in_channels=18,
        encoder=enc,
        decoder=dec,
        skips=skips,
        heads=(_conv(3, activation="tanh"),),
    )


def foreground_net_spec(width_scale: float = 1.0) -> UNetSpec:
    """Target foreground and mask from [W, p_t] (44ch in; 3ch tanh + 1ch sigmoid)."""
    enc, dec, skips = _unet_body(
        [128, 128, 128, 128, 256, 256, 256, 256, 256, 256],
        [256, 256, 256, 256, 128, 64],
        width_scale,
    )
    return UNetSpec(
        name="foreground",
        in_channels=44,
        encoder=enc,
        decoder=dec,
        skips=skips,
        heads=(_conv(3, activation="tanh"), _conv(1, activation="sigmoid")),
    )


def discriminator_spec(width_scale: float = 1.0) -> DiscriminatorSpec:
    """Real/synthetic classifier conditioned on the target pose (17ch in)."""
    f = lambda k: _scaled(k, width_scale)
    return DiscriminatorSpec(
        name="discriminator",
        in_channels=17,
        layers=(
            _conv(f(64), stride=2),
            _conv(f(128), stride=2),
            _conv(f(256), stride=2),
            _conv(f(256), stride=2),
            _conv(f(256), stride=2),
            _conv(f(256)),
            LayerSpec("flatten"),
            LayerSpec("dense", filters=f(256)),
            LayerSpec("dense", filters=f(256)),
            LayerSpec("dense", filters=2, activation="softmax"),
        ),
    )


def spec_fingerprint(spec, resolution: int | None = None) -> str:
    text = spec.to_text()
    if resolution is not None:
        text += f"\nresolution: {resolution}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _activation(name: str):
    if name == "lrelu":
        return nn.LeakyReLU(LEAKY_SLOPE)
    if name == "linear":
        return nn.Identity()
    if name == "tanh":
        return nn.Tanh()
    if name == "sigmoid":
        return nn.Sigmoid()
    if name == "softmax":
        return nn.Softmax(dim=-1)
    raise ValueError(name)


def _init_module(m):
    if isinstance(m, (nn.Conv2d, nn.Linear)):
        nn.init.trunc_normal_(m.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        nn.init.zeros_(m.bias)


class _UNet(nn.Module):
    def __init__(self, spec: UNetSpec):
        super().__init__()
        self.spec = spec
        self.enc_convs = nn.ModuleList()
        self.enc_acts = nn.ModuleList()
        ch = spec.in_channels
        enc_channels = {}
        for i, l in enumerate(spec.encoder, start=1):
            self.enc_convs.append(nn.Conv2d(ch, l.filters, l.kernel, stride=l.stride, padding=l.kernel // 2))
            self.enc_acts.append(_activation(l.activation))
            ch = l.filters
            enc_channels[i] = ch
        self.skip_at = {d: e for e, d in spec.skips}
        self.dec_layers = nn.ModuleList()
        self.dec_acts = nn.ModuleList()
        for i, l in enumerate(spec.decoder, start=1):
            if l.kind == "upsample":
                self.dec_layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
                self.dec_acts.append(nn.Identity())
            else:
                self.dec_layers.append(nn.Conv2d(ch, l.filters, l.kernel, stride=l.stride, padding=l.kernel // 2))
                self.dec_acts.append(_activation(l.activation))
                ch = l.filters
            if i in self.skip_at:
                ch += enc_channels[self.skip_at[i]]
        self.heads = nn.ModuleList(
            nn.Conv2d(ch, h.filters, h.kernel, padding=h.kernel // 2) for h in spec.heads
        )
        self.head_acts = nn.ModuleList(_activation(h.activation) for h in spec.heads)
        self.apply(_init_module)

    def forward(self, x):
        enc_out = {}
        for i, (conv, act) in enumerate(zip(self.enc_convs, self.enc_acts), start=1):
            x = act(conv(x))
            enc_out[i] = x
        for i, (layer, act) in enumerate(zip(self.dec_layers, self.dec_acts), start=1):
            x = act(layer(x))
            if i in self.skip_at:
                x = torch.cat([x, enc_out[self.skip_at[i]]], dim=1)
        outs = tuple(act(head(x)) for head, act in zip(self.heads, self.head_acts))
        return outs[0] if len(outs) == 1 else outs


class _Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec, resolution: int):
        super().__init__()
        if resolution % 32 != 0:
            raise ValueError("resolution must be divisible by 32")
        self.spec = spec
        ops = []
        ch = spec.in_channels
        size = resolution
        for l in spec.layers:
            if l.kind == "conv":
                ops.append(nn.Conv2d(ch, l.filters, l.kernel, stride=l.stride, padding=l.kernel // 2))
                ops.append(_activation(l.activation))
                ch = l.filters
                size //= l.stride
            elif l.kind == "flatten":
                ops.append(nn.Flatten())
                ch = ch * size * size
            elif l.kind == "dense":
                ops.append(nn.Linear(ch, l.filters))
                ops.append(_activation(l.activation))
                ch = l.filters
        self.body = nn.Sequential(*ops)
        self.apply(_init_module)

    def forward(self, x):
        return self.body(x)


@dataclass
class NetworkHandle:
    """A built network plus enough metadata to checkpoint it safely."""

    spec: object
    module: nn.Module
    resolution: int | None = None

    @property
    def fingerprint(self) -> str:
        return spec_fingerprint(self.spec, self.resolution)

    def forward(self, *inputs):
        return self.module(*inputs)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())


def build(spec, resolution: int | None = None, dtype=torch.float32, seed: int | None = None) -> NetworkHandle:
    """Instantiate a spec. `resolution` is required for the discriminator
    (its dense stage is sized by the flattened volume)."""
    ctx = torch.random.fork_rng()
    with ctx:
        if seed is not None:
            torch.manual_seed(seed)
        if isinstance(spec, DiscriminatorSpec):
            if resolution is None:
                raise ValueError("discriminator build requires a resolution")
            module = _Discriminator(spec, resolution)
        else:
            module = _UNet(spec)
    module.to(dtype)
    return NetworkHandle(spec=spec, module=module, resolution=resolution)


def prob_real(disc_out: torch.Tensor) -> torch.Tensor:
    """Fixed convention: the first softmax component is P(real)."""
    return disc_out[..., 0]


def _spec_to_dict(spec) -> dict:
    d = asdict(spec)
    d["__kind__"] = type(spec).__name__
    return d


def _layers_from(dicts):
    return tuple(LayerSpec(**d) for d in dicts)


def _spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("__kind__")
    if kind == "UNetSpec":
        return UNetSpec(
            name=d["name"],
            in_channels=d["in_channels"],
            encoder=_layers_from(d["encoder"]),
            decoder=_layers_from(d["decoder"]),
            skips=tuple(tuple(p) for p in d["skips"]),
            heads=_layers_from(d["heads"]),
        )
    if kind == "DiscriminatorSpec":
        return DiscriminatorSpec(name=d["name"], in_channels=d["in_channels"], layers=_layers_from(d["layers"]))
    raise ValueError(kind)


def save_handle(handle: NetworkHandle, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "fingerprint": handle.fingerprint,
            "spec": _spec_to_dict(handle.spec),
            "resolution": handle.resolution,
            "state": handle.module.state_dict(),
        },
        path,
    )


def load_handle(path, expected_fingerprint: str | None = None, dtype=torch.float32) -> NetworkHandle:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise IOError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(blob, dict) or blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise IOError(f"{path}: not a recognized checkpoint file")
    if expected_fingerprint is not None and blob["fingerprint"] != expected_fingerprint:
        raise ValueError(
            f"{path}: checkpoint fingerprint {blob['fingerprint']} does not match expected {expected_fingerprint}"
        )
    spec = _spec_from_dict(blob["spec"])
    handle = build(spec, resolution=blob["resolution"], dtype=dtype)
    handle.module.load_state_dict(blob["state"])
    handle.module.to(dtype)
    return handle
