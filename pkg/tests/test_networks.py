from pathlib import Path

import pytest
import torch

from poselayers import networks
from poselayers.networks import (
    background_net_spec,
    build,
    discriminator_spec,
    foreground_net_spec,
    load_handle,
    prob_real,
    save_handle,
    segmentation_net_spec,
    spec_fingerprint,
)

FIXTURE = Path(__file__).parent / "fixtures" / "network_specs.txt"


def test_specs_match_golden_fixture():
    text = "\n\n".join(
        s.to_text()
        for s in (segmentation_net_spec(), background_net_spec(), foreground_net_spec(), discriminator_spec())
    ) + "\n"
    assert text == FIXTURE.read_text()


def test_full_scale_shapes():
    seg = build(segmentation_net_spec(), seed=0)
    out = seg.forward(torch.zeros(1, 17, 256, 256))
    assert out.shape == (1, 11, 256, 256)

    bg = build(background_net_spec(), seed=0)
    out = bg.forward(torch.zeros(1, 18, 256, 256))
    assert out.shape == (1, 3, 256, 256)
    assert out.abs().max() <= 1.0

    fg = build(foreground_net_spec(), seed=0)
    y_fg, m_t = fg.forward(torch.zeros(1, 44, 256, 256))
    assert y_fg.shape == (1, 3, 256, 256)
    assert m_t.shape == (1, 1, 256, 256)

    disc = build(discriminator_spec(), resolution=256, seed=0)
    out = disc.forward(torch.zeros(1, 17, 256, 256))
    assert out.shape == (1, 2)
    assert float(out.sum().detach()) == pytest.approx(1.0, abs=1e-6)


def test_desk_scale_shapes():
    seg = build(segmentation_net_spec(0.25), seed=0)
    assert seg.forward(torch.zeros(2, 17, 64, 64)).shape == (2, 11, 64, 64)
    fg = build(foreground_net_spec(0.25), seed=0)
    y_fg, m_t = fg.forward(torch.randn(1, 44, 64, 64))
    assert y_fg.shape == (1, 3, 64, 64)
    assert (m_t >= 0).all() and (m_t <= 1).all()
    assert (y_fg >= -1).all() and (y_fg <= 1).all()


def test_bottleneck_is_input_over_32():
    seg = build(segmentation_net_spec(0.25), seed=0)
    x = torch.zeros(1, 17, 64, 64)
    for conv, act in zip(seg.module.enc_convs, seg.module.enc_acts):
        x = act(conv(x))
    assert x.shape[-1] == 64 // 32


def test_discriminator_flatten_size():
    disc = build(discriminator_spec(), resolution=256, seed=0)
    linears = [m for m in disc.module.body if isinstance(m, torch.nn.Linear)]
    assert linears[0].in_features == 8 * 8 * 256


def test_discriminator_output_range():
    disc = build(discriminator_spec(0.25), resolution=64, seed=1)
    out = disc.forward(torch.randn(4, 17, 64, 64))
    assert ((out > 0) & (out < 1)).all()
    p = prob_real(out)
    assert p.shape == (4,)
    torch.testing.assert_close(p, out[:, 0])


def test_background_vs_segmentation_param_delta():
    # same trunk: parameter counts differ only via the first and last convs
    seg = build(segmentation_net_spec(), seed=0)
    bg = build(background_net_spec(), seed=0)
    first_delta = (18 - 17) * 64 * 7 * 7
    last_delta = (11 - 3) * (128 * 3 * 3 + 1)
    assert bg.parameter_count() - seg.parameter_count() == first_delta - last_delta


def test_forward_deterministic():
    seg = build(segmentation_net_spec(0.25), seed=3)
    x = torch.randn(1, 17, 64, 64)
    assert torch.equal(seg.forward(x), seg.forward(x))


def test_build_seed_reproducible():
    a = build(segmentation_net_spec(0.25), seed=7)
    b = build(segmentation_net_spec(0.25), seed=7)
    for pa, pb in zip(a.module.parameters(), b.module.parameters()):
        assert torch.equal(pa, pb)


def test_save_load_roundtrip(tmp_path):
    h = build(segmentation_net_spec(0.25), seed=4)
    x = torch.randn(1, 17, 64, 64)
    ref = h.forward(x)
    path = tmp_path / "seg.pt"
    save_handle(h, path)
    h2 = load_handle(path, expected_fingerprint=h.fingerprint)
    assert torch.equal(h2.forward(x), ref)


def test_load_fingerprint_mismatch(tmp_path):
    h = build(segmentation_net_spec(0.25), seed=4)
    path = tmp_path / "seg.pt"
    save_handle(h, path)
    other = spec_fingerprint(segmentation_net_spec(1.0))
    with pytest.raises(ValueError, match="fingerprint"):
        load_handle(path, expected_fingerprint=other)


def test_load_corrupt_file(tmp_path):
    path = tmp_path / "bad.pt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(IOError):
        load_handle(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(IOError):
        load_handle(tmp_path / "nope.pt")


def test_any_multiple_of_32_resolution():
    seg = build(segmentation_net_spec(0.25), seed=0)
    assert seg.forward(torch.zeros(1, 17, 96, 96)).shape == (1, 11, 96, 96)


def test_parameter_gradient_spot_check():
    # finite differences on a few randomly chosen parameters, double precision
    torch.manual_seed(0)
    h = build(segmentation_net_spec(0.25), dtype=torch.float64, seed=5)
    x = torch.randn(1, 17, 32, 32, dtype=torch.float64)
    target = torch.randn(1, 11, 32, 32, dtype=torch.float64)

    def loss():
        return ((h.forward(x) - target) ** 2).mean()

    l = loss()
    l.backward()
    params = list(h.module.parameters())
    rng = torch.Generator().manual_seed(1)
    checked = 0
    for _ in range(40):
        if checked >= 8:
            break
        p = params[int(torch.randint(len(params), (1,), generator=rng))]
        flat = p.detach().view(-1)
        idx = int(torch.randint(flat.numel(), (1,), generator=rng))
        g = p.grad.view(-1)[idx].item()
        hstep = 1e-7
        with torch.no_grad():
            flat[idx] += hstep
            lp = loss().item()
            flat[idx] -= 2 * hstep
            lm = loss().item()
            flat[idx] += hstep
        fd = (lp - lm) / (2 * hstep)
        denom = max(abs(fd), abs(g))
        if denom < 1e-4:
            continue  # below finite-difference noise; draw another
        assert abs(g - fd) / denom < 1e-3
        checked += 1
    assert checked >= 5
