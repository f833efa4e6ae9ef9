import csv
import math

import numpy as np
import pytest
import torch

from poselayers import losses, networks, pipeline, pose, training
from poselayers.training import (
    AugmentRanges,
    TrainConfig,
    Trainer,
    TrainingDiverged,
    TrainingExample,
    augment,
    sample_pair,
    split_dataset,
    warm_start_gan,
)


class FakeVideo:
    def __init__(self, video_id, person_id, n_frames=5, size=64, seed=0):
        self.video_id = video_id
        self.person_id = person_id
        self.frames = list(range(n_frames))
        self._rng = np.random.default_rng(seed)
        self._frames = [
            (
                self._rng.uniform(-1, 1, (size, size, 3)),
                pose.Keypoints.all_present(self._rng.uniform(8, size - 8, (14, 2))),
            )
            for _ in range(n_frames)
        ]

    def load_frame(self, i):
        return self._frames[i]


def make_videos(n, frames=5, people=None):
    people = people or [f"p{i}" for i in range(n)]
    return [FakeVideo(f"v{i}", people[i], n_frames=frames, seed=i) for i in range(n)]


# ---------------------------------------------------------------------------
# splitting


def test_split_respects_fraction_and_disjoint():
    videos = make_videos(10)
    train, test = split_dataset(videos, 0.1, seed=0)
    assert len(test) == 1 and len(train) == 9
    assert {v.video_id for v in train} | {v.video_id for v in test} == {v.video_id for v in videos}
    assert not ({v.person_id for v in train} & {v.person_id for v in test})


def test_split_keeps_person_together():
    videos = make_videos(6, people=["a", "a", "a", "b", "b", "c"])
    for seed in range(10):
        train, test = split_dataset(videos, 0.3, seed=seed)
        assert not ({v.person_id for v in train} & {v.person_id for v in test})


def test_split_deterministic_and_seed_sensitive():
    videos = make_videos(12)
    t1 = [v.video_id for v in split_dataset(videos, 0.25, seed=3)[1]]
    t2 = [v.video_id for v in split_dataset(videos, 0.25, seed=3)[1]]
    assert t1 == t2
    picks = {tuple(sorted(v.video_id for v in split_dataset(videos, 0.25, seed=s)[1])) for s in range(8)}
    assert len(picks) > 1


def test_split_errors():
    videos = make_videos(4)
    with pytest.raises(ValueError):
        split_dataset(videos, 0.0, seed=0)
    with pytest.raises(ValueError):
        split_dataset(videos, 1.0, seed=0)
    # one person owning everything cannot leave a train side
    mono = make_videos(3, people=["solo", "solo", "solo"])
    with pytest.raises(ValueError) as exc:
        split_dataset(mono, 0.1, seed=0)
    assert "solo" in str(exc.value)


# ---------------------------------------------------------------------------
# pair sampling


def test_sample_pair_never_identity_and_covers_pairs():
    video = make_videos(1, frames=4)[0]
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(300):
        ex = sample_pair(video, rng)
        s = next(i for i, (im, _) in enumerate(video._frames) if im is ex.image_s)
        t = next(i for i, (im, _) in enumerate(video._frames) if im is ex.image_t)
        assert s != t
        seen.add((s, t))
    assert len(seen) == 12  # all ordered pairs of 4 frames


def test_sample_pair_short_video():
    video = make_videos(1, frames=1)[0]
    with pytest.raises(ValueError):
        sample_pair(video, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# augmentation


def ex64(seed=0):
    v = FakeVideo("v", "p", n_frames=2, seed=seed)
    (i0, k0), (i1, k1) = v._frames
    return TrainingExample(i0, i1, k0, k1, "v", "p")


def test_augment_identity_ranges_noop():
    ex = ex64()
    out = augment(ex, AugmentRanges.identity(), np.random.default_rng(0))
    np.testing.assert_array_equal(out.image_s, ex.image_s)
    np.testing.assert_array_equal(out.image_t, ex.image_t)
    np.testing.assert_array_equal(out.kp_s.coords, ex.kp_s.coords)


def test_augment_flip_consistency():
    ex = ex64()
    ranges = AugmentRanges(scale=(1, 1), translate_px=0, rotate_deg=0, flip_prob=1.0, saturation=(1, 1))
    out = augment(ex, ranges, np.random.default_rng(0))
    np.testing.assert_array_equal(out.image_s, ex.image_s[:, ::-1])
    # keypoints mirror about the image and swap left/right labels
    W = ex.image_s.shape[1]
    lh = pose.JointId.L_HIP
    rh = pose.JointId.R_HIP
    np.testing.assert_allclose(out.kp_s.coords[lh, 0], W - 1 - ex.kp_s.coords[rh, 0])
    np.testing.assert_allclose(out.kp_s.coords[lh, 1], ex.kp_s.coords[rh, 1])


def test_augment_translation_moves_keypoints_with_pixels():
    ex = ex64()
    ranges = AugmentRanges(scale=(1, 1), translate_px=5.0, rotate_deg=0, flip_prob=0.0, saturation=(1, 1))
    out = augment(ex, ranges, np.random.default_rng(1))
    shift = out.kp_s.coords - ex.kp_s.coords
    # pure translation: every keypoint moves by the same offset
    np.testing.assert_allclose(shift, np.broadcast_to(shift[0], shift.shape), atol=1e-9)
    assert np.abs(shift[0]).max() <= 5.0 + 1e-9
    # target-frame keypoints get the identical map
    shift_t = out.kp_t.coords - ex.kp_t.coords
    np.testing.assert_allclose(shift_t, np.broadcast_to(shift[0], shift_t.shape), atol=1e-9)


def test_augment_rotation_preserves_center_distance():
    ex = ex64()
    ranges = AugmentRanges(scale=(1, 1), translate_px=0.0, rotate_deg=30, flip_prob=0.0, saturation=(1, 1))
    out = augment(ex, ranges, np.random.default_rng(2))
    c = np.array([(64 - 1) / 2, (64 - 1) / 2])
    d_before = np.linalg.norm(ex.kp_s.coords - c, axis=1)
    d_after = np.linalg.norm(out.kp_s.coords - c, axis=1)
    np.testing.assert_allclose(d_after, d_before, rtol=1e-9)


def test_augment_saturation_images_only():
    ex = ex64()
    ranges = AugmentRanges(scale=(1, 1), translate_px=0.0, rotate_deg=0, flip_prob=0.0, saturation=(0.5, 0.5))
    out = augment(ex, ranges, np.random.default_rng(3))
    np.testing.assert_array_equal(out.kp_s.coords, ex.kp_s.coords)
    gray = ex.image_s.mean(axis=2, keepdims=True)
    np.testing.assert_allclose(out.image_s, np.clip(gray + 0.5 * (ex.image_s - gray), -1, 1), atol=1e-12)


# ---------------------------------------------------------------------------
# config


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(loss_mode="l2")
    cfg = TrainConfig(augment={"scale": [1.0, 1.0], "flip_prob": 0.0})
    assert isinstance(cfg.augment, AugmentRanges)
    assert cfg.augment.scale == (1.0, 1.0)


# ---------------------------------------------------------------------------
# trainer


@pytest.fixture(scope="module")
def desk_setup():
    gen_cfg = pipeline.GeneratorConfig(resolution=64, width_scale=0.25)
    nets = pipeline.build_generator(gen_cfg, seed=0)
    videos = make_videos(2, frames=3)
    return gen_cfg, nets, videos


def small_extractor():
    fx = losses.FeatureExtractor("random-fixed", seed=0)
    fx.load_stats({"chan_mean": torch.zeros(fx.n_channels), "chan_std": torch.ones(fx.n_channels)})
    return fx


def test_trainer_l1_step_updates_weights(desk_setup):
    gen_cfg, _, videos = desk_setup
    nets = pipeline.build_generator(gen_cfg, seed=1)
    cfg = TrainConfig(batch_size=2, loss_mode="l1", seed=0, augment=AugmentRanges.identity())
    trainer = Trainer(nets, gen_cfg, videos, cfg)
    before = [p.detach().clone() for p in nets.seg.module.parameters()]
    r1 = trainer.train_step()
    assert math.isfinite(r1.l1) and r1.l1 > 0
    assert r1.combined == r1.l1
    changed = any(not torch.equal(b, p.detach()) for b, p in zip(before, nets.seg.module.parameters()))
    assert changed
    assert trainer.step_count == 1


def test_trainer_requires_extractor_and_disc(desk_setup):
    gen_cfg, nets, videos = desk_setup
    with pytest.raises(ValueError):
        Trainer(nets, gen_cfg, videos, TrainConfig(loss_mode="vgg"))
    with pytest.raises(ValueError):
        Trainer(nets, gen_cfg, videos, TrainConfig(loss_mode="vgg+gan"), feature_extractor=small_extractor())


def test_trainer_vgg_gan_mode_updates_both(desk_setup):
    gen_cfg, _, videos = desk_setup
    nets = pipeline.build_generator(gen_cfg, seed=2)
    disc = networks.build(networks.discriminator_spec(0.25), resolution=64, seed=3)
    cfg = TrainConfig(batch_size=2, loss_mode="vgg+gan", seed=0, augment=AugmentRanges.identity())
    trainer = Trainer(nets, gen_cfg, videos, cfg, disc=disc, feature_extractor=small_extractor())
    d_before = [p.detach().clone() for p in disc.module.parameters()]
    report = trainer.train_step()
    assert trainer.d_updates == 1
    assert any(not torch.equal(b, p.detach()) for b, p in zip(d_before, disc.module.parameters()))
    assert report.combined == pytest.approx(report.vgg + cfg.lam * report.gan_g, rel=1e-5)
    assert math.isfinite(report.gan_d)


def test_trainer_divergence_detection(desk_setup):
    gen_cfg, _, videos = desk_setup
    nets = pipeline.build_generator(gen_cfg, seed=4)
    # blow up the generator so the forward pass goes non-finite
    with torch.no_grad():
        for p in nets.fg.module.parameters():
            p.mul_(float("nan"))
    cfg = TrainConfig(batch_size=1, loss_mode="l1", seed=0, augment=AugmentRanges.identity())
    trainer = Trainer(nets, gen_cfg, videos, cfg)
    with pytest.raises(TrainingDiverged) as exc:
        trainer.train_step()
    assert exc.value.step == 0


def test_trainer_loss_log_csv(desk_setup, tmp_path):
    gen_cfg, _, videos = desk_setup
    nets = pipeline.build_generator(gen_cfg, seed=5)
    cfg = TrainConfig(batch_size=1, loss_mode="l1", seed=0, augment=AugmentRanges.identity())
    trainer = Trainer(nets, gen_cfg, videos, cfg)
    log = tmp_path / "loss.csv"
    trainer.train(max_steps=2, log_path=log)
    with open(log) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "l1", "vgg", "gan_g", "gan_d", "combined", "wall_ms"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    # appending a continued run keeps one header
    trainer.train(max_steps=1, log_path=log)
    with open(log) as f:
        rows = list(csv.reader(f))
    assert len(rows) == 4 and rows[3][0] == "3"
    assert float(rows[1][1]) > 0


def test_trainer_checkpoint_and_warm_start(desk_setup, tmp_path):
    gen_cfg, _, videos = desk_setup
    nets = pipeline.build_generator(gen_cfg, seed=6)
    fx = small_extractor()
    cfg = TrainConfig(batch_size=1, loss_mode="vgg", seed=0, augment=AugmentRanges.identity())
    trainer = Trainer(nets, gen_cfg, videos, cfg, feature_extractor=fx)
    path = tmp_path / "gen.pt"
    trainer.train(max_steps=1, checkpoint_path=path)
    nets2, disc, cfg2, extra = warm_start_gan(path, seed=9)
    assert cfg2.resolution == 64
    assert "feature_stats" in extra
    for a, b in zip(nets.seg.module.parameters(), nets2.seg.module.parameters()):
        assert torch.equal(a.detach(), b.detach())
    assert disc.parameter_count() > 0


def test_trainer_seed_reproducibility(desk_setup):
    gen_cfg, _, videos = desk_setup
    reports = []
    for _ in range(2):
        nets = pipeline.build_generator(gen_cfg, seed=7)
        cfg = TrainConfig(batch_size=2, loss_mode="l1", seed=11)
        trainer = Trainer(nets, gen_cfg, videos, cfg)
        reports.append([trainer.train_step().l1 for _ in range(2)])
    assert reports[0] == reports[1]
