"""Command-line surface: toygen, train, synth, synth-video, segment, eval.

Every command is deterministic under --seed at a fixed thread count.
Config files are JSON documents whose keys mirror TrainConfig /
GeneratorConfig (see README for the documented key sets).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import data_io, losses, metrics, networks, pipeline, training
from .pose import part_scheme


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _gen_config_from(doc: dict, args) -> pipeline.GeneratorConfig:
    cfg = dict(doc.get("generator", {}))
    if args.resolution is not None:
        cfg["resolution"] = args.resolution
    if getattr(args, "desk", False):
        cfg.setdefault("width_scale", 0.25)
        cfg.setdefault("resolution", 64)
    return pipeline.GeneratorConfig(**cfg)


def _make_features(profile: str, weights: str | None, seed: int) -> losses.FeatureExtractor:
    fx = losses.FeatureExtractor(profile=profile, seed=seed)
    if profile == "vgg19":
        if weights is None:
            raise SystemExit("--feature-weights is required with --feature-profile vgg19")
        fx.load_vgg19_weights(weights)
    return fx


def _fit_features_on_train(fx, train_videos, seed, sample_size=32):
    rng = np.random.default_rng(seed)
    imgs = []
    for _ in range(sample_size):
        v = train_videos[int(rng.integers(len(train_videos)))]
        image, _ = v.load_frame(int(rng.integers(len(v.frames))))
        imgs.append(torch.as_tensor(image, dtype=torch.float32).permute(2, 0, 1))
    losses.fit_feature_stats(fx, torch.stack(imgs))
    return fx


def cmd_toygen(args) -> int:
    doc = _load_config_file(args.config)
    spec_kwargs = dict(doc.get("toy", {}))
    spec_kwargs.setdefault("image_size", args.resolution or 64)
    spec_kwargs.setdefault("seed", args.seed)
    spec = data_io.ToyFigureSpec(**spec_kwargs)
    manifest = data_io.generate_toy_dataset(spec, args.videos, args.frames, args.out)
    print(f"wrote {args.videos} videos x {args.frames} frames -> {manifest}")
    return 0


def cmd_train(args) -> int:
    doc = _load_config_file(args.config)
    gen_config = _gen_config_from(doc, args)
    tc_kwargs = dict(doc.get("train", {}))
    tc_kwargs.setdefault("seed", args.seed)
    if args.loss_mode is not None:
        tc_kwargs["loss_mode"] = args.loss_mode
    if args.steps is not None:
        tc_kwargs["max_steps"] = args.steps
    if args.batch_size is not None:
        tc_kwargs["batch_size"] = args.batch_size
    tc = training.TrainConfig(**tc_kwargs)

    dataset = data_io.load_dataset(args.dataset)
    train_videos, test_videos = training.split_dataset(dataset.videos, args.test_fraction, tc.seed)
    print(f"dataset: {len(train_videos)} train / {len(test_videos)} test videos")

    disc = None
    features = None
    if args.warm_start is not None:
        nets, disc_fresh, gen_config, extra = training.warm_start_gan(args.warm_start, seed=tc.seed)
        if tc.loss_mode == "vgg+gan":
            disc = disc_fresh
    else:
        nets = pipeline.build_generator(gen_config, seed=tc.seed)
        extra = {}
        if tc.loss_mode == "vgg+gan":
            disc = networks.build(
                networks.discriminator_spec(gen_config.width_scale),
                resolution=gen_config.resolution,
                dtype=gen_config.torch_dtype,
                seed=tc.seed + 100,
            )
    if tc.loss_mode in ("vgg", "vgg+gan"):
        features = _make_features(args.feature_profile, args.feature_weights, tc.seed)
        if "feature_stats" in extra:
            features.load_stats(extra["feature_stats"])
        else:
            _fit_features_on_train(features, train_videos, tc.seed)

    out = Path(args.out or "checkpoint.pt")
    trainer = training.Trainer(nets, gen_config, train_videos, tc, disc=disc, feature_extractor=features)

    def progress(step, report):
        if step % max(1, args.log_every) == 0:
            print(f"step {step}: l1 {report.l1:.4f} combined {report.combined:.4f}", flush=True)

    trainer.train(log_path=args.loss_log, checkpoint_path=out, progress=progress)
    print(f"saved checkpoint -> {out}")
    return 0


def _load_model(args):
    nets, config, extra = pipeline.load_checkpoint(args.checkpoint)
    nets.train(False)
    return nets, config, extra


def _synth_one(nets, config, source_image, kp_s, kp_t, seed):
    return pipeline.synthesize(pipeline.GeneratorInput(source_image, kp_s, kp_t), nets, config, seed=seed)


def _to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().permute(1, 2, 0).numpy()


def _dump_intermediates(out_dir: Path, out: pipeline.GeneratorOutput) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    m_s = out.m_s[0]
    for l in range(m_s.shape[0]):
        mask = m_s[l].detach().numpy() * 2.0 - 1.0
        data_io.write_image(out_dir / f"mask_{l:02d}.png", np.repeat(mask[:, :, None], 3, axis=2))
    L = out.warped.shape[1] // 3
    for l in range(L):
        data_io.write_image(out_dir / f"warped_{l:02d}.png", _to_image(out.warped[0, 3 * l : 3 * l + 3]))
    data_io.write_image(out_dir / "y_fg.png", _to_image(out.y_fg[0]))
    m_t = out.m_t[0, 0].detach().numpy() * 2.0 - 1.0
    data_io.write_image(out_dir / "m_t.png", np.repeat(m_t[:, :, None], 3, axis=2))
    data_io.write_image(out_dir / "y_bg.png", _to_image(out.y_bg[0]))


def cmd_synth(args) -> int:
    nets, config, _ = _load_model(args)
    source = data_io.read_image(args.source_image)
    if source.shape[0] % 32 or source.shape[1] % 32:
        raise SystemExit("source resolution must be divisible by 32")
    kp_s = data_io.load_keypoints(args.source_pose)
    kp_t = data_io.load_keypoints(args.target_pose)
    out = _synth_one(nets, config, source, kp_s, kp_t, args.seed)
    out_path = Path(args.out or "synth.png")
    data_io.write_image(out_path, _to_image(out.y[0]))
    if args.dump_intermediates:
        _dump_intermediates(out_path.parent / (out_path.stem + "_intermediates"), out)
    print(f"wrote {out_path}")
    return 0


def cmd_synth_video(args) -> int:
    nets, config, _ = _load_model(args)
    source = data_io.read_image(args.source_image)
    kp_s = data_io.load_keypoints(args.source_pose)
    pose_paths = sorted(Path(args.pose_dir).glob("*.json"))
    if not pose_paths:
        raise SystemExit(f"no pose files found in {args.pose_dir}")
    out_dir = Path(args.out or "synth_video")
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, pp in enumerate(pose_paths):
        try:
            kp_t = data_io.load_keypoints(pp)
            out = _synth_one(nets, config, source, kp_s, kp_t, args.seed)
        except Exception as e:
            raise SystemExit(f"frame {i} ({pp}): {e}") from e
        data_io.write_image(out_dir / f"frame{i:04d}.png", _to_image(out.y[0]))
    print(f"wrote {len(pose_paths)} frames -> {out_dir}")
    return 0


def cmd_segment(args) -> int:
    nets, config, _ = _load_model(args)
    source = data_io.read_image(args.source_image)
    kp_s = data_io.load_keypoints(args.source_pose)
    out = _synth_one(nets, config, source, kp_s, kp_s, args.seed)
    out_dir = Path(args.out or "segmentation")
    out_dir.mkdir(parents=True, exist_ok=True)
    m_s = out.m_s[0]
    scheme = part_scheme()
    names = [p.name for p in scheme.parts] + ["background"]
    for l, name in enumerate(names):
        mask = m_s[l].detach().numpy() * 2.0 - 1.0
        data_io.write_image(out_dir / f"mask_{l:02d}_{name}.png", np.repeat(mask[:, :, None], 3, axis=2))
    print(f"wrote {len(names)} masks -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    nets, config, extra = _load_model(args)
    dataset = data_io.load_dataset(args.dataset)
    train_videos, test_videos = training.split_dataset(dataset.videos, args.test_fraction, args.seed)
    videos = test_videos if args.split == "test" else train_videos
    features = None
    if args.feature_profile is not None:
        features = _make_features(args.feature_profile, args.feature_weights, args.seed)
        if "feature_stats" in extra:
            features.load_stats(extra["feature_stats"])
        else:
            _fit_features_on_train(features, train_videos, args.seed)
    report = metrics.evaluate(
        nets, config, videos,
        seed=args.seed,
        pairs_per_video=args.pairs_per_video,
        feature_extractor=features,
        csv_path=args.out,
    )
    print(report.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poselayers", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None)
        sp.add_argument("--resolution", type=int, default=None)
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("toygen", help="generate the synthetic toy dataset")
    common(sp)
    sp.add_argument("--videos", type=int, default=8)
    sp.add_argument("--frames", type=int, default=30)
    sp.set_defaults(func=cmd_toygen)

    sp = sub.add_parser("train", help="train the generator")
    common(sp)
    sp.add_argument("--dataset", required=True, help="manifest path")
    sp.add_argument("--loss-mode", choices=["l1", "vgg", "vgg+gan"], default=None)
    sp.add_argument("--feature-profile", choices=["vgg19", "random-fixed"], default="random-fixed")
    sp.add_argument("--feature-weights", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--test-fraction", type=float, default=0.1)
    sp.add_argument("--desk", action="store_true", help="desk-scale profile (quarter widths)")
    sp.add_argument("--warm-start", default=None, help="checkpoint to initialize the generator from")
    sp.add_argument("--loss-log", default=None, help="append-only CSV loss curve")
    sp.add_argument("--log-every", type=int, default=50)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("synth", help="synthesize one image")
    common(sp, checkpoint=True)
    sp.add_argument("source_image")
    sp.add_argument("source_pose")
    sp.add_argument("target_pose")
    sp.add_argument("--dump-intermediates", action="store_true")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("synth-video", help="synthesize a frame per target pose")
    common(sp, checkpoint=True)
    sp.add_argument("source_image")
    sp.add_argument("source_pose")
    sp.add_argument("pose_dir", help="directory of target pose JSON files")
    sp.set_defaults(func=cmd_synth_video)

    sp = sub.add_parser("segment", help="write part mask visualizations")
    common(sp, checkpoint=True)
    sp.add_argument("source_image")
    sp.add_argument("source_pose")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on held-out pairs")
    common(sp, checkpoint=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--split", choices=["test", "train"], default="test")
    sp.add_argument("--test-fraction", type=float, default=0.1)
    sp.add_argument("--pairs-per-video", type=int, default=10)
    sp.add_argument("--feature-profile", choices=["vgg19", "random-fixed"], default=None)
    sp.add_argument("--feature-weights", default=None)
    sp.set_defaults(func=cmd_eval)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.manual_seed(args.seed)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
