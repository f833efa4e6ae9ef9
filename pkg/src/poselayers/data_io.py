"""Dataset ingestion, image codecs, and the synthetic articulated-figure
toy dataset used for desk-scale verification.

Dataset layout: a JSON manifest listing videos, each with a person id and
ordered frame records pointing at an image file and a keypoint file (one
JSON document per frame, joints in canonical order).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .pose import JointId, Keypoints, NUM_JOINTS

MANIFEST_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Image codec: lossless 8-bit RGB, mapped to float [-1, 1]


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except Exception as e:
        raise IOError(f"cannot decode image {path}: {e}") from e
    return arr / 127.5 - 1.0


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(image, -1.0, 1.0)
    arr = np.round((arr + 1.0) * 127.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class FrameRecord:
    index: int
    image_path: Path
    keypoint_path: Path


@dataclass
class Video:
    video_id: str
    person_id: str
    frames: list

    def load_frame(self, i: int):
        rec = self.frames[i]
        image = read_image(rec.image_path)
        kp = load_keypoints(rec.keypoint_path)
        return image, kp


@dataclass
class DatasetManifest:
    root: Path
    videos: list
    schema_version: int = MANIFEST_SCHEMA_VERSION


def load_keypoints(path) -> Keypoints:
    with open(path) as f:
        doc = json.load(f)
    try:
        return Keypoints.from_dict(doc)
    except (ValueError, KeyError) as e:
        raise ValueError(f"malformed keypoint file {path}: {e}") from e


def save_keypoints(path, kp: Keypoints) -> None:
    with open(path, "w") as f:
        json.dump(kp.to_dict(), f, indent=1)


def load_dataset(manifest_path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        doc = json.load(f)
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ValueError(f"{manifest_path}: unsupported manifest schema {doc.get('schema_version')}")
    root = manifest_path.parent
    videos = []
    for v in doc["videos"]:
        frames = []
        last = -1
        for fr in v["frames"]:
            if fr["index"] <= last:
                raise ValueError(f"{manifest_path}: frame order not increasing in video {v['video_id']}")
            last = fr["index"]
            rec = FrameRecord(fr["index"], root / fr["image"], root / fr["keypoints"])
            for p in (rec.image_path, rec.keypoint_path):
                if not p.exists():
                    raise FileNotFoundError(f"{manifest_path}: missing file {p}")
            frames.append(rec)
        videos.append(Video(v["video_id"], v["person_id"], frames))
    return DatasetManifest(root=root, videos=videos)


def write_manifest(path, videos: list) -> None:
    path = Path(path)
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "videos": [
            {
                "video_id": v.video_id,
                "person_id": v.person_id,
                "frames": [
                    {
                        "index": fr.index,
                        "image": str(fr.image_path.relative_to(path.parent)),
                        "keypoints": str(fr.keypoint_path.relative_to(path.parent)),
                    }
                    for fr in v.frames
                ],
            }
            for v in videos
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


# ---------------------------------------------------------------------------
# Toy articulated figure


@dataclass
class ToyFigureSpec:
    """A 2D stick figure animated over a static procedural background.

    The emitted keypoints are the exact coordinates used for rendering, so
    the toy set doubles as a ground-truth oracle for the whole pipeline.
    """

    image_size: int = 64
    # limb lengths as fractions of image size
    torso_height: float = 0.28
    shoulder_width: float = 0.20
    hip_width: float = 0.14
    neck_to_head: float = 0.12
    upper_arm: float = 0.14
    lower_arm: float = 0.13
    upper_leg: float = 0.16
    lower_leg: float = 0.15
    # joint-angle trajectory parameters
    swing_amplitude: float = 0.6  # radians
    drift_amplitude: float = 0.06  # fraction of image size
    seed: int = 0

    # one RGB color per part, drawing-friendly and mutually distinct
    part_colors: tuple = (
        (230, 190, 140),  # head
        (220, 60, 60),  # l upper arm
        (250, 120, 40),  # r upper arm
        (200, 40, 140),  # l lower arm
        (250, 180, 60),  # r lower arm
        (60, 80, 220),  # l upper leg
        (70, 170, 230),  # r upper leg
        (40, 140, 90),  # l lower leg
        (120, 220, 120),  # r lower leg
        (150, 110, 200),  # torso
    )


def _figure_keypoints(spec: ToyFigureSpec, rng: np.random.Generator, t: float) -> Keypoints:
    """Joint locations at animation phase t in [0, 1)."""
    S = spec.image_size
    # per-video constants drawn once from rng (caller passes a per-video rng
    # that is advanced identically for every frame)
    cx = S * (0.5 + spec.drift_amplitude * math.sin(2 * math.pi * (t + rng.uniform(0, 1))))
    cy = S * (0.58 + 0.02 * math.sin(2 * math.pi * t))
    lean = 0.15 * math.sin(2 * math.pi * t)

    def polar(origin, angle, length):
        return origin + S * length * np.array([math.sin(angle), math.cos(angle)])

    up = np.array([math.sin(lean), -math.cos(lean)])
    hip_c = np.array([cx, cy])
    neck = hip_c + S * spec.torso_height * up
    head = neck + S * spec.neck_to_head * up
    right = np.array([math.cos(lean), math.sin(lean)])
    l_sh = neck - right * S * spec.shoulder_width / 2
    r_sh = neck + right * S * spec.shoulder_width / 2
    l_hip = hip_c - right * S * spec.hip_width / 2
    r_hip = hip_c + right * S * spec.hip_width / 2

    a = spec.swing_amplitude
    phase = 2 * math.pi * t
    # arm/leg angles measured from straight down (angle grows outward)
    la_u = 0.35 + a * math.sin(phase)
    ra_u = -0.35 - a * math.sin(phase + 0.7)
    la_l = la_u + 0.5 + 0.4 * math.sin(phase * 2)
    ra_l = ra_u - 0.5 - 0.4 * math.cos(phase * 2)
    ll_u = 0.18 + 0.5 * a * math.sin(phase + math.pi)
    rl_u = -0.18 - 0.5 * a * math.sin(phase)
    ll_l = ll_u + 0.25 * math.sin(phase * 2 + 1.0)
    rl_l = rl_u - 0.25 * math.sin(phase * 2)

    l_el = polar(l_sh, la_u, spec.upper_arm)
    r_el = polar(r_sh, ra_u, spec.upper_arm)
    l_wr = polar(l_el, la_l, spec.lower_arm)
    r_wr = polar(r_el, ra_l, spec.lower_arm)
    l_kn = polar(l_hip, ll_u, spec.upper_leg)
    r_kn = polar(r_hip, rl_u, spec.upper_leg)
    l_an = polar(l_kn, ll_l, spec.lower_leg)
    r_an = polar(r_kn, rl_l, spec.lower_leg)

    coords = np.zeros((NUM_JOINTS, 2))
    coords[JointId.HEAD] = head
    coords[JointId.NECK] = neck
    coords[JointId.L_SHOULDER] = l_sh
    coords[JointId.R_SHOULDER] = r_sh
    coords[JointId.L_ELBOW] = l_el
    coords[JointId.R_ELBOW] = r_el
    coords[JointId.L_WRIST] = l_wr
    coords[JointId.R_WRIST] = r_wr
    coords[JointId.L_HIP] = l_hip
    coords[JointId.R_HIP] = r_hip
    coords[JointId.L_KNEE] = l_kn
    coords[JointId.R_KNEE] = r_kn
    coords[JointId.L_ANKLE] = l_an
    coords[JointId.R_ANKLE] = r_an
    return Keypoints.all_present(coords)


def _procedural_background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Static per-video background: smooth low-frequency color field."""
    coarse = rng.uniform(40, 215, size=(6, 6, 3))
    bg = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    return np.clip(bg, 0, 255).astype(np.uint8)


def _render_figure(canvas: np.ndarray, kp: Keypoints, spec: ToyFigureSpec) -> None:
    S = spec.image_size
    thick = max(2, round(S / 24))
    J = JointId
    pt = lambda j: tuple(int(round(c)) for c in kp.coords[j])
    colors = spec.part_colors
    # torso quad first so limbs and head draw on top of it
    quad = np.array([pt(J.L_SHOULDER), pt(J.R_SHOULDER), pt(J.R_HIP), pt(J.L_HIP)], dtype=np.int32)
    cv2.fillConvexPoly(canvas, quad, colors[9])
    limbs = [
        (J.L_HIP, J.L_KNEE, colors[5]),
        (J.R_HIP, J.R_KNEE, colors[6]),
        (J.L_KNEE, J.L_ANKLE, colors[7]),
        (J.R_KNEE, J.R_ANKLE, colors[8]),
        (J.L_SHOULDER, J.L_ELBOW, colors[1]),
        (J.R_SHOULDER, J.R_ELBOW, colors[2]),
        (J.L_ELBOW, J.L_WRIST, colors[3]),
        (J.R_ELBOW, J.R_WRIST, colors[4]),
    ]
    for j1, j2, color in limbs:
        cv2.line(canvas, pt(j1), pt(j2), color, thickness=thick, lineType=cv2.LINE_8)
    head_mid = (kp.coords[J.HEAD] + kp.coords[J.NECK]) / 2
    radius = max(2, round(S * spec.neck_to_head * 0.7))
    cv2.circle(canvas, tuple(int(round(c)) for c in head_mid), radius, colors[0], thickness=-1, lineType=cv2.LINE_8)


def generate_toy_dataset(spec: ToyFigureSpec, n_videos: int, frames_per_video: int, out_dir) -> Path:
    """Render the toy dataset and return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    videos = []
    for v in range(n_videos):
        vdir = out_dir / f"video{v:03d}"
        vdir.mkdir(exist_ok=True)
        vid_rng = np.random.default_rng([spec.seed, v])
        bg = _procedural_background(spec.image_size, vid_rng)
        phase0 = vid_rng.uniform(0, 1)
        speed = vid_rng.uniform(0.8, 1.4)
        frames = []
        for i in range(frames_per_video):
            t = phase0 + speed * i / frames_per_video
            kp = _figure_keypoints(spec, np.random.default_rng([spec.seed, v, 7]), t)
            canvas = bg.copy()
            _render_figure(canvas, kp, spec)
            img_path = vdir / f"frame{i:04d}.png"
            kp_path = vdir / f"frame{i:04d}.json"
            Image.fromarray(canvas, mode="RGB").save(img_path)
            save_keypoints(kp_path, kp)
            frames.append(FrameRecord(i, img_path, kp_path))
        videos.append(Video(f"video{v:03d}", f"person{v:03d}", frames))
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, videos)
    return manifest_path
