"""Joints, body parts, pose heatmaps and prior part masks.

All spatial conventions live here: pixel (x, y) samples continuous
location (x, y), origin at the top-left corner, x rightward, y downward.
Heatmap / mask arrays are indexed data[y, x, channel].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

KEYPOINT_SCHEMA_VERSION = 1

NUM_JOINTS = 14
NUM_PARTS = 10

# Floor applied to prior masks so log(prior) stays finite.
PRIOR_EPS = 1e-6

# Heatmap bump std at 256x256; scaled linearly with resolution.
SIGMA_HEAT_256 = 7.0


class JointId(enum.IntEnum):
    """The 14 joints, in canonical channel / serialization order."""

    HEAD = 0
    NECK = 1
    L_SHOULDER = 2
    R_SHOULDER = 3
    L_ELBOW = 4
    R_ELBOW = 5
    L_WRIST = 6
    R_WRIST = 7
    L_HIP = 8
    R_HIP = 9
    L_KNEE = 10
    R_KNEE = 11
    L_ANKLE = 12
    R_ANKLE = 13


JOINT_NAMES = [j.name.lower() for j in JointId]

# Left/right pairs, used when horizontally flipping annotations.
LR_SWAP = {
    JointId.L_SHOULDER: JointId.R_SHOULDER,
    JointId.R_SHOULDER: JointId.L_SHOULDER,
    JointId.L_ELBOW: JointId.R_ELBOW,
    JointId.R_ELBOW: JointId.L_ELBOW,
    JointId.L_WRIST: JointId.R_WRIST,
    JointId.R_WRIST: JointId.L_WRIST,
    JointId.L_HIP: JointId.R_HIP,
    JointId.R_HIP: JointId.L_HIP,
    JointId.L_KNEE: JointId.R_KNEE,
    JointId.R_KNEE: JointId.L_KNEE,
    JointId.L_ANKLE: JointId.R_ANKLE,
    JointId.R_ANKLE: JointId.L_ANKLE,
}


@dataclass
class Keypoints:
    """2D joint coordinates for one person in one frame.

    coords: (14, 2) float array of (x, y) pixel coordinates. Coordinates may
    lie outside the image; a joint is *absent* only when flagged in
    ``present``.
    """

    coords: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.coords.shape != (NUM_JOINTS, 2):
            raise ValueError(f"expected ({NUM_JOINTS}, 2) coords, got {self.coords.shape}")
        if self.present.shape != (NUM_JOINTS,):
            raise ValueError(f"expected ({NUM_JOINTS},) presence flags, got {self.present.shape}")
        if not np.all(np.isfinite(self.coords[self.present])):
            raise ValueError("non-finite coordinates for a present joint")

    @classmethod
    def all_present(cls, coords) -> "Keypoints":
        return cls(np.asarray(coords, dtype=np.float64), np.ones(NUM_JOINTS, dtype=bool))

    def translated(self, dx: float, dy: float) -> "Keypoints":
        return Keypoints(self.coords + np.array([dx, dy]), self.present.copy())

    def flipped_lr(self, width: int) -> "Keypoints":
        """Mirror about the vertical axis and swap left/right joint labels."""
        coords = self.coords.copy()
        coords[:, 0] = width - 1 - coords[:, 0]
        out_c = coords.copy()
        out_p = self.present.copy()
        for a, b in LR_SWAP.items():
            out_c[b] = coords[a]
            out_p[b] = self.present[a]
        return Keypoints(out_c, out_p)

    def to_dict(self) -> dict:
        return {
            "schema_version": KEYPOINT_SCHEMA_VERSION,
            "joints": [
                {
                    "name": JOINT_NAMES[j],
                    "x": float(self.coords[j, 0]),
                    "y": float(self.coords[j, 1]),
                    "present": bool(self.present[j]),
                }
                for j in range(NUM_JOINTS)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Keypoints":
        joints = doc.get("joints")
        if joints is None or len(joints) != NUM_JOINTS:
            n = None if joints is None else len(joints)
            raise ValueError(f"expected {NUM_JOINTS} joints, got {n}")
        coords = np.zeros((NUM_JOINTS, 2))
        present = np.zeros(NUM_JOINTS, dtype=bool)
        for j, rec in enumerate(joints):
            if rec.get("name") != JOINT_NAMES[j]:
                raise ValueError(f"joint {j} named {rec.get('name')!r}, expected {JOINT_NAMES[j]!r}")
            coords[j] = (rec["x"], rec["y"])
            present[j] = rec["present"]
        return cls(coords, present)


@dataclass(frozen=True)
class Part:
    name: str
    joints: tuple


@dataclass(frozen=True)
class PartScheme:
    parts: tuple

    def __len__(self):
        return len(self.parts)


def part_scheme() -> PartScheme:
    """The canonical 10-part body decomposition.

    Parts 1-9 are joint pairs (head, upper/lower arms, upper/lower legs);
    the torso covers both shoulders and both hips.
    """
    J = JointId
    return PartScheme(
        parts=(
            Part("head", (J.HEAD, J.NECK)),
            Part("l_upper_arm", (J.L_SHOULDER, J.L_ELBOW)),
            Part("r_upper_arm", (J.R_SHOULDER, J.R_ELBOW)),
            Part("l_lower_arm", (J.L_ELBOW, J.L_WRIST)),
            Part("r_lower_arm", (J.R_ELBOW, J.R_WRIST)),
            Part("l_upper_leg", (J.L_HIP, J.L_KNEE)),
            Part("r_upper_leg", (J.R_HIP, J.R_KNEE)),
            Part("l_lower_leg", (J.L_KNEE, J.L_ANKLE)),
            Part("r_lower_leg", (J.R_KNEE, J.R_ANKLE)),
            Part("torso", (J.L_SHOULDER, J.R_SHOULDER, J.L_HIP, J.R_HIP)),
        )
    )


def default_sigma_heat(resolution: int) -> float:
    return SIGMA_HEAT_256 * resolution / 256.0


def render_heatmaps(kp: Keypoints, H: int, W: int, sigma_heat: float) -> np.ndarray:
    """Render per-joint Gaussian bump channels, shape (H, W, 14).

    Channel j peaks at 1.0 at the joint location. Absent joints and joints
    whose center lies outside [0, W) x [0, H) give all-zero channels.
    """
    if H <= 0 or W <= 0 or sigma_heat <= 0:
        raise ValueError("H, W and sigma_heat must be positive")
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    out = np.zeros((H, W, NUM_JOINTS), dtype=np.float64)
    for j in range(NUM_JOINTS):
        if not kp.present[j]:
            continue
        x0, y0 = kp.coords[j]
        if not (0 <= x0 < W and 0 <= y0 < H):
            continue
        d2 = (xs - x0) ** 2 + (ys - y0) ** 2
        out[:, :, j] = np.exp(-d2 / (2.0 * sigma_heat**2))
    return out


def _part_gaussian(coords: np.ndarray, H: int, W: int) -> np.ndarray:
    """Anisotropic Gaussian over one part, peak 1 at the joint centroid.

    Two-joint parts: major axis along the joint-to-joint direction with
    sigma_along = max(len/4, 4) and sigma_perp = max(len/8, 4). Four-joint
    parts (torso): 1.5x the empirical joint covariance, eigenvalues floored
    at 4^2 px^2.
    """
    center = coords.mean(axis=0)
    if len(coords) == 2:
        d = coords[1] - coords[0]
        length = float(np.hypot(*d))
        if length < 1e-9:
            u = np.array([1.0, 0.0])
        else:
            u = d / length
        v = np.array([-u[1], u[0]])
        sa = max(length / 4.0, 4.0)
        sp = max(length / 8.0, 4.0)
        cov = sa**2 * np.outer(u, u) + sp**2 * np.outer(v, v)
    else:
        cov = 1.5 * np.cov(coords.T, bias=True)
        w, V = np.linalg.eigh(cov)
        w = np.maximum(w, 16.0)
        cov = V @ np.diag(w) @ V.T
    prec = np.linalg.inv(cov)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dx = xs - center[0]
    dy = ys - center[1]
    q = prec[0, 0] * dx * dx + 2 * prec[0, 1] * dx * dy + prec[1, 1] * dy * dy
    return np.exp(-0.5 * q)


def prior_masks(kp: Keypoints, scheme: PartScheme, H: int, W: int) -> np.ndarray:
    """Coarse Gaussian layout of the body parts, shape (H, W, L+1).

    Channel l covers part l; the last channel is the background complement
    1 - max over part channels. All entries are floored at PRIOR_EPS so the
    log taken downstream stays finite.
    """
    out = np.zeros((H, W, len(scheme) + 1), dtype=np.float64)
    for l, part in enumerate(scheme.parts):
        idx = [int(j) for j in part.joints]
        if not kp.present[idx].all():
            missing = [JOINT_NAMES[j] for j in idx if not kp.present[j]]
            raise ValueError(f"part {part.name!r} missing joints: {missing}")
        out[:, :, l] = _part_gaussian(kp.coords[idx], H, W)
    out[:, :, -1] = 1.0 - out[:, :, :-1].max(axis=2)
    return np.maximum(out, PRIOR_EPS)
