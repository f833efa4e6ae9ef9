"""Similarity transforms fit from joint correspondences, and the
differentiable bilinear warp used to move body-part layers.

Part transforms are computed from the poses, never learned; only the warp's
gradient w.r.t. the input image is needed (and provided analytically).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .pose import Keypoints, PartScheme

# Source points closer together than this are treated as coincident.
_DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class SimilarityTransform:
    """4-DOF map (x, y) -> (a*x - b*y + tx, b*x + a*y + ty).

    Covers rotation, uniform scale and translation: scale = hypot(a, b),
    rotation = atan2(b, a).
    """

    a: float
    b: float
    tx: float
    ty: float

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, 0.0, 0.0, 0.0)

    @property
    def scale(self) -> float:
        return math.hypot(self.a, self.b)

    @property
    def rotation(self) -> float:
        return math.atan2(self.b, self.a)

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a, -self.b, self.tx], [self.b, self.a, self.ty]])

    def apply(self, points) -> np.ndarray:
        """Map an (N, 2) array of points."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y = p[:, 0], p[:, 1]
        return np.stack([self.a * x - self.b * y + self.tx, self.b * x + self.a * y + self.ty], axis=1)

    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, self.tx, self.ty])


def fit_similarity(src_points, dst_points) -> SimilarityTransform:
    """Least-squares similarity mapping src points onto dst points.

    Exact for n = 2 distinct points. If all source points coincide, the
    rotation/scale is unobservable and a pure translation between centroids
    is returned.
    """
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("point lists must have equal length")
    n = src.shape[0]
    if n < 2:
        raise ValueError("need at least 2 point correspondences")
    if np.max(np.abs(src - src.mean(axis=0))) < _DEGENERATE_TOL:
        t = dst.mean(axis=0) - src.mean(axis=0)
        return SimilarityTransform(1.0, 0.0, float(t[0]), float(t[1]))
    # rows: [x, -y, 1, 0] -> x', [y, x, 0, 1] -> y'
    A = np.zeros((2 * n, 4))
    A[0::2, 0] = src[:, 0]
    A[0::2, 1] = -src[:, 1]
    A[0::2, 2] = 1.0
    A[1::2, 0] = src[:, 1]
    A[1::2, 1] = src[:, 0]
    A[1::2, 3] = 1.0
    rhs = dst.reshape(-1)
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return SimilarityTransform(*(float(v) for v in sol))


def invert(T: SimilarityTransform) -> SimilarityTransform:
    s2 = T.a**2 + T.b**2
    if s2 == 0.0:
        raise ValueError("degenerate transform with zero scale")
    ia, ib = T.a / s2, -T.b / s2
    return SimilarityTransform(ia, ib, -(ia * T.tx - ib * T.ty), -(ib * T.tx + ia * T.ty))


def compose(T2: SimilarityTransform, T1: SimilarityTransform) -> SimilarityTransform:
    """T2 after T1: returns the transform mapping p -> T2(T1(p))."""
    a = T2.a * T1.a - T2.b * T1.b
    b = T2.b * T1.a + T2.a * T1.b
    tx = T2.a * T1.tx - T2.b * T1.ty + T2.tx
    ty = T2.b * T1.tx + T2.a * T1.ty + T2.ty
    return SimilarityTransform(a, b, tx, ty)


def compute_part_transforms(p_s: Keypoints, p_t: Keypoints, scheme: PartScheme):
    """Backward sampling transforms, one per part.

    Each transform maps target-frame coordinates of a part's joints to the
    source frame, so that warping samples the source at T(x, y).
    """
    out = []
    for part in scheme.parts:
        idx = [int(j) for j in part.joints]
        for kp in (p_s, p_t):
            if not kp.present[idx].all():
                raise ValueError(f"part {part.name!r} has missing joints")
        out.append(fit_similarity(p_t.coords[idx], p_s.coords[idx]))
    return out


def _sample_grid(T: SimilarityTransform, H: int, W: int, dtype, device):
    ys, xs = torch.meshgrid(
        torch.arange(H, dtype=dtype, device=device),
        torch.arange(W, dtype=dtype, device=device),
        indexing="ij",
    )
    xp = T.a * xs - T.b * ys + T.tx
    yp = T.b * xs + T.a * ys + T.ty
    return xp, yp


def _neighbor_terms(xp, yp, H: int, W: int):
    x0 = torch.floor(xp)
    y0 = torch.floor(yp)
    wx = xp - x0
    wy = yp - y0
    x0 = x0.long()
    y0 = y0.long()
    for ix, iy, w in (
        (x0, y0, (1 - wx) * (1 - wy)),
        (x0 + 1, y0, wx * (1 - wy)),
        (x0, y0 + 1, (1 - wx) * wy),
        (x0 + 1, y0 + 1, wx * wy),
    ):
        valid = (ix >= 0) & (ix < W) & (iy >= 0) & (iy < H)
        yield ix.clamp(0, W - 1), iy.clamp(0, H - 1), w * valid.to(w.dtype)


def warp_bilinear(layer: torch.Tensor, T: SimilarityTransform) -> torch.Tensor:
    """Bilinear backward warp: out(x, y) samples `layer` at T(x, y).

    `layer` has shape (..., H, W); samples falling outside the image
    contribute zero. Built from differentiable tensor ops, so autograd can
    flow into the layer (not into T).
    """
    H, W = layer.shape[-2:]
    xp, yp = _sample_grid(T, H, W, layer.dtype, layer.device)
    out = torch.zeros_like(layer)
    for ix, iy, w in _neighbor_terms(xp, yp, H, W):
        out = out + w * layer[..., iy, ix]
    return out


def warp_bilinear_grad(upstream: torch.Tensor, T: SimilarityTransform) -> torch.Tensor:
    """Adjoint of the warp: gradient w.r.t. the input layer.

    Scatters each upstream value back onto the four source neighbors it was
    read from, with the same bilinear weights. Gradients w.r.t. T are not
    computed (transforms are pose-derived, not learned).
    """
    H, W = upstream.shape[-2:]
    with torch.no_grad():
        xp, yp = _sample_grid(T, H, W, upstream.dtype, upstream.device)
        grad = torch.zeros_like(upstream)
        flat = grad.reshape(-1, H * W)
        up = upstream.reshape(-1, H * W)
        for ix, iy, w in _neighbor_terms(xp, yp, H, W):
            target = (iy * W + ix).reshape(-1)
            contrib = (w.reshape(1, -1) * up).reshape(flat.shape[0], -1)
            flat.index_add_(1, target, contrib)
    return grad


def warp_oracle(layer: torch.Tensor, T: SimilarityTransform) -> torch.Tensor:
    """Brute-force per-pixel reference warp; shares no code with warp_bilinear."""
    arr = layer.detach().cpu().numpy()
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    C, H, W = arr.shape
    out = np.zeros_like(arr)
    for y in range(H):
        for x in range(W):
            xs = T.a * x - T.b * y + T.tx
            ys = T.b * x + T.a * y + T.ty
            fx, fy = math.floor(xs), math.floor(ys)
            acc = np.zeros(C, dtype=arr.dtype)
            for qx in (fx, fx + 1):
                for qy in (fy, fy + 1):
                    if 0 <= qx < W and 0 <= qy < H:
                        wgt = (1.0 - abs(xs - qx)) * (1.0 - abs(ys - qy))
                        acc += wgt * arr[:, qy, qx]
            out[:, y, x] = acc
    if squeeze:
        out = out[0]
    return torch.from_numpy(out).to(layer.device)
