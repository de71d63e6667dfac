"""Classical rotation estimation from feature matches, plus the 6D
regression baseline.

Fitted rotations align bearings of image 1 onto bearings of image 2
(d2 = R d1).  With world-to-camera extrinsics W_i, camera-frame bearings
of a shared world point satisfy d2 = W2 W1^T d1, so the alignment
rotation is exactly the relative rotation the rest of the package works
with; no frame conversion is needed before computing geodesic errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import ndimage

from .model import ModelConfig, ResUNetEncoder, prepare_image
from .panorama import CameraSpec, lift_pixel

MIN_INLIERS = 10


class DegenerateBearings(ValueError):
    """Raised when the two bearings of a minimal sample are (near) parallel."""


@dataclass(frozen=True)
class BearingMatch:
    """Unit bearing directions of one correspondence, one per camera frame."""

    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        for d in (self.d1, self.d2):
            if abs(np.linalg.norm(d) - 1.0) > 1e-9:
                raise ValueError("bearings must be unit vectors")


@dataclass
class FitResult:
    rotation: Optional[np.ndarray]
    inlier_count: int
    success: bool


def _procrustes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation R minimizing sum ||R a_i - b_i||^2 (Kabsch with det fix)."""
    m = b.T @ a
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def two_point_rotation(m1: BearingMatch, m2: BearingMatch) -> np.ndarray:
    """Exact rotation aligning two bearing pairs (d1 -> d2).

    The cross product of the two bearings is added as a third virtual
    correspondence, which makes the Procrustes system full rank.
    """
    for pair in ((m1.d1, m2.d1), (m1.d2, m2.d2)):
        cross = np.cross(pair[0], pair[1])
        if np.linalg.norm(cross) < 1e-6:
            raise DegenerateBearings("bearing pair is parallel within 1e-6 rad")
    c1 = np.cross(m1.d1, m2.d1)
    c2 = np.cross(m1.d2, m2.d2)
    a = np.stack([m1.d1, m2.d1, c1 / np.linalg.norm(c1)])
    b = np.stack([m1.d2, m2.d2, c2 / np.linalg.norm(c2)])
    return _procrustes(a, b)


def _angular_residuals_deg(r: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    cos = np.clip(np.sum((d1 @ r.T) * d2, axis=1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def ransac_rotation(matches: list[BearingMatch], iters: int = 1000,
                    inlier_thresh_deg: float = 1.0, rng_seed: int = 0,
                    min_inliers: int = MIN_INLIERS) -> FitResult:
    """RANSAC over two-point rotation hypotheses, refit on the inlier set.

    The fit only counts as successful with at least ``min_inliers`` inliers.
    """
    if len(matches) < 2:
        raise ValueError("need at least two matches")
    d1 = np.stack([m.d1 for m in matches])
    d2 = np.stack([m.d2 for m in matches])
    rng = np.random.default_rng(rng_seed)
    best_mask = None
    best_count = -1
    for _ in range(iters):
        i, j = rng.choice(len(matches), size=2, replace=False)
        try:
            hyp = two_point_rotation(matches[int(i)], matches[int(j)])
        except DegenerateBearings:
            continue
        mask = _angular_residuals_deg(hyp, d1, d2) < inlier_thresh_deg
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 2:
        return FitResult(rotation=None, inlier_count=max(best_count, 0), success=False)
    refit = _procrustes(d1[best_mask], d2[best_mask])
    mask = _angular_residuals_deg(refit, d1, d2) < inlier_thresh_deg
    count = int(mask.sum())
    if count >= 2:
        refit = _procrustes(d1[mask], d2[mask])
    else:
        count = best_count
    return FitResult(rotation=refit, inlier_count=count, success=count >= min_inliers)


# ---------------------------------------------------------------------------
# Essential matrix path (pairs with translation)


def _eight_point(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Essential matrix from >= 8 bearing pairs, projected to the essential
    manifold.  Convention: d2^T E d1 = 0 with E = [t]x R."""
    a = (d2[:, :, None] * d1[:, None, :]).reshape(len(d1), 9)
    _, _, vt = np.linalg.svd(a)
    e = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(e)
    sigma = (s[0] + s[1]) / 2.0
    return u @ np.diag([sigma, sigma, 0.0]) @ vt


def _decompose_essential(e: np.ndarray):
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    t = u[:, 2]
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def _cheirality_votes(r: np.ndarray, t: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> int:
    votes = 0
    rd1 = d1 @ r.T
    for k in range(len(d1)):
        a = np.stack([rd1[k], -d2[k]], axis=1)
        lam, *_ = np.linalg.lstsq(a, -t, rcond=None)
        if lam[0] > 0 and lam[1] > 0:
            votes += 1
    return votes


def _epipolar_residuals_deg(e: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    # Angle between d2 and the epipolar plane of d1.
    n = d1 @ e.T  # plane normals in camera 2
    norms = np.linalg.norm(n, axis=1)
    norms = np.where(norms < 1e-12, 1.0, norms)
    sin = np.clip(np.abs(np.sum(n * d2, axis=1)) / norms, -1.0, 1.0)
    return np.degrees(np.arcsin(sin))


def essential_rotation(matches: list[BearingMatch], iters: int = 500,
                       inlier_thresh_deg: float = 1.0, rng_seed: int = 0,
                       min_inliers: int = MIN_INLIERS) -> FitResult:
    """Rotation from an essential matrix fit under RANSAC.

    Decomposes the best essential matrix into its four (R, t) candidates and
    keeps the rotation with the winning cheirality vote.  Subject to the
    same minimum-inlier success rule as the pure-rotation fit.
    """
    if len(matches) < 5:
        return FitResult(rotation=None, inlier_count=0, success=False)
    d1 = np.stack([m.d1 for m in matches])
    d2 = np.stack([m.d2 for m in matches])
    rng = np.random.default_rng(rng_seed)
    sample_size = min(8, len(matches))
    best_mask = None
    best_count = -1
    for _ in range(iters):
        idx = rng.choice(len(matches), size=sample_size, replace=False)
        try:
            e = _eight_point(d1[idx], d2[idx])
        except np.linalg.LinAlgError:
            continue
        mask = _epipolar_residuals_deg(e, d1, d2) < inlier_thresh_deg
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 5:
        return FitResult(rotation=None, inlier_count=max(best_count, 0), success=False)
    e = _eight_point(d1[best_mask], d2[best_mask])
    mask = _epipolar_residuals_deg(e, d1, d2) < inlier_thresh_deg
    if int(mask.sum()) >= 5:
        best_mask = mask
        e = _eight_point(d1[best_mask], d2[best_mask])
    candidates = _decompose_essential(e)
    votes = [_cheirality_votes(r, t, d1[best_mask], d2[best_mask]) for r, t in candidates]
    r = candidates[int(np.argmax(votes))][0]
    count = int(best_mask.sum())
    return FitResult(rotation=r, inlier_count=count, success=count >= min_inliers)


# ---------------------------------------------------------------------------
# Feature detection and matching (pluggable)


def _shi_tomasi_keypoints(gray: np.ndarray, max_points: int, margin: int):
    ix = ndimage.sobel(gray, axis=1, mode="nearest")
    iy = ndimage.sobel(gray, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, 2.0)
    syy = ndimage.gaussian_filter(iy * iy, 2.0)
    sxy = ndimage.gaussian_filter(ix * iy, 2.0)
    tr = (sxx + syy) / 2.0
    det = np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy ** 2)
    response = tr - det  # smaller structure-tensor eigenvalue
    local_max = response == ndimage.maximum_filter(response, size=7)
    mask = local_max & (response > 0.01 * response.max())
    mask[:margin] = mask[-margin:] = False
    mask[:, :margin] = mask[:, -margin:] = False
    vs, us = np.nonzero(mask)
    if len(us) > max_points:
        order = np.argsort(response[vs, us])[::-1][:max_points]
        us, vs = us[order], vs[order]
    return np.stack([us, vs], axis=1).astype(np.float64)


def builtin_detector(img: np.ndarray, max_points: int = 400):
    """Corner detector plus normalized-patch descriptors.

    Returns (keypoints (N, 2) as (u, v), descriptors (N, D)).
    """
    gray = img.astype(np.float64).mean(axis=2) / 255.0
    patch_half = 8
    kps = _shi_tomasi_keypoints(gray, max_points, margin=patch_half + 2)
    smooth = ndimage.gaussian_filter(gray, 1.5)
    descs = []
    for u, v in kps.astype(int):
        patch = smooth[v - patch_half:v + patch_half:2, u - patch_half:u + patch_half:2]
        vec = patch.reshape(-1)
        vec = vec - vec.mean()
        norm = np.linalg.norm(vec)
        descs.append(vec / norm if norm > 1e-9 else vec)
    if not descs:
        return np.zeros((0, 2)), np.zeros((0, patch_half * patch_half))
    return kps, np.stack(descs)


def sift_detector(img: np.ndarray, max_points: int = 400):
    """OpenCV SIFT, available when cv2 is installed."""
    import cv2

    gray = (img.astype(np.float64).mean(axis=2)).astype(np.uint8)
    sift = cv2.SIFT_create(nfeatures=max_points)
    kps, descs = sift.detectAndCompute(gray, None)
    if not kps:
        return np.zeros((0, 2)), np.zeros((0, 128))
    pts = np.array([k.pt for k in kps], dtype=np.float64)
    return pts, descs.astype(np.float64)


DETECTORS: dict[str, Callable] = {"builtin": builtin_detector, "sift": sift_detector}


def _match_descriptors(desc1: np.ndarray, desc2: np.ndarray, ratio: float = 0.85):
    if len(desc1) == 0 or len(desc2) == 0:
        return []
    d2 = (desc1 ** 2).sum(1)[:, None] + (desc2 ** 2).sum(1)[None] - 2.0 * desc1 @ desc2.T
    nn2 = np.argsort(d2, axis=1)[:, :2]
    pairs = []
    back = np.argmin(d2, axis=0)
    for i in range(len(desc1)):
        j, j2 = nn2[i]
        # Lowe ratio plus mutual-nearest check.
        if d2[i, j] < ratio ** 2 * max(d2[i, j2], 1e-12) and back[j] == i:
            pairs.append((i, int(j)))
    return pairs


def detect_and_match(img1: np.ndarray, img2: np.ndarray, cam: CameraSpec,
                     detector: Callable | str = "builtin") -> list[BearingMatch]:
    """Detect, describe, match, and lift pixel matches to unit bearings.

    Both images must share the camera intrinsics (fov / size) given by
    ``cam``; the inverse pinhole map turns matched pixels into camera-frame
    bearings.
    """
    if isinstance(detector, str):
        detector = DETECTORS[detector]
    kp1, desc1 = detector(img1)
    kp2, desc2 = detector(img2)
    pairs = _match_descriptors(desc1, desc2)
    matches = []
    for i, j in pairs:
        b1 = lift_pixel(cam, kp1[i, 0], kp1[i, 1])
        b2 = lift_pixel(cam, kp2[j, 0], kp2[j, 1])
        matches.append(BearingMatch(d1=np.asarray(b1, dtype=float).reshape(3),
                                    d2=np.asarray(b2, dtype=float).reshape(3)))
    return matches


# ---------------------------------------------------------------------------
# 6D-representation regression baseline


def rotation_from_6d(v: np.ndarray) -> np.ndarray:
    """Orthonormalize a 6-vector (two stacked 3-vectors) into a rotation.

    The two vectors become the first two columns after normalize, project,
    normalize; the third column is their cross product.
    """
    v = np.asarray(v, dtype=float).reshape(6)
    a = v[:3]
    na = np.linalg.norm(a)
    a = a / na if na > 1e-8 else np.array([1.0, 0.0, 0.0])
    b = v[3:] - (a @ v[3:]) * a
    nb = np.linalg.norm(b)
    if nb > 1e-8:
        b = b / nb
    else:
        helper = np.array([0.0, 1.0, 0.0]) if abs(a[1]) < 0.9 else np.array([0.0, 0.0, 1.0])
        b = np.cross(a, helper)
        b /= np.linalg.norm(b)
    return np.stack([a, b, np.cross(a, b)], axis=1)


def rotation_from_6d_torch(v: torch.Tensor) -> torch.Tensor:
    """Batched differentiable 6D -> rotation map, (B, 6) -> (B, 3, 3)."""
    a = F.normalize(v[:, :3], dim=1, eps=1e-8)
    b = v[:, 3:] - (a * v[:, 3:]).sum(dim=1, keepdim=True) * a
    b = F.normalize(b, dim=1, eps=1e-8)
    c = torch.cross(a, b, dim=1)
    return torch.stack([a, b, c], dim=2)


class Reg6DRegressor(nn.Module):
    """Shared encoder, concatenated features, regression to a 6D rotation."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ResUNetEncoder(cfg)
        k = cfg.feature_channels
        self.head = nn.Sequential(
            nn.Conv2d(2 * k, 64, 3, padding=1), nn.BatchNorm2d(64), nn.ReLU(),
            nn.AdaptiveAvgPool2d(4), nn.Flatten(),
            nn.Linear(64 * 16, 256), nn.ReLU(), nn.Linear(256, 6))

    def forward(self, img1: torch.Tensor, img2: torch.Tensor) -> torch.Tensor:
        f = torch.cat([self.encoder(img1), self.encoder(img2)], dim=1)
        return rotation_from_6d_torch(self.head(f))


def build_reg6d(cfg: ModelConfig, seed: Optional[int] = None) -> Reg6DRegressor:
    if seed is not None:
        torch.manual_seed(seed)
    return Reg6DRegressor(cfg)


def reg6d_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Elementwise L2 between predicted and ground-truth rotation matrices."""
    return torch.mean(torch.sum((pred - gt) ** 2, dim=(-2, -1)))


def reg6d_predict(predictor, img1: np.ndarray, img2: np.ndarray) -> np.ndarray:
    """Single-pair rotation prediction from a Reg6D model."""
    model = predictor.model if hasattr(predictor, "model") else predictor
    norm_mean = getattr(predictor, "norm_mean", (0.5, 0.5, 0.5))
    norm_std = getattr(predictor, "norm_std", (0.25, 0.25, 0.25))
    size = model.cfg.input_size
    x1 = prepare_image(img1, size, norm_mean, norm_std)[None]
    x2 = prepare_image(img2, size, norm_mean, norm_std)[None]
    model.eval()
    with torch.no_grad():
        return model(x1, x2)[0].numpy().astype(float)


class Reg6DPredictor:
    """Evaluation-protocol wrapper for the regression baseline.

    Regressors expose no bin distributions, so top-2 statistics are
    undefined for them.
    """

    def __init__(self, model: Reg6DRegressor, norm_mean=(0.5, 0.5, 0.5),
                 norm_std=(0.25, 0.25, 0.25)):
        self.model = model
        self.norm_mean = tuple(float(v) for v in norm_mean)
        self.norm_std = tuple(float(v) for v in norm_std)

    def predict_pair(self, sample, img1: np.ndarray, img2: np.ndarray):
        from .model import Prediction

        rot = reg6d_predict(self, img1, img2)
        return Prediction(logits=np.zeros((3, 360)), distributions=None,
                          decoded=None, rotation=rot)
