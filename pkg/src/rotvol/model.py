"""Siamese encoder, correlation-volume decoders, and rotation decoding.

The estimator encodes both images with one shared-weight residual U-Net
(7x7 stride-2 stem, three pre-activation residual blocks each halving the
resolution, two upsampling convolutions with additive skip connections,
and a projection to the feature channels), correlates the two feature maps
into a dense 4D volume, and feeds the flattened volume to three
structurally identical but independently weighted decoders.  Each decoder
emits logits over 360 one-degree bins for one angle of the relative pose:
pitch of image 1, pitch of image 2, relative yaw.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from . import rotations
from .correlation import correlate_batch, flatten_for_decoder
from .rotations import DEFAULT_BINS, RelPoseParam, bin_to_angle, relative_from_params

CHECKPOINT_VERSION = 1

# Per-channel statistics applied after scaling pixels to [0, 1]; replaced by
# dataset statistics once a training run has measured them.
DEFAULT_NORM_MEAN = (0.5, 0.5, 0.5)
DEFAULT_NORM_STD = (0.25, 0.25, 0.25)


class CheckpointVersionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 128
    stem_channels: int = 64
    block_channels: tuple[int, int, int] = (64, 128, 256)
    up_channels: tuple[int, int] = (128, 64)
    feature_channels: int = 32
    decoder_channels: tuple[int, int] = (256, 64)
    fc_hidden: int = 512
    n_bins: int = 360
    normalize_features: bool = False

    def __post_init__(self):
        if self.input_size < 16 or self.input_size % 16 != 0:
            raise ValueError("input_size must be a positive multiple of 16")
        channels = (self.stem_channels, *self.block_channels, *self.up_channels,
                    self.feature_channels, *self.decoder_channels, self.fc_hidden)
        if any(c < 1 for c in channels):
            raise ValueError("all channel widths must be >= 1")
        if self.n_bins != DEFAULT_BINS.n_bins:
            raise ValueError(f"n_bins must be {DEFAULT_BINS.n_bins}")
        if self.up_channels[1] != self.block_channels[0]:
            raise ValueError("second up-convolution width must match the first block "
                             "for the additive skip connection")
        if self.up_channels[0] != self.block_channels[1]:
            raise ValueError("first up-convolution width must match the second block "
                             "for the additive skip connection")

    @property
    def feature_size(self) -> int:
        return self.input_size // 4

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("block_channels", "up_channels", "decoder_channels"):
            d[key] = tuple(d[key])
        return ModelConfig(**d)


PAPER_CONFIG = ModelConfig()
TOY_CONFIG = ModelConfig(input_size=64, stem_channels=16, block_channels=(16, 32, 64),
                         up_channels=(32, 16), feature_channels=8,
                         decoder_channels=(64, 32), fc_hidden=128)
GRADCHECK_CONFIG = ModelConfig(input_size=32, stem_channels=8, block_channels=(8, 16, 16),
                               up_channels=(16, 8), feature_channels=4,
                               decoder_channels=(32, 16), fc_hidden=64)


class PreActBlock(nn.Module):
    """Pre-activation residual block (norm-relu-conv twice, projected shortcut)."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.conv1(F.relu(self.bn1(x)))
        out = self.conv2(F.relu(self.bn2(out)))
        return out + self.shortcut(x)


class ResUNetEncoder(nn.Module):
    """Downsample to 1/16, upsample back to 1/4 with additive skips."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c0 = cfg.stem_channels
        c1, c2, c3 = cfg.block_channels
        u1, u2 = cfg.up_channels
        self.stem = nn.Conv2d(3, c0, 7, stride=2, padding=3, bias=False)
        self.block1 = PreActBlock(c0, c1, stride=2)
        self.block2 = PreActBlock(c1, c2, stride=2)
        self.block3 = PreActBlock(c2, c3, stride=2)
        self.up1 = nn.Conv2d(c3, u1, 3, padding=1, bias=False)
        self.up1_bn = nn.BatchNorm2d(u1)
        self.up2 = nn.Conv2d(u1, u2, 3, padding=1, bias=False)
        self.up2_bn = nn.BatchNorm2d(u2)
        self.proj = nn.Conv2d(u2, cfg.feature_channels, 3, padding=1)

    def forward(self, x):
        x = self.stem(x)              # 1/2
        s1 = self.block1(x)           # 1/4
        s2 = self.block2(s1)          # 1/8
        x = self.block3(s2)           # 1/16
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.relu(self.up1_bn(self.up1(x))) + s2     # 1/8
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.relu(self.up2_bn(self.up2(x))) + s1     # 1/4
        return self.proj(x)


class AngleDecoder(nn.Module):
    """Maps a flattened correlation volume to logits over the angle bins."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        in_ch = cfg.feature_size * cfg.feature_size
        d1, d2 = cfg.decoder_channels
        self.block1 = PreActBlock(in_ch, d1, stride=2)
        self.block2 = PreActBlock(d1, d2, stride=2)
        spatial = cfg.feature_size // 4
        self.fc1 = nn.Linear(d2 * spatial * spatial, cfg.fc_hidden)
        self.fc2 = nn.Linear(cfg.fc_hidden, cfg.n_bins)

    def forward(self, vol):
        x = self.block2(self.block1(vol))
        x = x.flatten(1)
        return self.fc2(F.relu(self.fc1(x)))


HEAD_NAMES = ("beta1", "beta2", "delta_gamma")


class RotationEstimator(nn.Module):
    """Full pipeline: shared encoder, correlation volume, three angle heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ResUNetEncoder(cfg)
        self.decoders = nn.ModuleList(AngleDecoder(cfg) for _ in HEAD_NAMES)

    def forward(self, img1: torch.Tensor, img2: torch.Tensor) -> torch.Tensor:
        if img1.shape != img2.shape or img1.shape[-1] != self.cfg.input_size:
            raise ValueError(f"expected two (B, 3, {self.cfg.input_size}, "
                             f"{self.cfg.input_size}) batches")
        f1 = self.encoder(img1)
        f2 = self.encoder(img2)
        vol = correlate_batch(f1, f2, normalize=self.cfg.normalize_features)
        flat = flatten_for_decoder(vol)
        return torch.stack([dec(flat) for dec in self.decoders], dim=1)  # (B, 3, n_bins)


def build_model(cfg: ModelConfig, seed: Optional[int] = None) -> RotationEstimator:
    if seed is not None:
        torch.manual_seed(seed)
    return RotationEstimator(cfg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def loss_sum_ce(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Sum over the three heads of cross-entropy against one-hot bin targets.

    logits: (B, 3, n_bins); gt: (B, 3) integer bin indices.  Averaged over
    the batch, summed over heads.
    """
    return sum(F.cross_entropy(logits[:, k, :], gt[:, k]) for k in range(logits.shape[1]))


def target_bins(gt: RelPoseParam) -> np.ndarray:
    return np.array([rotations.angle_to_bin(gt.beta1),
                     rotations.angle_to_bin(gt.beta2),
                     rotations.angle_to_bin(gt.delta_gamma)], dtype=np.int64)


@dataclass
class Prediction:
    logits: np.ndarray                      # (3, 360)
    distributions: Optional[np.ndarray]     # (3, 360) softmax rows, None for regressors
    decoded: Optional[RelPoseParam]         # None for full-matrix regressors
    rotation: np.ndarray                    # 3x3


def decode_logits(logits: np.ndarray, mode: str = "argmax") -> Prediction:
    """Turn raw head logits into angles and the composed rotation matrix.

    ``argmax`` picks each head's most likely bin center; ``expectation``
    takes the circular mean of the bin distribution instead.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(3, DEFAULT_BINS.n_bins)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    if mode == "argmax":
        angles = [bin_to_angle(int(np.argmax(p))) for p in probs]
    elif mode == "expectation":
        centers = np.radians([bin_to_angle(i) for i in range(DEFAULT_BINS.n_bins)])
        angles = [float(np.degrees(np.arctan2((p * np.sin(centers)).sum(),
                                              (p * np.cos(centers)).sum())))
                  for p in probs]
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    decoded = RelPoseParam(angles[0], angles[1], angles[2])
    return Prediction(logits=logits, distributions=probs, decoded=decoded,
                      rotation=relative_from_params(decoded))


def predict_rotation(pred: Prediction) -> np.ndarray:
    return relative_from_params(pred.decoded)


# ---------------------------------------------------------------------------
# Image preparation and the inference-time wrapper


def prepare_image(img: np.ndarray, input_size: int, norm_mean, norm_std) -> torch.Tensor:
    """uint8 RGB (H, W, 3) -> normalized float tensor (3, S, S).

    Crops are stored at their render resolution and downscaled bilinearly to
    the network input size here.
    """
    if img.shape[0] != input_size or img.shape[1] != input_size:
        pil = Image.fromarray(img).resize((input_size, input_size), Image.BILINEAR)
        img = np.asarray(pil)
    x = img.astype(np.float32) / 255.0
    x = (x - np.asarray(norm_mean, dtype=np.float32)) / np.asarray(norm_std, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))


class Predictor:
    """Inference wrapper pairing a model with its normalization statistics."""

    def __init__(self, model: RotationEstimator, norm_mean=DEFAULT_NORM_MEAN,
                 norm_std=DEFAULT_NORM_STD, decode_mode: str = "argmax"):
        self.model = model
        self.norm_mean = tuple(float(v) for v in norm_mean)
        self.norm_std = tuple(float(v) for v in norm_std)
        self.decode_mode = decode_mode

    def predict(self, img1: np.ndarray, img2: np.ndarray) -> Prediction:
        size = self.model.cfg.input_size
        x1 = prepare_image(img1, size, self.norm_mean, self.norm_std)[None]
        x2 = prepare_image(img2, size, self.norm_mean, self.norm_std)[None]
        self.model.eval()
        with torch.no_grad():
            logits = self.model(x1, x2)[0]
        return decode_logits(logits.numpy(), mode=self.decode_mode)

    def predict_pair(self, sample, img1: np.ndarray, img2: np.ndarray) -> Prediction:
        # The sample is part of the evaluation protocol so oracles can use it;
        # the learned model only looks at pixels.
        return self.predict(img1, img2)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: Path, model: RotationEstimator, optimizer=None, iteration: int = 0,
                    seed: int = 0, norm_mean=DEFAULT_NORM_MEAN, norm_std=DEFAULT_NORM_STD,
                    train_config: Optional[dict] = None, rng_state: Optional[dict] = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_class": type(model).__name__,
        "model_config": model.cfg.to_json(),
        "model_state": model.state_dict(),
        "optimizer_state": None if optimizer is None else optimizer.state_dict(),
        "iteration": iteration,
        "seed": seed,
        "norm_mean": list(norm_mean),
        "norm_std": list(norm_std),
        "train_config": train_config,
        "rng_state": rng_state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: Path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format version {version}, expected {CHECKPOINT_VERSION}")
    return payload


def model_from_checkpoint(payload: dict):
    cls_name = payload.get("model_class", "RotationEstimator")
    cfg = ModelConfig.from_json(payload["model_config"])
    if cls_name == "RotationEstimator":
        model = RotationEstimator(cfg)
    elif cls_name == "Reg6DRegressor":
        from .baselines import Reg6DRegressor
        model = Reg6DRegressor(cfg)
    else:
        raise CheckpointVersionError(f"unknown model class {cls_name!r} in checkpoint")
    model.load_state_dict(payload["model_state"])
    return model


def predictor_from_checkpoint(path: Path) -> Predictor:
    payload = load_checkpoint(path)
    model = model_from_checkpoint(payload)
    return Predictor(model, norm_mean=payload["norm_mean"], norm_std=payload["norm_std"])
