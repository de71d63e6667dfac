import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes oracles importable

from rotvol.model import Prediction, decode_logits
from rotvol.rotations import (RelPoseParam, angle_to_bin, relative_from_params, rot_z)
from rotvol.sampling import (DatasetManifest, make_pairs_same_pano, render_views,
                             save_panorama, write_manifest, write_pano_index)
from rotvol.synth import synth_panorama_set


def one_hot_logits(gt: RelPoseParam, peak: float = 40.0) -> np.ndarray:
    """Logits that put essentially all probability on the ground-truth bins."""
    logits = np.zeros((3, 360))
    for k, angle in enumerate((gt.beta1, gt.beta2, gt.delta_gamma)):
        logits[k, angle_to_bin(angle)] = peak
    return logits


class GroundTruthModel:
    """Oracle predictor: returns the exact ground truth off the sample.

    Distributions are one-hot at the ground-truth bins, but the decoded
    angles and rotation are exact (no bin quantization).
    """

    def predict_pair(self, sample, img1, img2):
        pred = decode_logits(one_hot_logits(sample.gt))
        return Prediction(logits=pred.logits, distributions=pred.distributions,
                          decoded=sample.gt, rotation=relative_from_params(sample.gt))


class OffsetModel:
    """Ground truth composed with a fixed extra yaw, for metric plumbing tests."""

    def __init__(self, yaw_offset_deg: float):
        self.offset = yaw_offset_deg

    def predict_pair(self, sample, img1, img2):
        pred = decode_logits(one_hot_logits(sample.gt))
        rot = rot_z(self.offset) @ relative_from_params(sample.gt)
        return Prediction(logits=pred.logits, distributions=pred.distributions,
                          decoded=pred.decoded, rotation=rot)


class RandomModel:
    """Seeded random logits; deterministic per (sample index, seed)."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls = 0

    def predict_pair(self, sample, img1, img2):
        rng = np.random.default_rng((self.seed, self.calls))
        self.calls += 1
        return decode_logits(rng.normal(size=(3, 360)) * 3.0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small on-disk dataset: 2 room panoramas, 6 views each, all same-pano pairs."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    panos = synth_panorama_set(2, "room", seed=5, width=512)
    for p in panos:
        save_panorama(p, root)
    write_pano_index(panos, root, style="room", seed=5)
    views = render_views(panos, 6, (-30.0, 30.0), rng_seed=3, root=root, size=128)
    records = make_pairs_same_pano(views, quota=30, rng_seed=4)
    manifest = DatasetManifest(records=records, split="train", seed=4)
    write_manifest(manifest, root, (-30.0, 30.0), crop_size=128)
    return root, manifest
