"""Evaluation protocol: overlap-binned geodesic statistics, top-2 errors,
occlusion sensitivity maps, robustness probes, and statistics export.

Models enter through a small protocol: ``predict_pair(sample, img1, img2)``
returning a ``Prediction``.  The sample is passed so test oracles can look
at the ground truth; learned predictors ignore it.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rotations
from .model import Prediction
from .panorama import CameraSpec, render_perspective
from .rotations import (OverlapClass, RelPoseParam, bin_to_angle, geodesic_error,
                        relative_from_params)
from .sampling import DatasetManifest, PairSample, load_image, load_panorama, read_pano_index

CLASS_ORDER = ("Large", "Small", "None", "All")


@dataclass
class ClassStats:
    mean_deg: float
    median_deg: float
    pct_under_10: float
    count: int
    success_count: Optional[int] = None

    def to_json(self) -> dict:
        d = {"mean_deg": self.mean_deg, "median_deg": self.median_deg,
             "pct_under_10": self.pct_under_10, "count": self.count}
        if self.success_count is not None:
            d["success_count"] = self.success_count
        return d


@dataclass
class PairOutcome:
    index: int
    overlap: OverlapClass
    error_deg: float
    success: bool = True
    top2_error_deg: Optional[float] = None
    decoded: Optional[RelPoseParam] = None


@dataclass
class EvalReport:
    classes: dict[str, ClassStats]
    per_pair: list[PairOutcome] = field(default_factory=list)
    top2_classes: Optional[dict[str, ClassStats]] = None

    def to_json(self) -> dict:
        out = {"classes": {k: v.to_json() for k, v in self.classes.items()}}
        if self.top2_classes is not None:
            out["top2_classes"] = {k: v.to_json() for k, v in self.top2_classes.items()}
        return out


def median_lower(values: np.ndarray) -> float:
    """Deterministic median: the lower-middle element of the sorted values."""
    values = np.sort(np.asarray(values, dtype=float))
    if len(values) == 0:
        return float("nan")
    return float(values[(len(values) - 1) // 2])


def _stats(errors: np.ndarray, count: int, success_count: Optional[int] = None) -> ClassStats:
    if len(errors) == 0:
        return ClassStats(float("nan"), float("nan"), 0.0, count, success_count)
    pct = 100.0 * float(np.sum(errors < 10.0)) / count
    return ClassStats(float(np.mean(errors)), median_lower(errors), pct, count, success_count)


def summarize(outcomes: list[PairOutcome], use_top2: bool = False,
              successes_only: bool = False) -> dict[str, ClassStats]:
    """Group outcomes by overlap class into Table-style statistics.

    Percentages are always over the full pair count of the class; with
    ``successes_only`` the mean and median skip failed fits (the convention
    feature-matching baselines are reported under).
    """
    classes = {}
    for name in CLASS_ORDER:
        if name == "All":
            group = outcomes
        else:
            group = [o for o in outcomes if o.overlap.value == name]
        ok = [o for o in group if o.success] if successes_only else group
        errors = np.array([(o.top2_error_deg if use_top2 else o.error_deg) for o in ok],
                          dtype=float)
        classes[name] = _stats(errors, count=len(group),
                               success_count=len(ok) if successes_only else None)
    return classes


def _load_pair_images(manifest: DatasetManifest, sample: PairSample):
    root = manifest.root
    return load_image(root / sample.crop1_ref), load_image(root / sample.crop2_ref)


def evaluate(model, manifest: DatasetManifest, top2: bool = False) -> EvalReport:
    """Per-pair geodesic errors grouped by the stored overlap class."""
    if not manifest.records:
        raise ValueError("manifest holds no pairs")
    outcomes = []
    for i, sample in enumerate(manifest.records):
        img1, img2 = _load_pair_images(manifest, sample)
        pred = model.predict_pair(sample, img1, img2)
        gt = relative_from_params(sample.gt)
        err = geodesic_error(pred.rotation, gt)
        outcome = PairOutcome(index=i, overlap=sample.overlap, error_deg=err,
                              decoded=pred.decoded)
        if top2:
            outcome.top2_error_deg = min(err, _second_candidate_error(pred, gt))
        outcomes.append(outcome)
    report = EvalReport(classes=summarize(outcomes), per_pair=outcomes)
    if top2:
        report.top2_classes = summarize(outcomes, use_top2=True)
    return report


def _second_candidate_error(pred: Prediction, gt: np.ndarray) -> float:
    """Error of the rotation decoded from each head's second-ranked bin."""
    if pred.distributions is None:
        raise ValueError("model exposes no distributions; top-2 undefined")
    second = []
    for p in pred.distributions:
        ranked = rotations.top_k_angles(p, 2)
        second.append(ranked[1][0])
    rot = relative_from_params(RelPoseParam(second[0], second[1], second[2]))
    return geodesic_error(rot, gt)


def top2_report(model, manifest: DatasetManifest) -> EvalReport:
    """Evaluation where each pair scores the better of its two most likely
    decoded rotations."""
    return evaluate(model, manifest, top2=True)


# ---------------------------------------------------------------------------
# Occlusion sensitivity


@dataclass
class OcclusionMap:
    grids: tuple[np.ndarray, np.ndarray]  # per-window geodesic error, one grid per image
    window: int
    stride: int
    baseline_error_deg: float


def occlusion_grid_shape(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


def occlusion_heatmap(model, sample: PairSample, img1: np.ndarray, img2: np.ndarray,
                      window: int = 32, stride: int = 16,
                      fill: Optional[tuple] = None) -> OcclusionMap:
    """Slide a filled window over each image in turn and record the error.

    The untouched image stays fixed; occluded regions are replaced by the
    dataset mean color (per-channel mean of the two crops unless given).
    """
    if stride <= 0:
        raise ValueError("stride must be positive")
    size = img1.shape[0]
    if window > size:
        raise ValueError("window larger than the image")
    if fill is None:
        fill = tuple(np.concatenate([img1.reshape(-1, 3), img2.reshape(-1, 3)])
                     .mean(axis=0).tolist())
    fill_arr = np.asarray(fill, dtype=np.uint8)
    gt = relative_from_params(sample.gt)
    base_err = geodesic_error(model.predict_pair(sample, img1, img2).rotation, gt)
    n = occlusion_grid_shape(size, window, stride)
    grids = []
    for which, img in ((0, img1), (1, img2)):
        grid = np.zeros((n, n))
        for gy in range(n):
            for gx in range(n):
                patched = img.copy()
                y0, x0 = gy * stride, gx * stride
                patched[y0:y0 + window, x0:x0 + window] = fill_arr
                pair = (patched, img2) if which == 0 else (img1, patched)
                pred = model.predict_pair(sample, *pair)
                grid[gy, gx] = geodesic_error(pred.rotation, gt)
        grids.append(grid)
    return OcclusionMap(grids=(grids[0], grids[1]), window=window, stride=stride,
                        baseline_error_deg=base_err)


# ---------------------------------------------------------------------------
# Probes


def roll_probe(model, manifest: DatasetManifest, max_roll: float, rng_seed: int = 0) -> EvalReport:
    """Re-render each crop with a random roll and evaluate against the
    rolled ground truth.

    The model still sees the original zero-roll pair sample; the reference
    rotation is recomputed from the rolled camera specs, so a perfect
    zero-roll oracle shows exactly the roll-induced mismatch.
    """
    if max_roll < 0:
        raise ValueError("max_roll must be >= 0")
    if manifest.root is None:
        raise ValueError("manifest must know its root directory")
    rng = np.random.default_rng(rng_seed)
    index = read_pano_index(manifest.root)
    pano_cache = {}

    def pano(pid):
        if pid not in pano_cache:
            pano_cache[pid] = load_panorama(manifest.root, pid, index)
        return pano_cache[pid]

    outcomes = []
    for i, sample in enumerate(manifest.records):
        r1, r2 = rng.uniform(-max_roll, max_roll, size=2)
        cam1 = dataclasses.replace(sample.cam1, roll=float(r1))
        cam2 = dataclasses.replace(sample.cam2, roll=float(r2))
        img1 = render_perspective(pano(sample.pano1_id), cam1)
        img2 = render_perspective(pano(sample.pano2_id), cam2)
        pred = model.predict_pair(sample, img1, img2)
        gt_rolled = cam2.rotation() @ cam1.rotation().T
        err = geodesic_error(pred.rotation, gt_rolled)
        outcomes.append(PairOutcome(index=i, overlap=sample.overlap, error_deg=err,
                                    decoded=pred.decoded))
    return EvalReport(classes=summarize(outcomes), per_pair=outcomes)


@dataclass
class IdentityProbeResult:
    errors_deg: list[float]
    pitch_gaps_deg: list[float]

    @property
    def mean_error_deg(self) -> float:
        return float(np.mean(self.errors_deg))

    @property
    def median_error_deg(self) -> float:
        return median_lower(np.array(self.errors_deg))


def identity_probe(model, images: list[np.ndarray]) -> IdentityProbeResult:
    """Feed every image twice; record error against identity and the
    disagreement between the two pitch heads."""
    errors, gaps = [], []
    identity_gt = RelPoseParam(0.0, 0.0, 0.0)
    for i, img in enumerate(images):
        sample = PairSample(
            crop1_ref="", crop2_ref="",
            cam1=CameraSpec(yaw=0.0, pitch=0.0), cam2=CameraSpec(yaw=0.0, pitch=0.0),
            gt=identity_gt, overlap=OverlapClass.LARGE,
            pano1_id=f"probe-{i}", pano2_id=f"probe-{i}", translation_m=0.0)
        pred = model.predict_pair(sample, img, img)
        errors.append(geodesic_error(pred.rotation, np.eye(3)))
        gaps.append(abs(pred.decoded.beta1 - pred.decoded.beta2))
    return IdentityProbeResult(errors_deg=errors, pitch_gaps_deg=gaps)


# ---------------------------------------------------------------------------
# Classical baseline evaluation


def evaluate_matching_baseline(manifest: DatasetManifest, fit, detector="builtin") -> EvalReport:
    """Run a feature-matching fit over a manifest.

    ``fit`` maps a list of BearingMatch to a FitResult (two-point RANSAC or
    the essential-matrix path).  The bearing-alignment rotation equals the
    relative rotation of the pair, so errors compare directly against the
    standard ground truth.  Failed pairs score 180 degrees and are excluded
    from mean/median via the success convention.
    """
    from .baselines import detect_and_match

    outcomes = []
    for i, sample in enumerate(manifest.records):
        img1, img2 = _load_pair_images(manifest, sample)
        matches = detect_and_match(img1, img2, sample.cam1, detector=detector)
        result = fit(matches) if len(matches) >= 2 else None
        gt = relative_from_params(sample.gt)
        if result is not None and result.success and result.rotation is not None:
            err = geodesic_error(result.rotation, gt)
            outcomes.append(PairOutcome(index=i, overlap=sample.overlap,
                                        error_deg=err, success=True))
        else:
            outcomes.append(PairOutcome(index=i, overlap=sample.overlap,
                                        error_deg=180.0, success=False))
    return EvalReport(classes=summarize(outcomes, successes_only=True), per_pair=outcomes)


# ---------------------------------------------------------------------------
# Statistics export

HIST_BIN_DEG = 10.0
HIST_BINS = 18


def export_stats(errors, hist_path: Path, cdf_path: Path):
    """Write the 10-degree histogram and the 1-degree CDF of geodesic errors.

    Returns (hist_counts (18,), cdf (181,)).  Errors of exactly 180 degrees
    fall into the last bin.
    """
    errors = np.asarray(list(errors), dtype=float)
    if errors.size == 0:
        raise ValueError("no errors to export")
    idx = np.minimum((errors / HIST_BIN_DEG).astype(int), HIST_BINS - 1)
    counts = np.bincount(idx, minlength=HIST_BINS)
    grid = np.arange(0, 181)
    cdf = np.array([(errors <= g).mean() for g in grid])

    hist_path = Path(hist_path)
    hist_path.parent.mkdir(parents=True, exist_ok=True)
    with hist_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo_deg", "bin_hi_deg", "count", "fraction"])
        for b in range(HIST_BINS):
            w.writerow([b * 10, (b + 1) * 10, int(counts[b]), counts[b] / errors.size])
    cdf_path = Path(cdf_path)
    with cdf_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["error_deg", "fraction_leq"])
        for g, v in zip(grid, cdf):
            w.writerow([int(g), v])
    return counts, cdf


def write_pairs_csv(report: EvalReport, manifest: DatasetManifest, path: Path):
    """Per-pair results: ground truth, decoded prediction, errors, success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "pano1_id", "pano2_id", "overlap", "translation_m",
                    "gt_beta1", "gt_beta2", "gt_delta_gamma",
                    "pred_beta1", "pred_beta2", "pred_delta_gamma",
                    "error_deg", "top2_error_deg", "success"])
        for o in report.per_pair:
            s = manifest.records[o.index]
            dec = o.decoded
            w.writerow([
                o.index, s.pano1_id, s.pano2_id, s.overlap.value, s.translation_m,
                s.gt.beta1, s.gt.beta2, s.gt.delta_gamma,
                "" if dec is None else dec.beta1,
                "" if dec is None else dec.beta2,
                "" if dec is None else dec.delta_gamma,
                o.error_deg,
                "" if o.top2_error_deg is None else o.top2_error_deg,
                int(o.success),
            ])
