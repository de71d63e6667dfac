"""View sampling, pair construction, and JSON-Lines dataset manifests.

A dataset directory looks like::

    panos/<pano_id>.png      source panoramas
    panos.json               panorama index (ids, positions, style, seed)
    crops/<sha16>.png        content-addressed perspective crops
    views.json               per-panorama camera specs and crop references
    manifest_<split>.jsonl   header line + one pair record per line

Pairs carry the ground-truth relative pose derived from the two camera
specs, the overlap class of that rotation, and the camera translation
distance (zero for same-panorama pairs).
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import rotations
from .panorama import CameraSpec, Panorama, render_perspective
from .rotations import OverlapClass, RelPoseParam, relative_from_params, wrap_angle

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

PITCH_RANGES = {"indoor": (-30.0, 30.0), "outdoor": (-45.0, 45.0)}


@dataclass(frozen=True)
class PairSample:
    crop1_ref: str
    crop2_ref: str
    cam1: CameraSpec
    cam2: CameraSpec
    gt: RelPoseParam
    overlap: OverlapClass
    pano1_id: str
    pano2_id: str
    translation_m: float

    def to_json(self) -> dict:
        return {
            "crop1_ref": self.crop1_ref,
            "crop2_ref": self.crop2_ref,
            "cam1": self.cam1.to_json(),
            "cam2": self.cam2.to_json(),
            "gt": {"beta1": self.gt.beta1, "beta2": self.gt.beta2,
                   "delta_gamma": self.gt.delta_gamma},
            "overlap": self.overlap.value,
            "pano1_id": self.pano1_id,
            "pano2_id": self.pano2_id,
            "translation_m": self.translation_m,
        }

    @staticmethod
    def from_json(d: dict) -> "PairSample":
        return PairSample(
            crop1_ref=d["crop1_ref"],
            crop2_ref=d["crop2_ref"],
            cam1=CameraSpec.from_json(d["cam1"]),
            cam2=CameraSpec.from_json(d["cam2"]),
            gt=RelPoseParam(float(d["gt"]["beta1"]), float(d["gt"]["beta2"]),
                            float(d["gt"]["delta_gamma"])),
            overlap=OverlapClass(d["overlap"]),
            pano1_id=d["pano1_id"],
            pano2_id=d["pano2_id"],
            translation_m=float(d["translation_m"]),
        )


@dataclass
class DatasetManifest:
    records: list[PairSample]
    split: str
    seed: int
    header: dict = field(default_factory=dict)
    root: Optional[Path] = None

    def pano_ids(self) -> set[str]:
        ids = set()
        for r in self.records:
            ids.add(r.pano1_id)
            ids.add(r.pano2_id)
        return ids


def pair_from_cameras(cam1: CameraSpec, cam2: CameraSpec, crop1_ref: str, crop2_ref: str,
                      pano1_id: str, pano2_id: str, translation_m: float) -> PairSample:
    gt = RelPoseParam(beta1=cam1.pitch, beta2=cam2.pitch,
                      delta_gamma=wrap_angle(cam2.yaw - cam1.yaw))
    return PairSample(
        crop1_ref=crop1_ref, crop2_ref=crop2_ref, cam1=cam1, cam2=cam2, gt=gt,
        overlap=rotations.overlap_class(relative_from_params(gt)),
        pano1_id=pano1_id, pano2_id=pano2_id, translation_m=translation_m)


def sample_views(n: int, pitch_range: tuple[float, float], rng_seed: int,
                 fov: float = 90.0, size: int = 256) -> list[CameraSpec]:
    """Draw n zero-roll camera specs: yaw uniform on [-180, 180), pitch uniform
    on the given range."""
    lo, hi = pitch_range
    if lo < -90.0 or hi > 90.0 or lo > hi:
        raise ValueError(f"pitch range must lie within [-90, 90], got {pitch_range}")
    rng = np.random.default_rng(rng_seed)
    yaws = rng.uniform(-180.0, 180.0, size=n)
    pitches = rng.uniform(lo, hi, size=n)
    return [CameraSpec(yaw=float(y), pitch=float(p), roll=0.0, fov=fov, size=size)
            for y, p in zip(yaws, pitches)]


@dataclass(frozen=True)
class View:
    """One rendered perspective view of a panorama."""

    pano_id: str
    cam: CameraSpec
    crop_ref: str


def make_pairs_same_pano(views: list[View], quota: int, rng_seed: int) -> list[PairSample]:
    """Draw unordered view pairs within each panorama, without repetition.

    If the quota exceeds the number of distinct pairs, all pairs are emitted
    once and a warning is issued.
    """
    if len(views) < 2:
        raise ValueError("need at least two views")
    by_pano: dict[str, list[View]] = {}
    for v in views:
        by_pano.setdefault(v.pano_id, []).append(v)
    candidates = []
    for pano_id, vs in by_pano.items():
        for i in range(len(vs)):
            for j in range(i + 1, len(vs)):
                candidates.append((vs[i], vs[j]))
    rng = np.random.default_rng(rng_seed)
    if quota >= len(candidates):
        if quota > len(candidates):
            warnings.warn(f"quota {quota} exceeds {len(candidates)} distinct pairs; truncating")
        chosen = candidates
    else:
        idx = rng.choice(len(candidates), size=quota, replace=False)
        chosen = [candidates[int(i)] for i in idx]
    return [pair_from_cameras(a.cam, b.cam, a.crop_ref, b.crop_ref,
                              a.pano_id, b.pano_id, translation_m=0.0)
            for a, b in chosen]


def make_pairs_translated(panos: list[Panorama], views: list[View], max_dist_m: float,
                          quota: int, rng_seed: int) -> list[PairSample]:
    """Pair views across panoramas whose positions lie closer than max_dist_m.

    The label stays rotation-only; the translation magnitude is recorded on
    the sample.
    """
    positions = {}
    for p in panos:
        if p.position is None:
            raise ValueError(f"panorama {p.id} carries no position")
        positions[p.id] = p.position
    by_pano: dict[str, list[View]] = {}
    for v in views:
        by_pano.setdefault(v.pano_id, []).append(v)
    ids = [pid for pid in positions if pid in by_pano]
    close = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            dist = float(np.linalg.norm(positions[ids[i]] - positions[ids[j]]))
            if dist < max_dist_m:
                close.append((ids[i], ids[j], dist))
    if not close:
        warnings.warn(f"no panorama pair within {max_dist_m} m; empty result")
        return []
    rng = np.random.default_rng(rng_seed)
    out = []
    for _ in range(quota):
        a_id, b_id, dist = close[int(rng.integers(len(close)))]
        va = by_pano[a_id][int(rng.integers(len(by_pano[a_id])))]
        vb = by_pano[b_id][int(rng.integers(len(by_pano[b_id])))]
        out.append(pair_from_cameras(va.cam, vb.cam, va.crop_ref, vb.crop_ref,
                                     a_id, b_id, translation_m=dist))
    return out


def split_pano_ids(ids: list[str], test_fraction: float, rng_seed: int) -> tuple[list[str], list[str]]:
    """Disjoint train/test panorama id split."""
    rng = np.random.default_rng(rng_seed)
    order = list(ids)
    rng.shuffle(order)
    n_test = int(round(len(order) * test_fraction))
    return order[n_test:], order[:n_test]


# ---------------------------------------------------------------------------
# Disk I/O

def png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def store_crop(img: np.ndarray, root: Path) -> str:
    """Write a crop PNG under a content-addressed path, returning the relative ref."""
    data = png_bytes(img)
    digest = hashlib.sha256(data).hexdigest()[:16]
    rel = f"crops/{digest}.png"
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    if not path.exists():
        path.write_bytes(data)
    return rel


def load_image(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def save_panorama(pano: Panorama, root: Path) -> Path:
    path = root / "panos" / f"{pano.id}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(pano.pixels))
    return path


def load_panorama(root: Path, pano_id: str, index: Optional[dict] = None) -> Panorama:
    if index is None:
        index = read_pano_index(root)
    entry = index[pano_id]
    pixels = load_image(root / "panos" / f"{pano_id}.png")
    pos = entry.get("position")
    return Panorama(pixels=pixels, id=pano_id,
                    position=None if pos is None else np.asarray(pos, dtype=float),
                    dataset_tag=entry.get("dataset_tag", ""))


def write_pano_index(panos: list[Panorama], root: Path, style: str, seed: int) -> Path:
    index = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "style": style,
        "seed": seed,
        "panos": {
            p.id: {"position": None if p.position is None else [float(v) for v in p.position],
                   "dataset_tag": p.dataset_tag}
            for p in panos
        },
    }
    path = root / "panos.json"
    path.write_text(json.dumps(index, indent=2, sort_keys=True))
    return path


def read_pano_index(root: Path) -> dict:
    return json.loads((root / "panos.json").read_text())["panos"]


def write_views(views: list[View], root: Path, meta: dict) -> Path:
    payload = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        **meta,
        "views": [{"pano_id": v.pano_id, "cam": v.cam.to_json(), "crop_ref": v.crop_ref}
                  for v in views],
    }
    path = root / "views.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def read_views(root: Path) -> tuple[list[View], dict]:
    payload = json.loads((root / "views.json").read_text())
    views = [View(pano_id=v["pano_id"], cam=CameraSpec.from_json(v["cam"]),
                  crop_ref=v["crop_ref"]) for v in payload["views"]]
    meta = {k: v for k, v in payload.items() if k != "views"}
    return views, meta


def render_views(panos: list[Panorama], per_pano: int, pitch_range: tuple[float, float],
                 rng_seed: int, root: Path, fov: float = 90.0, size: int = 256) -> list[View]:
    """Sample cameras per panorama and write the rendered crops to disk."""
    views = []
    for k, pano in enumerate(panos):
        cams = sample_views(per_pano, pitch_range, rng_seed=int(
            np.random.SeedSequence([rng_seed, k]).generate_state(1)[0]),
            fov=fov, size=size)
        for cam in cams:
            crop = render_perspective(pano, cam)
            views.append(View(pano_id=pano.id, cam=cam, crop_ref=store_crop(crop, root)))
    return views


def manifest_path(root: Path, split: str) -> Path:
    return root / f"manifest_{split}.jsonl"


def write_manifest(manifest: DatasetManifest, root: Path, pitch_range: tuple[float, float],
                   fov: float = 90.0, crop_size: int = 256,
                   max_dist_m: Optional[float] = None) -> Path:
    header = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "pair-manifest",
        "split": manifest.split,
        "seed": manifest.seed,
        "fov": fov,
        "crop_size": crop_size,
        "pitch_range": [pitch_range[0], pitch_range[1]],
        "pair_count": len(manifest.records),
    }
    if max_dist_m is not None:
        header["max_dist_m"] = max_dist_m
    path = manifest_path(root, manifest.split)
    with path.open("w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            f.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    manifest.header = header
    manifest.root = root
    return path


def read_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    with path.open() as f:
        header = json.loads(f.readline())
        if header.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema: {header.get('schema_version')}")
        records = [PairSample.from_json(json.loads(line)) for line in f if line.strip()]
    return DatasetManifest(records=records, split=header.get("split", "train"),
                           seed=int(header.get("seed", 0)), header=header, root=path.parent)


# ---------------------------------------------------------------------------
# Linting

def lint_manifest(manifest: DatasetManifest) -> list[str]:
    """Check protocol conformance of a manifest; returns human-readable violations."""
    problems = []
    header = manifest.header
    lo, hi = header.get("pitch_range", (-90.0, 90.0))
    max_dist = header.get("max_dist_m")
    for i, r in enumerate(manifest.records):
        for name, cam in (("cam1", r.cam1), ("cam2", r.cam2)):
            if cam.roll != 0.0:
                problems.append(f"record {i}: {name} roll is {cam.roll}, expected 0")
            if not lo <= cam.pitch <= hi:
                problems.append(f"record {i}: {name} pitch {cam.pitch} outside [{lo}, {hi}]")
            if header.get("fov") is not None and cam.fov != header["fov"]:
                problems.append(f"record {i}: {name} fov {cam.fov} != header {header['fov']}")
        if abs(r.gt.beta1 - r.cam1.pitch) > 1e-9 or abs(r.gt.beta2 - r.cam2.pitch) > 1e-9:
            problems.append(f"record {i}: gt pitches disagree with cameras")
        if abs(r.gt.delta_gamma - wrap_angle(r.cam2.yaw - r.cam1.yaw)) > 1e-9:
            problems.append(f"record {i}: gt delta_gamma disagrees with camera yaws")
        same = r.pano1_id == r.pano2_id
        if same != (r.translation_m == 0.0):
            problems.append(f"record {i}: translation {r.translation_m} inconsistent with pano ids")
        if max_dist is not None and not same and r.translation_m >= max_dist:
            problems.append(f"record {i}: translation {r.translation_m} >= max_dist {max_dist}")
        expected = rotations.overlap_class(relative_from_params(r.gt))
        if r.overlap is not expected:
            problems.append(f"record {i}: overlap {r.overlap.value} != {expected.value}")
    return problems


def lint_split_disjoint(train: DatasetManifest, test: DatasetManifest) -> list[str]:
    shared = sorted(train.pano_ids() & test.pano_ids())
    return [f"panorama {pid} appears in both train and test" for pid in shared]
