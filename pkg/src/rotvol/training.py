"""Training loop: Adam with a linear learning-rate decay tail, checkpointing,
and fully seeded batch sampling.

Defaults follow the full-scale recipe (Adam betas 0.5/0.9, batch 20, 500k
iterations, learning rate 5e-4 decaying linearly to 5e-6 from iteration
250k).  The desk preset shrinks everything to CPU scale without touching
the optimizer shape.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import model as model_mod
from .model import (ModelConfig, Predictor, build_model, loss_sum_ce,
                    prepare_image, save_checkpoint, target_bins)
from .rotations import relative_from_params
from .sampling import DatasetManifest, load_image, read_manifest

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_init: float = 5e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 20
    total_iters: int = 500_000
    decay_start: int = 250_000
    lr_final: float = 5e-6
    seed: int = 0
    checkpoint_every: int = 10_000
    manifest: Optional[str] = None
    out_dir: Optional[str] = None
    arch: str = "classifier"  # or "reg6d" for the regression baseline
    log_every: int = 50
    deterministic: bool = True

    def __post_init__(self):
        if not 0 <= self.decay_start <= self.total_iters:
            raise ValueError("decay_start must lie in [0, total_iters]")
        if self.arch not in ("classifier", "reg6d"):
            raise ValueError(f"unknown arch {self.arch!r}")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def desk_preset(manifest: Optional[str] = None, out_dir: Optional[str] = None,
                seed: int = 0) -> TrainConfig:
    return TrainConfig(batch_size=10, total_iters=2000, decay_start=1000,
                       checkpoint_every=500, seed=seed, manifest=manifest, out_dir=out_dir)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Constant before decay_start, then linear to lr_final at total_iters."""
    if iteration < 0 or iteration > cfg.total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {cfg.total_iters}]")
    if iteration < cfg.decay_start:
        return cfg.lr_init
    span = cfg.total_iters - cfg.decay_start
    if span == 0:
        return cfg.lr_final
    frac = (iteration - cfg.decay_start) / span
    return cfg.lr_init + frac * (cfg.lr_final - cfg.lr_init)


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)  # iter, loss, lr, wall_ms

    def append(self, iteration: int, loss: float, lr: float, wall_ms: float):
        self.rows.append((iteration, loss, lr, wall_ms))

    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def write_csv(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "loss", "lr", "wall_ms"])
            writer.writerows(self.rows)


class PairDataset:
    """In-memory dataset of prepared crop tensors plus target bins."""

    def __init__(self, manifest: DatasetManifest, input_size: int,
                 norm_mean=None, norm_std=None):
        if manifest.root is None:
            raise ValueError("manifest must know its root directory")
        if not manifest.records:
            raise ValueError("manifest holds no pairs")
        raw1, raw2 = [], []
        cache: dict[str, np.ndarray] = {}
        for r in manifest.records:
            for ref, bucket in ((r.crop1_ref, raw1), (r.crop2_ref, raw2)):
                if ref not in cache:
                    cache[ref] = load_image(manifest.root / ref)
                bucket.append(cache[ref])
        if norm_mean is None or norm_std is None:
            norm_mean, norm_std = dataset_statistics(cache.values())
        self.norm_mean = norm_mean
        self.norm_std = norm_std
        self.img1 = torch.stack([prepare_image(im, input_size, norm_mean, norm_std) for im in raw1])
        self.img2 = torch.stack([prepare_image(im, input_size, norm_mean, norm_std) for im in raw2])
        self.targets = torch.from_numpy(np.stack([target_bins(r.gt) for r in manifest.records]))
        self.gt_matrices = torch.from_numpy(np.stack(
            [np.asarray(relative_from_params(r.gt), dtype=np.float32)
             for r in manifest.records]))

    def __len__(self):
        return self.img1.shape[0]

    def batch(self, idx: np.ndarray):
        t = torch.from_numpy(np.asarray(idx, dtype=np.int64))
        return self.img1[t], self.img2[t], self.targets[t], self.gt_matrices[t]


def dataset_statistics(images) -> tuple[tuple, tuple]:
    """Per-channel mean/std of [0, 1] pixels over a crop collection."""
    acc = np.zeros(3)
    acc2 = np.zeros(3)
    n = 0
    for im in images:
        x = im.astype(np.float64) / 255.0
        acc += x.reshape(-1, 3).sum(axis=0)
        acc2 += (x.reshape(-1, 3) ** 2).sum(axis=0)
        n += x.shape[0] * x.shape[1]
    mean = acc / n
    std = np.sqrt(np.maximum(acc2 / n - mean ** 2, 1e-8))
    return tuple(mean.tolist()), tuple(np.maximum(std, 1e-3).tolist())


def _rng_state(batch_rng: np.random.Generator) -> dict:
    return {"torch": torch.get_rng_state(), "numpy": batch_rng.bit_generator.state}


def _restore_rng(state: dict, batch_rng: np.random.Generator):
    torch.set_rng_state(state["torch"])
    batch_rng.bit_generator.state = state["numpy"]


def train(cfg: TrainConfig, model=None, model_config: Optional[ModelConfig] = None,
          resume_from: Optional[Path] = None, dataset: Optional[PairDataset] = None):
    """Run the optimization loop.

    Returns (model, TrainLog, Predictor).  Resuming restores optimizer and
    RNG state, so a split run reproduces the uninterrupted trajectory.
    """
    if cfg.deterministic:
        torch.manual_seed(cfg.seed)
    if dataset is None:
        if cfg.manifest is None:
            raise ValueError("TrainConfig.manifest is required when no dataset is given")
        manifest = read_manifest(Path(cfg.manifest))
        model_cfg = model_config or model_mod.TOY_CONFIG
        dataset = PairDataset(manifest, model_cfg.input_size)
    model_cfg = model_config or (model.cfg if model is not None else model_mod.TOY_CONFIG)

    start_iter = 0
    batch_rng = np.random.default_rng(cfg.seed)
    if resume_from is not None:
        payload = model_mod.load_checkpoint(resume_from)
        model = model_mod.model_from_checkpoint(payload)
        model_cfg = model.cfg
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init,
                                     betas=(cfg.adam_beta1, cfg.adam_beta2))
        optimizer.load_state_dict(payload["optimizer_state"])
        start_iter = payload["iteration"]
        if payload.get("rng_state"):
            _restore_rng(payload["rng_state"], batch_rng)
        dataset.norm_mean = tuple(payload["norm_mean"])
        dataset.norm_std = tuple(payload["norm_std"])
    else:
        if model is None:
            if cfg.arch == "reg6d":
                from .baselines import build_reg6d
                model = build_reg6d(model_cfg, seed=cfg.seed)
            else:
                model = build_model(model_cfg, seed=cfg.seed)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init,
                                     betas=(cfg.adam_beta1, cfg.adam_beta2))

    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    regression = cfg.arch == "reg6d"
    train_log = TrainLog()
    model.train()
    n = len(dataset)
    for it in range(start_iter, cfg.total_iters):
        lr = lr_at(it, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        idx = batch_rng.integers(0, n, size=cfg.batch_size)  # with replacement
        img1, img2, targets, gt_mats = dataset.batch(idx)
        t0 = time.perf_counter()
        optimizer.zero_grad(set_to_none=True)
        if regression:
            pred_mats = model(img1, img2)
            loss = torch.mean(torch.sum((pred_mats - gt_mats) ** 2, dim=(1, 2)))
        else:
            logits = model(img1, img2)
            loss = loss_sum_ce(logits, targets)
        loss_val = float(loss.detach())
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"non-finite loss {loss_val} at iteration {it}")
        loss.backward()
        optimizer.step()
        wall_ms = (time.perf_counter() - t0) * 1000.0
        train_log.append(it, loss_val, lr, wall_ms)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.4f lr %.2e", it, loss_val, lr)
        done = it + 1
        if out_dir and (done % cfg.checkpoint_every == 0 or done == cfg.total_iters):
            save_checkpoint(out_dir / f"ckpt_{done:07d}.pt", model, optimizer,
                            iteration=done, seed=cfg.seed,
                            norm_mean=dataset.norm_mean, norm_std=dataset.norm_std,
                            train_config=cfg.to_json(), rng_state=_rng_state(batch_rng))

    model.eval()
    if out_dir:
        save_checkpoint(out_dir / "final.pt", model, optimizer, iteration=cfg.total_iters,
                        seed=cfg.seed, norm_mean=dataset.norm_mean, norm_std=dataset.norm_std,
                        train_config=cfg.to_json(), rng_state=_rng_state(batch_rng))
        train_log.write_csv(out_dir / "trainlog.csv")
    predictor = Predictor(model, norm_mean=dataset.norm_mean, norm_std=dataset.norm_std)
    return model, train_log, predictor
