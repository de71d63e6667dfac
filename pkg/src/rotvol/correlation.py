"""Dense all-pairs feature correlation volumes.

For feature maps f1, f2 of shape (K, h, w), the volume holds at
(p, q, r, s) the channel dot product between position (p, q) of the first
map and (r, s) of the second.  The dot product is raw (no normalization);
an optional flag L2-normalizes features beforehand.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch


def _as_tensor(f) -> torch.Tensor:
    return f if isinstance(f, torch.Tensor) else torch.as_tensor(np.asarray(f))


def correlate(f1, f2, normalize: bool = False) -> torch.Tensor:
    """All-pairs dot-product volume of shape (h, w, h, w).

    Computed as one matrix product over flattened positions, which is
    equivalent to the per-position loop up to accumulation order.
    """
    f1 = _as_tensor(f1)
    f2 = _as_tensor(f2)
    if f1.shape != f2.shape or f1.ndim != 3:
        raise ValueError(f"feature maps must share (K, h, w), got {tuple(f1.shape)} vs {tuple(f2.shape)}")
    if normalize:
        f1 = torch.nn.functional.normalize(f1, dim=0, eps=1e-8)
        f2 = torch.nn.functional.normalize(f2, dim=0, eps=1e-8)
    k, h, w = f1.shape
    flat1 = f1.reshape(k, h * w)
    flat2 = f2.reshape(k, h * w)
    return (flat1.T @ flat2).reshape(h, w, h, w)


def correlate_batch(f1: torch.Tensor, f2: torch.Tensor, normalize: bool = False) -> torch.Tensor:
    """Batched variant: (B, K, h, w) x 2 -> (B, h, w, h, w)."""
    if f1.shape != f2.shape or f1.ndim != 4:
        raise ValueError("expected matching (B, K, h, w) tensors")
    if normalize:
        f1 = torch.nn.functional.normalize(f1, dim=1, eps=1e-8)
        f2 = torch.nn.functional.normalize(f2, dim=1, eps=1e-8)
    b, k, h, w = f1.shape
    vol = torch.bmm(f1.reshape(b, k, h * w).transpose(1, 2), f2.reshape(b, k, h * w))
    return vol.reshape(b, h, w, h, w)


def flatten_for_decoder(vol: torch.Tensor) -> torch.Tensor:
    """Reshape (..., h, w, h, w) to (..., h*w, h, w).

    Channel c = p*w + q holds the 2D correlation slice of source position
    (p, q); the reshape is lossless.
    """
    vol = _as_tensor(vol)
    if vol.ndim == 4:
        h, w, h2, w2 = vol.shape
        return vol.reshape(h * w, h2, w2)
    if vol.ndim == 5:
        b, h, w, h2, w2 = vol.shape
        return vol.reshape(b, h * w, h2, w2)
    raise ValueError(f"expected a 4D or batched 5D volume, got shape {tuple(vol.shape)}")


def unflatten_volume(flat: torch.Tensor, h: int, w: int) -> torch.Tensor:
    flat = _as_tensor(flat)
    if flat.ndim == 3:
        return flat.reshape(h, w, *flat.shape[-2:])
    return flat.reshape(flat.shape[0], h, w, *flat.shape[-2:])


def dump_volume(vol: torch.Tensor, path: Path) -> None:
    """Debug dump: raw float32 binary plus a JSON shape sidecar."""
    path = Path(path)
    arr = _as_tensor(vol).detach().cpu().numpy().astype(np.float32)
    path.write_bytes(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "float32", "order": "C"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_volume(path: Path) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype=sidecar["dtype"])
    return arr.reshape(sidecar["shape"])
