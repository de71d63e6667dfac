"""Equirectangular panoramas and the pinhole camera used to crop them.

The panorama maps pixel x linearly to longitude (-180 at the left edge,
+180 at the right) and pixel y linearly to latitude (+90 at the top).
Longitude is measured about the vertical z axis, latitude is elevation
above the x/y plane.

A camera's Euler angles compose into its world-to-camera (extrinsic)
matrix.  Because yaw is the innermost factor of the roll*pitch*yaw
product, absolute yaws cancel out of relative rotations, and increasing
yaw by some angle pans the view by exactly that much longitude at any
pitch: a camera with yaw g and pitch b looks at longitude g, latitude b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rotations import EulerTriple, euler_to_matrix


@dataclass(frozen=True)
class CameraSpec:
    """A square pinhole view cut from a panorama."""

    yaw: float
    pitch: float
    roll: float = 0.0
    fov: float = 90.0
    size: int = 256

    def __post_init__(self):
        if not 0.0 < self.fov < 180.0:
            raise ValueError(f"fov must lie in (0, 180), got {self.fov}")
        if self.size < 8:
            raise ValueError(f"crop size must be >= 8, got {self.size}")

    @property
    def focal(self) -> float:
        return (self.size / 2.0) / math.tan(math.radians(self.fov) / 2.0)

    @property
    def center(self) -> float:
        # Pixel centers sit on a [0, size) grid; the optical axis is halfway.
        return (self.size - 1) / 2.0

    def rotation(self) -> np.ndarray:
        """World-to-camera (extrinsic) rotation."""
        return euler_to_matrix(EulerTriple(self.roll, self.pitch, self.yaw))

    def camera_to_world(self) -> np.ndarray:
        return self.rotation().T

    def to_json(self) -> dict:
        return {"yaw": self.yaw, "pitch": self.pitch, "roll": self.roll,
                "fov": self.fov, "size": self.size}

    @staticmethod
    def from_json(d: dict) -> "CameraSpec":
        return CameraSpec(yaw=float(d["yaw"]), pitch=float(d["pitch"]),
                          roll=float(d["roll"]), fov=float(d["fov"]), size=int(d["size"]))


@dataclass
class Panorama:
    """Full equirectangular sphere image (width must be twice the height)."""

    pixels: np.ndarray  # (H, W, 3) uint8
    id: str
    position: Optional[np.ndarray] = None  # meters, world frame
    dataset_tag: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("panorama pixels must be (H, W, 3)")
        h, w = self.pixels.shape[:2]
        if w != 2 * h:
            raise ValueError(f"equirectangular panorama needs W = 2H, got {w}x{h}")
        if self.position is not None:
            self.position = np.asarray(self.position, dtype=float).reshape(3)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def camera_rays(cam: CameraSpec) -> np.ndarray:
    """Unit ray directions in the camera frame for every output pixel.

    Returns (size, size, 3) with x forward; pixel u grows rightward (-y),
    pixel v grows downward (-z).
    """
    c = cam.center
    f = cam.focal
    u = np.arange(cam.size, dtype=np.float64)
    uu, vv = np.meshgrid(u, u)
    d = np.stack([np.ones_like(uu), -(uu - c) / f, -(vv - c) / f], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def lift_pixel(cam: CameraSpec, u, v) -> np.ndarray:
    """Inverse pinhole map: pixel coordinates to unit bearings (camera frame)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.stack([np.ones_like(u), -(u - cam.center) / cam.focal,
                  -(v - cam.center) / cam.focal], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def project_to_pixel(cam: CameraSpec, d_cam: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame directions to (u, v) pixel coords."""
    d = np.asarray(d_cam, dtype=np.float64)
    x = d[..., 0]
    if np.any(x <= 0):
        raise ValueError("direction behind the camera")
    u = cam.center - cam.focal * d[..., 1] / x
    v = cam.center - cam.focal * d[..., 2] / x
    return np.stack([u, v], axis=-1)


def dir_to_lonlat(d: np.ndarray):
    """World directions to (longitude, latitude) in degrees.

    Longitude grows in the yaw direction (toward -y), latitude upward.
    """
    d = np.asarray(d, dtype=np.float64)
    lon = np.degrees(np.arctan2(-d[..., 1], d[..., 0]))
    lat = np.degrees(np.arcsin(np.clip(d[..., 2] / np.linalg.norm(d, axis=-1), -1.0, 1.0)))
    return lon, lat


def lonlat_to_dir(lon, lat) -> np.ndarray:
    lon = np.radians(np.asarray(lon, dtype=np.float64))
    lat = np.radians(np.asarray(lat, dtype=np.float64))
    return np.stack([np.cos(lat) * np.cos(lon), -np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def pano_coords_from_lonlat(lon, lat, pano_w: int, pano_h: int):
    """Continuous panorama pixel coordinates of (longitude, latitude) degrees."""
    xf = (np.asarray(lon, dtype=np.float64) + 180.0) / 360.0 * pano_w - 0.5
    yf = (90.0 - np.asarray(lat, dtype=np.float64)) / 180.0 * pano_h - 0.5
    return xf, yf


def crop_to_pano_map(cam: CameraSpec, pano_w: int, pano_h: int):
    """Resampling map from crop pixels to panorama coordinates.

    Returns (map_x, map_y) of shape (size, size): where each output pixel
    samples the panorama.  map_x is continuous (not yet wrapped).
    """
    rays = camera_rays(cam)
    world = rays @ cam.camera_to_world().T
    lon, lat = dir_to_lonlat(world)
    return pano_coords_from_lonlat(lon, lat, pano_w, pano_h)


def sample_bilinear_wrapped(img: np.ndarray, xf: np.ndarray, yf: np.ndarray) -> np.ndarray:
    """Bilinear sampling with horizontal wrap-around and vertical clamping."""
    h, w = img.shape[:2]
    x0 = np.floor(xf).astype(np.int64)
    y0 = np.floor(yf).astype(np.int64)
    wx = (xf - x0)[..., None]
    wy = (yf - y0)[..., None]
    x0w = np.mod(x0, w)
    x1w = np.mod(x0 + 1, w)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    p = img.astype(np.float64)
    top = p[y0c, x0w] * (1 - wx) + p[y0c, x1w] * wx
    bot = p[y1c, x0w] * (1 - wx) + p[y1c, x1w] * wx
    return top * (1 - wy) + bot * wy


def render_perspective(pano: Panorama, cam: CameraSpec) -> np.ndarray:
    """Render a pinhole crop of the panorama as a (size, size, 3) uint8 image."""
    map_x, map_y = crop_to_pano_map(cam, pano.width, pano.height)
    out = sample_bilinear_wrapped(pano.pixels, map_x, map_y)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def rotate_panorama_longitude(pano: Panorama, delta_deg: float) -> Panorama:
    """Shift panorama content so a camera at yaw g sees what yaw g+delta saw.

    Integral pixel shifts are exact (np.roll); fractional shifts resample
    columns bilinearly.
    """
    shift = delta_deg / 360.0 * pano.width
    if abs(shift - round(shift)) < 1e-9:
        px = np.roll(pano.pixels, -int(round(shift)), axis=1)
    else:
        xs = np.arange(pano.width, dtype=np.float64) + shift
        ys = np.arange(pano.height, dtype=np.float64)
        xf, yf = np.meshgrid(xs, ys)
        px = np.clip(np.rint(sample_bilinear_wrapped(pano.pixels, xf, yf)), 0, 255).astype(np.uint8)
    return Panorama(pixels=px, id=pano.id + f"+lon{delta_deg:g}",
                    position=pano.position, dataset_tag=pano.dataset_tag)
