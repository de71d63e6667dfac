"""Procedural panoramas with enough directional structure to learn poses from.

Two styles are provided.  "room" ray-casts the inside of a box whose four
walls carry distinct hues, vertical stripe patterns, and seeded posters, so
both absolute pitch (floor/ceiling boundaries) and yaw (hue plus stripe
phase) are recoverable from a crop.  "street" renders a road between two
building rows with window grids, lane markings, and a sun-driven sky
gradient, giving vanishing-line and illumination cues.

Rendering is a pure function of (world parameters, camera position, size),
so identical seeds yield byte-identical panoramas.  Sets of panoramas can
share one world and differ only by camera position, which is what the
translated-pair construction needs.
"""

from __future__ import annotations

import numpy as np

from .panorama import Panorama, lonlat_to_dir

WALL_HUES = {
    "+x": (202, 72, 62),
    "-x": (70, 100, 205),
    "+y": (70, 185, 90),
    "-y": (212, 190, 68),
}
_FLOOR = (122, 106, 96)
_CEILING = (226, 223, 216)

EYE_HEIGHT_M = 1.6
STREET_HALF_WIDTH_M = 6.0
BLOCK_LEN_M = 8.0


def _pano_grid(width: int):
    height = width // 2
    x = np.arange(width, dtype=np.float64)
    y = np.arange(height, dtype=np.float64)
    lon = np.radians((x + 0.5) / width * 360.0 - 180.0)
    lat = np.radians(90.0 - (y + 0.5) / height * 180.0)
    lon, lat = np.meshgrid(lon, lat)
    d = np.stack([np.cos(lat) * np.cos(lon), -np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)
    return d, height


def _room_world(rng: np.random.Generator):
    return {
        "stripe_phase": rng.uniform(0.0, 1.0, size=4),
        "checker_shift": rng.uniform(0.0, 1.0, size=2),
        # Posters per wall: (center along wall, center height, half w, half h, gray factor)
        "posters": rng.uniform(0.0, 1.0, size=(4, 3, 5)),
    }


def _apply_posters(brightness, h_coord, z_coord, posters, h_lo, h_hi, z_lo, z_hi):
    for pc in posters:
        ph = h_lo + pc[0] * (h_hi - h_lo)
        pz = z_lo + 0.15 * (z_hi - z_lo) + pc[1] * 0.7 * (z_hi - z_lo)
        hw = 0.15 + 0.35 * pc[2]
        hh = 0.15 + 0.3 * pc[3]
        factor = 0.35 + 0.6 * pc[4]
        inside = (np.abs(h_coord - ph) < hw) & (np.abs(z_coord - pz) < hh)
        brightness = np.where(inside, factor, brightness)
    return brightness


def _render_room(d, origin, world, half_extent: float):
    floor_z = -1.5
    ceil_z = 1.1
    ax = ay = half_extent
    ox, oy, oz = origin

    with np.errstate(divide="ignore", invalid="ignore"):
        ts = np.stack([
            (ax - ox) / d[..., 0], (-ax - ox) / d[..., 0],
            (ay - oy) / d[..., 1], (-ay - oy) / d[..., 1],
            (ceil_z - oz) / d[..., 2], (floor_z - oz) / d[..., 2],
        ], axis=0)
    ts = np.where(ts > 1e-9, ts, np.inf)
    face = np.argmin(ts, axis=0)
    t = np.take_along_axis(ts, face[None], axis=0)[0]
    hit = origin + t[..., None] * d

    img = np.zeros(d.shape[:2] + (3,), dtype=np.float64)
    wall_specs = [
        ("+x", 0, hit[..., 1], world["stripe_phase"][0]),
        ("-x", 1, hit[..., 1], world["stripe_phase"][1]),
        ("+y", 2, hit[..., 0], world["stripe_phase"][2]),
        ("-y", 3, hit[..., 0], world["stripe_phase"][3]),
    ]
    for name, fid, h_coord, phase in wall_specs:
        mask = face == fid
        if not mask.any():
            continue
        z = hit[..., 2]
        b = 0.72 + 0.26 * np.cos(2 * np.pi * (h_coord + phase))
        b = _apply_posters(b, h_coord, z, world["posters"][fid],
                           -half_extent, half_extent, floor_z, ceil_z)
        # Baseboard / cornice lines anchor the floor and ceiling junctions.
        b = np.where((np.abs(z - floor_z) < 0.07) | (np.abs(z - ceil_z) < 0.07), 0.3, b)
        base = np.array(WALL_HUES[name], dtype=np.float64)
        img[mask] = base * b[mask, None]

    mask = face == 4
    gx, gy = np.modf(hit[..., 0])[0], np.modf(hit[..., 1])[0]
    grid = (np.abs(gx) < 0.06) | (np.abs(gy) < 0.06)
    ceil_b = np.where(grid, 0.78, 1.0)
    img[mask] = np.array(_CEILING, dtype=np.float64) * ceil_b[mask, None]

    mask = face == 5
    cx, cy = world["checker_shift"]
    checker = (np.floor(hit[..., 0] + cx) + np.floor(hit[..., 1] + cy)) % 2
    floor_b = np.where(checker > 0.5, 1.12, 0.74)
    img[mask] = np.array(_FLOOR, dtype=np.float64) * floor_b[mask, None]
    return img


def _street_world(rng: np.random.Generator):
    n_blocks = 128
    return {
        "sun_lon": rng.uniform(-180.0, 180.0),
        "heights": rng.uniform(7.0, 22.0, size=n_blocks),
        "facade": rng.uniform(0.0, 1.0, size=(n_blocks, 3)),
    }


def _facade_color(world, x, z, lit):
    idx = (np.floor(x / BLOCK_LEN_M).astype(np.int64)) % world["heights"].shape[0]
    base = 95.0 + 75.0 * world["facade"][idx]  # (..., 3)
    zg = z + EYE_HEIGHT_M
    win_row = np.modf(zg / 3.0)[0]
    win_col = np.modf(np.abs(x) / 2.5)[0]
    windows = (zg > 1.6) & (win_row > 0.3) & (win_row < 0.75) & (win_col > 0.25) & (win_col < 0.8)
    seams = np.modf(np.abs(x) / BLOCK_LEN_M)[0] < 0.025
    b = np.where(windows, 0.3, 1.0) * np.where(seams, 0.55, 1.0) * lit
    return base * b[..., None]


def _render_street(d, origin, world):
    ground_z = -EYE_HEIGHT_M
    wy = STREET_HALF_WIDTH_M
    ox, oy, oz = origin
    img = np.zeros(d.shape[:2] + (3,), dtype=np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (ground_z - oz) / d[..., 2]
        t_left = (wy - oy) / d[..., 1]
        t_right = (-wy - oy) / d[..., 1]
    t_ground = np.where((d[..., 2] < 0) & (t_ground > 0), t_ground, np.inf)

    sun_lon = world["sun_lon"]
    sun = lonlat_to_dir(sun_lon, 35.0)
    lit_left = 0.62 + 0.5 * max(0.0, np.sin(np.radians(sun_lon)))
    lit_right = 0.62 + 0.5 * max(0.0, -np.sin(np.radians(sun_lon)))

    hit_any = np.zeros(d.shape[:2], dtype=bool)
    t_best = np.full(d.shape[:2], np.inf)

    for t_side, lit in ((t_left, lit_left), (t_right, lit_right)):
        t_side = np.where(np.isfinite(t_side) & (t_side > 1e-9), t_side, np.inf)
        finite = np.isfinite(t_side)
        x = np.where(finite, ox + t_side * d[..., 0], 0.0)
        z = np.where(finite, oz + t_side * d[..., 2], 1e9)
        idx = (np.floor(x / BLOCK_LEN_M).astype(np.int64)) % world["heights"].shape[0]
        h = world["heights"][idx]
        valid = finite & (z >= ground_z - 1e-9) & (z <= h) & (t_side < t_best)
        if valid.any():
            color = _facade_color(world, x, z, lit)
            img[valid] = color[valid]
            t_best = np.where(valid, t_side, t_best)
            hit_any |= valid

    valid = (t_ground < t_best)
    if valid.any():
        tg = np.where(np.isfinite(t_ground), t_ground, 0.0)
        x = ox + tg * d[..., 0]
        y = oy + tg * d[..., 1]
        asphalt = np.full(d.shape[:2] + (3,), (96.0, 96.0, 101.0))
        lane = (np.abs(y) < 0.18) & (np.modf(np.abs(x) / 4.0)[0] < 0.5)
        sidewalk = np.abs(y) > wy - 1.2
        asphalt[lane] = (225.0, 225.0, 215.0)
        asphalt[sidewalk] = (152.0, 149.0, 141.0)
        img[valid] = asphalt[valid]
        hit_any |= valid

    sky = ~hit_any
    if sky.any():
        elev = np.clip(d[..., 2], 0.0, 1.0)
        base = np.stack([170 - 80 * elev, 200 - 60 * elev, 240 - 10 * elev], axis=-1)
        cos_sun = np.clip((d * sun).sum(axis=-1), -1.0, 1.0)
        glow = np.exp(-(np.degrees(np.arccos(cos_sun)) / 22.0) ** 2)
        dir_b = 1.0 + 0.1 * np.cos(np.arctan2(-d[..., 1], d[..., 0]) - np.radians(sun_lon))
        color = base * dir_b[..., None] + glow[..., None] * np.array([90.0, 65.0, 10.0])
        img[sky] = color[sky]
    return img


def synth_panorama(seed: int, style: str, width: int = 1024,
                   position=(0.0, 0.0, 0.0), world_seed=None,
                   pano_id: str | None = None, room_half_extent: float = 2.5) -> Panorama:
    """Render one procedural equirectangular panorama.

    ``world_seed`` controls scene content (defaults to ``seed``); ``position``
    moves the camera inside the shared scene.
    """
    if style not in ("room", "street"):
        raise ValueError(f"unknown style {style!r}")
    rng = np.random.default_rng(seed if world_seed is None else world_seed)
    world = _room_world(rng) if style == "room" else _street_world(rng)
    d, height = _pano_grid(width)
    origin = np.asarray(position, dtype=np.float64)
    if style == "room":
        if max(abs(origin[0]), abs(origin[1])) >= room_half_extent - 0.3:
            raise ValueError("camera position too close to the room walls")
        img = _render_room(d, origin, world, room_half_extent)
    else:
        if abs(origin[1]) >= STREET_HALF_WIDTH_M - 1.0:
            raise ValueError("camera position must stay on the street")
        img = _render_street(d, origin, world)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Panorama(pixels=pixels, id=pano_id or f"{style}-s{seed}",
                    position=origin, dataset_tag=f"synth-{style}")


def synth_panorama_set(n: int, style: str, seed: int, width: int = 1024,
                       spacing_m: float = 2.0, shared_world: bool = False) -> list[Panorama]:
    """Render n panoramas with camera positions on a grid.

    With ``shared_world`` every panorama shows the same scene from a
    different position (the setup translated pairs need); otherwise each
    gets its own scene.  Room cameras sit on a square grid, street cameras
    walk along the road.
    """
    positions = []
    if style == "street":
        for i in range(n):
            positions.append(((i - (n - 1) / 2.0) * spacing_m, 0.0, 0.0))
        half = 2.5
    else:
        cols = int(np.ceil(np.sqrt(n)))
        for i in range(n):
            r, c = divmod(i, cols)
            positions.append(((c - (cols - 1) / 2.0) * spacing_m,
                              (r - (cols - 1) / 2.0) * spacing_m, 0.0))
        half = max(abs(p[0]) for p in positions) + max(abs(p[1]) for p in positions) + 3.0

    panos = []
    for i, pos in enumerate(positions):
        world_seed = seed if shared_world else int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        panos.append(synth_panorama(
            seed, style, width=width, position=pos, world_seed=world_seed,
            pano_id=f"{style}-s{seed}-p{i:03d}", room_half_extent=half))
    return panos
