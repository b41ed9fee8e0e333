"""Seeded synthetic data: detection scenes for the simulator and a
blob-coded gaze regression fixture for training, so every test and the
demo run without external datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .roi import Box
from .simulate import FrameRecord, GtBox
from .stabilization import PoseSample

STRATUM_SIDES = {"small": (14, 31), "medium": (36, 90), "large": (100, 150)}


@dataclass(frozen=True)
class SceneOptions:
    width: int = 640
    height: int = 640
    frames: int = 30
    objects: int = 6
    strata: tuple = ("small", "medium", "large")
    motion_px: float = 0.0          # per-frame drift magnitude
    a_fwd: float = 0.0
    yaw_rate: float = 0.0
    pitch_rate: float = 0.0
    frame_dt: float = 1.0 / 30.0
    render: bool = True
    seed: int = 0


def make_scene(opts: SceneOptions) -> list[FrameRecord]:
    """Boxes drawn per stratum drift linearly (bouncing off edges);
    images render them as filled gray rectangles when requested."""
    rng = np.random.default_rng([opts.seed, 4])
    objs = []
    for i in range(opts.objects):
        stratum = opts.strata[i % len(opts.strata)]
        lo, hi = STRATUM_SIDES[stratum]
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        # keep the area inside the stratum even for uneven aspect
        lo_a, hi_a = lo * lo, hi * hi
        if not lo_a <= w * h <= hi_a:
            h = max(lo_a // w, min(hi_a // w, h))
        x = float(rng.uniform(0, opts.width - w))
        y = float(rng.uniform(0, opts.height - h))
        ang = float(rng.uniform(0, 2 * math.pi))
        vx = opts.motion_px * math.cos(ang)
        vy = opts.motion_px * math.sin(ang)
        shade = int(rng.integers(90, 220))
        objs.append([x, y, w, h, vx, vy, shade])

    frames = []
    for t in range(opts.frames):
        gt = []
        image = None
        if opts.render:
            image = np.full((opts.height, opts.width), 40, dtype=np.uint8)
        for obj in objs:
            x, y, w, h, vx, vy, shade = obj
            gt.append(GtBox(box=Box(x, y, float(w), float(h)), cls=0))
            if image is not None:
                x0, y0 = int(round(x)), int(round(y))
                image[max(0, y0) : y0 + h, max(0, x0) : x0 + w] = shade
            # advance with reflection off frame edges
            nx, ny = x + vx, y + vy
            if nx < 0 or nx + w > opts.width:
                obj[4] = -vx
                nx = x
            if ny < 0 or ny + h > opts.height:
                obj[5] = -vy
                ny = y
            obj[0], obj[1] = nx, ny
        pose = PoseSample(
            yaw=((opts.yaw_rate * t * opts.frame_dt) + math.pi) % (2 * math.pi) - math.pi,
            pitch=min(max(opts.pitch_rate * t * opts.frame_dt, -math.pi / 2), math.pi / 2),
            a_fwd=opts.a_fwd,
            timestamp=t * opts.frame_dt,
        )
        frames.append(FrameRecord(t=t, image=image, gt=gt, pose=pose))
    return frames


# ---------------------------------------------------------------------------
# gaze regression fixture

@dataclass(frozen=True)
class GazeFixtureOptions:
    count: int = 6000
    size: int = 56
    theta_max_deg: float = 150.0    # directions up to this polar angle from +z
    blob_sigma: float = 12.0
    noise: float = 0.0
    seed: int = 0


def _fisheye_point(theta: float, phi: float, size: int, theta_max: float) -> tuple[float, float]:
    r_max = size / 2.0 - 6.0
    r = theta / theta_max * r_max
    return size / 2.0 + r * math.cos(phi), size / 2.0 + r * math.sin(phi)


def make_gaze_fixture(opts: GazeFixtureOptions) -> tuple[np.ndarray, np.ndarray]:
    """Images whose three-blob pattern encodes a 3D direction.

    Directions are drawn area-uniformly on the sphere cap of half-angle
    theta_max; the equidistant fisheye position of the direction locates a
    bright primary blob with two dimmer satellites. With directions spread
    over most of the sphere, a constant [0,0,1] predictor scores ~90 deg
    mean error, so learning progress is unambiguous.
    """
    rng = np.random.default_rng([opts.seed, 5])
    s = opts.size
    theta_max = math.radians(opts.theta_max_deg)
    cos_t = rng.uniform(math.cos(theta_max), 1.0, size=opts.count)
    theta = np.arccos(cos_t)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=opts.count)
    sin_t = np.sin(theta)
    targets = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)

    yy, xx = np.mgrid[0:s, 0:s].astype(float)
    images = np.empty((opts.count, s, s))
    sat_sigma = opts.blob_sigma * 2.0 / 3.0
    satellites = ((9.0, 4.0, 0.9, sat_sigma), (-6.0, -8.0, 0.9, sat_sigma))
    for i in range(opts.count):
        u, v = _fisheye_point(float(theta[i]), float(phi[i]), s, theta_max)
        img = np.full((s, s), -0.7)
        for du, dv, amp, sigma in ((0.0, 0.0, 1.6, opts.blob_sigma), *satellites):
            d2 = (xx - (u + du)) ** 2 + (yy - (v + dv)) ** 2
            img += amp * np.exp(-d2 / (2.0 * sigma**2))
        if opts.noise > 0:
            img += rng.normal(0.0, opts.noise, size=(s, s))
        images[i] = np.clip(img, -1.0, 1.0)
    return images, targets


def write_gaze_dataset(out_dir, images: np.ndarray, targets: np.ndarray, subjects=None) -> None:
    """Materialize a fixture as PGM files plus index.csv
    (columns path,gx,gy,gz,subject), the on-disk training layout."""
    import csv
    import os

    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    n = images.shape[0]
    if subjects is None:
        subjects = [f"p{i % 3:02d}" for i in range(n)]
    with open(os.path.join(out_dir, "index.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "gx", "gy", "gz", "subject"])
        for i in range(n):
            name = f"img_{i:05d}.pgm"
            u8 = np.clip(np.round((images[i] + 1.0) * 127.5), 0, 255).astype(np.uint8)
            Image.fromarray(u8, mode="L").save(os.path.join(out_dir, name))
            writer.writerow(
                [name, repr(float(targets[i, 0])), repr(float(targets[i, 1])),
                 repr(float(targets[i, 2])), subjects[i]]
            )
