"""Rotation- and motion-aware ROI stabilization.

Yaw/pitch deltas shift pixel coordinates through the pinhole model; ROIs
are reprojected between detector runs and stitched into an equirectangular
world map tagged by quantized pose. Forward motion inflates ROI sides by
a depth-agnostic bound. A small pose-tagged cache of detection boxes
provides low-latency predictions between runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, NumericsError
from .roi import Box, CameraIntrinsics, Rect, Roi, region_union

SMALL_ANGLE_DEG = 2.0     # below this, tan(d) is taken as d
_TAN_LIMIT = math.radians(89.0)


@dataclass(frozen=True)
class PoseSample:
    """Head orientation and forward acceleration at one instant."""

    yaw: float          # radians, |yaw| <= pi
    pitch: float        # radians, |pitch| <= pi/2
    a_fwd: float = 0.0  # m/s^2
    timestamp: float = 0.0

    def __post_init__(self):
        if abs(self.yaw) > math.pi + 1e-12:
            raise ConfigError(f"|yaw| must be <= pi, got {self.yaw}")
        if abs(self.pitch) > math.pi / 2 + 1e-12:
            raise ConfigError(f"|pitch| must be <= pi/2, got {self.pitch}")


def _tan_shift(delta: float) -> float:
    if abs(delta) >= _TAN_LIMIT:
        raise NumericsError(f"rotation delta {math.degrees(delta):.1f} deg is outside the frame")
    if abs(delta) < math.radians(SMALL_ANGLE_DEG):
        return delta
    return math.tan(delta)


def rotation_shift(d_yaw: float, d_pitch: float, focal: float) -> tuple[float, float]:
    """Pixel shift for a differential rotation: (-f tan(dyaw), -f tan(dpitch)).

    Uses the small-angle form below 2 degrees (sub-millipixel difference
    at desk-scale focal lengths).
    """
    return -focal * _tan_shift(d_yaw), -focal * _tan_shift(d_pitch)


def reproject_roi(
    roi: Roi, pose_old: PoseSample, pose_new: PoseSample, intr: CameraIntrinsics
) -> tuple[Roi, bool]:
    """Shift an ROI center for a pose change; pure rotation keeps the side.

    Returns (clamped ROI, visible). visible is False when the shifted
    square lies fully outside the frame (including tan blow-ups).
    """
    try:
        du, dv = rotation_shift(pose_new.yaw - pose_old.yaw, pose_new.pitch - pose_old.pitch, intr.focal)
    except NumericsError:
        return roi, False
    cx, cy = roi.cx + du, roi.cy + dv
    half = roi.side / 2.0
    visible = not (
        cx + half <= 0 or cx - half >= intr.width or cy + half <= 0 or cy - half >= intr.height
    )
    clamped_cx = min(max(cx, half), intr.width - half) if roi.side <= intr.width else intr.width / 2.0
    clamped_cy = min(max(cy, half), intr.height - half) if roi.side <= intr.height else intr.height / 2.0
    return replace(roi, cx=clamped_cx, cy=clamped_cy), visible


def to_world(u: float, v: float, pose: PoseSample, intr: CameraIntrinsics) -> tuple[float, float]:
    """Pixel to equirectangular world coordinates (lon, lat) in radians."""
    lon = pose.yaw + math.atan((u - intr.cx) / intr.focal)
    lat = pose.pitch + math.atan((v - intr.cy) / intr.focal)
    lon = (lon + math.pi) % (2.0 * math.pi) - math.pi
    lat = min(max(lat, -math.pi / 2.0), math.pi / 2.0)
    return lon, lat


# ---------------------------------------------------------------------------
# world map

@dataclass
class WorldEntry:
    yaw_q: float        # quantized pose tag, degrees
    pitch_q: float
    timestamp: float
    expires_at: float


class WorldMap:
    """Equirectangular panorama of attended regions, tagged and expiring.

    Cells are step_deg x step_deg; each holds the most recent entry.
    """

    def __init__(self, step_deg: float = 1.0):
        if step_deg <= 0:
            raise ConfigError(f"quantization step must be > 0, got {step_deg}")
        self.step_deg = step_deg
        self.cells: dict[tuple[int, int], WorldEntry] = {}

    def _cell(self, lon: float, lat: float) -> tuple[int, int]:
        step = math.radians(self.step_deg)
        return int(math.floor(lon / step)), int(math.floor(lat / step))

    def quantize_pose(self, pose: PoseSample) -> tuple[float, float]:
        q = self.step_deg
        return (
            round(math.degrees(pose.yaw) / q) * q,
            round(math.degrees(pose.pitch) / q) * q,
        )

    def insert_rect(
        self, rect: Rect, pose: PoseSample, intr: CameraIntrinsics,
        timestamp: float, ttl: float,
    ) -> int:
        """Stitch a frame rectangle into the map; returns cells touched.

        Longitude depends only on u and latitude only on v, so the world
        footprint of an axis-aligned rectangle is a lon/lat rectangle.
        """
        lon0, lat0 = to_world(rect.x0, rect.y0, pose, intr)
        lon1, lat1 = to_world(rect.x1, rect.y1, pose, intr)
        c0 = self._cell(min(lon0, lon1), min(lat0, lat1))
        c1 = self._cell(max(lon0, lon1), max(lat0, lat1))
        yaw_q, pitch_q = self.quantize_pose(pose)
        entry = WorldEntry(yaw_q=yaw_q, pitch_q=pitch_q, timestamp=timestamp,
                           expires_at=timestamp + ttl)
        count = 0
        for ci in range(c0[0], c1[0] + 1):
            for cj in range(c0[1], c1[1] + 1):
                self.cells[(ci, cj)] = entry
                count += 1
        return count

    def active_cells(self, now: float) -> list[tuple[int, int]]:
        return sorted(k for k, e in self.cells.items() if e.expires_at > now)

    def prune(self, now: float) -> int:
        stale = [k for k, e in self.cells.items() if e.expires_at <= now]
        for k in stale:
            del self.cells[k]
        return len(stale)


# ---------------------------------------------------------------------------
# motion-aware inflation

def inflation_alpha(a_fwd: float, dt: float, z_min: float, alpha_max: float) -> float:
    """Per-frame isotropic inflation bound min(alpha_max, |a|*dt/z_min).

    Zero for non-forward motion; pure rotation never inflates.
    """
    if z_min <= 0:
        raise ConfigError(f"z_min must be > 0, got {z_min}")
    if dt <= 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    if a_fwd <= 0:
        return 0.0
    return min(alpha_max, abs(a_fwd) * dt / z_min)


def inflate_roi(
    roi: Roi,
    alpha: float,
    width: int,
    height: int,
    area_budget: float | None = None,
    other_rois: tuple[Roi, ...] = (),
) -> Roi:
    """Grow the side by (1 + alpha) around a fixed center.

    The footprint clamps to the frame. Under an area budget the inflation
    is best-effort: it shrinks back (never below the original side) until
    the union with the other regions fits.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")

    def union_area(a: float) -> int:
        rects = [r.rect(width, height) for r in other_rois]
        rects.append(replace(roi, side=roi.side * (1.0 + a)).rect(width, height))
        return region_union(rects).total_area

    if area_budget is None or union_area(alpha) <= area_budget:
        return replace(roi, side=roi.side * (1.0 + alpha))
    if union_area(0.0) >= area_budget:
        return roi
    lo, hi = 0.0, alpha
    for _ in range(40):
        mid = (lo + hi) / 2.0
        if union_area(mid) <= area_budget:
            lo = mid
        else:
            hi = mid
    return replace(roi, side=roi.side * (1.0 + lo))


# ---------------------------------------------------------------------------
# pose-tagged box cache

@dataclass
class CachedBox:
    box: Box
    pose: PoseSample
    timestamp: float
    ttl: float


class BoxCache:
    """Recent detection boxes with pose tags and motion-scaled expiry.

    Faster rotation shortens the time-to-live: ttl = t_max / (1 + beta*|omega|).
    """

    def __init__(self, t_max: float = 1.0, beta: float = 1.0):
        if t_max <= 0 or beta < 0:
            raise ConfigError(f"need t_max > 0 and beta >= 0, got {t_max}, {beta}")
        self.t_max = t_max
        self.beta = beta
        self.entries: list[CachedBox] = []

    def ttl_for(self, omega_mag: float) -> float:
        return self.t_max / (1.0 + self.beta * abs(omega_mag))

    def add(self, box: Box, pose: PoseSample, timestamp: float, omega_mag: float = 0.0) -> None:
        self.entries.append(
            CachedBox(box=box, pose=pose, timestamp=timestamp, ttl=self.ttl_for(omega_mag))
        )

    def predict(self, pose_now: PoseSample, now: float, intr: CameraIntrinsics) -> list[Box]:
        """Unexpired boxes translated by the rotation since they were cached."""
        out = []
        for e in self.entries:
            if now >= e.timestamp + e.ttl:
                continue
            try:
                du, dv = rotation_shift(
                    pose_now.yaw - e.pose.yaw, pose_now.pitch - e.pose.pitch, intr.focal
                )
            except NumericsError:
                continue
            out.append(Box(e.box.x + du, e.box.y + dv, e.box.w, e.box.h))
        return out

    def prune(self, now: float) -> int:
        before = len(self.entries)
        self.entries = [e for e in self.entries if now < e.timestamp + e.ttl]
        return before - len(self.entries)


def cache_predict(cache: BoxCache, pose_now: PoseSample, now: float, intr: CameraIntrinsics) -> list[Box]:
    return cache.predict(pose_now, now, intr)


# ---------------------------------------------------------------------------
# IMU traces

def load_imu_csv(path) -> list[PoseSample]:
    """CSV columns t,yaw,pitch,a_fwd in seconds, radians, m/s^2."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"t", "yaw", "pitch", "a_fwd"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(f"IMU CSV must have columns {sorted(required)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                samples.append(
                    PoseSample(
                        yaw=float(row["yaw"]), pitch=float(row["pitch"]),
                        a_fwd=float(row["a_fwd"]), timestamp=float(row["t"]),
                    )
                )
            except (ValueError, ConfigError) as exc:
                raise DataError(f"bad IMU row at line {lineno}: {exc}") from exc
    return samples


def synth_imu_trace(
    frames: int,
    dt: float = 1.0 / 30.0,
    yaw_rate: float = 0.0,
    pitch_rate: float = 0.0,
    a_fwd: float = 0.0,
    noise: float = 0.0,
    seed: int = 0,
) -> list[PoseSample]:
    """Seeded constant-rate trace with optional Gaussian angle noise."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(frames):
        t = i * dt
        jy, jp = (rng.normal(0.0, noise, size=2) if noise > 0 else (0.0, 0.0))
        yaw = ((yaw_rate * t + jy) + math.pi) % (2 * math.pi) - math.pi
        pitch = min(max(pitch_rate * t + jp, -math.pi / 2), math.pi / 2)
        out.append(PoseSample(yaw=yaw, pitch=pitch, a_fwd=a_fwd, timestamp=t))
    return out
