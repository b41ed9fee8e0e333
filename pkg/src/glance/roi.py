"""Gaze-to-ROI geometry: fixation projection, uncertainty-driven sizing,
proposal generation, exact rectangle unions, mosaic packing, and detection
back-projection.

Region masks are kept as canonical disjoint decompositions of integer
pixel rectangles, so areas and intersections are exact and independent of
insertion order. Detection boxes stay float.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GazeAwayError

DEFAULT_SNAP_SIDES = (48, 64, 80)
MIN_GAZE_Z = 0.05


# ---------------------------------------------------------------------------
# primitives

@dataclass(frozen=True)
class Rect:
    """Half-open integer pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return max(0, self.width) * max(0, self.height)

    def is_empty(self) -> bool:
        return self.x1 <= self.x0 or self.y1 <= self.y0

    def intersect(self, other: "Rect") -> "Rect":
        return Rect(
            max(self.x0, other.x0), max(self.y0, other.y0),
            min(self.x1, other.x1), min(self.y1, other.y1),
        )

    def translate(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(frozen=True)
class Box:
    """Float box (x, y, w, h); the wire format for detections."""

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return max(0.0, self.w) * max(0.0, self.h)

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    def iou(self, other: "Box") -> float:
        ix = min(self.x1, other.x1) - max(self.x, other.x)
        iy = min(self.y1, other.y1) - max(self.y, other.y)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    @classmethod
    def from_rect(cls, r: Rect) -> "Box":
        return cls(float(r.x0), float(r.y0), float(r.width), float(r.height))


@dataclass(frozen=True)
class Roi:
    """Axis-aligned square proposal centered at (cx, cy)."""

    cx: float
    cy: float
    side: float
    weight: float = 1.0
    born_t: int = 0

    def rect(self, width: int, height: int) -> Rect:
        """Integer pixel footprint clamped inside a width x height frame."""
        w = max(1, min(int(round(self.side)), width))
        h = max(1, min(int(round(self.side)), height))
        x0 = int(round(self.cx - self.side / 2.0))
        y0 = int(round(self.cy - self.side / 2.0))
        x0 = min(max(x0, 0), width - w)
        y0 = min(max(y0, 0), height - h)
        return Rect(x0, y0, x0 + w, y0 + h)

    def iou(self, other: "Roi") -> float:
        a = Box(self.cx - self.side / 2, self.cy - self.side / 2, self.side, self.side)
        b = Box(other.cx - other.side / 2, other.cy - other.side / 2, other.side, other.side)
        return a.iou(b)


# ---------------------------------------------------------------------------
# camera model

@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fov_h_deg: float
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if not 0.0 < self.fov_h_deg < 180.0:
            raise ConfigError(f"horizontal FOV must be in (0, 180) degrees, got {self.fov_h_deg}")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    @property
    def focal(self) -> float:
        return focal_length(self.width, self.fov_h_deg)


def focal_length(width: int, fov_h_deg: float) -> float:
    """Pinhole focal length in pixels: W / (2 tan(FOV/2))."""
    if not 0.0 < fov_h_deg < 180.0:
        raise ConfigError(f"horizontal FOV must be in (0, 180) degrees, got {fov_h_deg}")
    return width / (2.0 * math.tan(math.radians(fov_h_deg) / 2.0))


@dataclass(frozen=True)
class Fixation:
    u: float
    v: float
    out_of_frame: bool = False


def project_gaze(ghat: np.ndarray, intr: CameraIntrinsics) -> Fixation:
    """Pinhole projection of a unit gaze direction (+z toward the plane).

    The returned point is clamped to the frame; ``out_of_frame`` records
    whether clamping moved it. Raises GazeAwayError when g_z <= 0.05.
    """
    gx, gy, gz = (float(c) for c in ghat)
    if gz <= MIN_GAZE_Z:
        raise GazeAwayError(f"gaze points away from the image plane (g_z = {gz:.4f})")
    f = intr.focal
    u = intr.cx + f * gx / gz
    v = intr.cy + f * gy / gz
    cu = min(max(u, 0.0), float(intr.width))
    cv = min(max(v, 0.0), float(intr.height))
    return Fixation(cu, cv, out_of_frame=(cu != u or cv != v))


def uncertainty_radius(intr: CameraIntrinsics, theta_max_deg: float) -> float:
    """Image-plane deviation of two rays separated by theta_max: f tan(theta)."""
    if not 0.0 < theta_max_deg < intr.fov_h_deg / 2.0:
        raise ConfigError(
            f"theta_max must be in (0, FOV/2) = (0, {intr.fov_h_deg / 2}), got {theta_max_deg}"
        )
    return intr.focal * math.tan(math.radians(theta_max_deg))


def roi_side(p: float, e: float, snap_sides=DEFAULT_SNAP_SIDES) -> tuple[float, int]:
    """Side length 2*e*p for hit probability p, plus the snapped side.

    Snaps to the nearest allowed side, ties toward the larger one; p = 0
    degenerates to the smallest allowed side.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"hit probability must be in [0, 1], got {p}")
    raw = 2.0 * e * p
    snapped = min(sorted(snap_sides, reverse=True), key=lambda s: abs(s - raw))
    return raw, int(snapped)


# ---------------------------------------------------------------------------
# proposals

def propose_rois(
    fixation: Fixation,
    side: float,
    count: int,
    width: int,
    height: int,
    offset_sigma: float,
    rng: np.random.Generator | int,
    born_t: int = 0,
) -> list[Roi]:
    """One ROI at the fixation plus count-1 at seeded Gaussian offsets.

    Offsets are drawn sequentially, so for a fixed generator state the
    first N proposals of a larger request are exactly the smaller request.
    Centers are clamped so each square stays inside the frame.
    """
    if count < 1:
        raise ConfigError(f"proposal count must be >= 1, got {count}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))

    def clamp_center(cx: float, cy: float) -> tuple[float, float]:
        half = side / 2.0
        cx = min(max(cx, half), width - half) if side <= width else width / 2.0
        cy = min(max(cy, half), height - half) if side <= height else height / 2.0
        return cx, cy

    cx, cy = clamp_center(fixation.u, fixation.v)
    rois = [Roi(cx=cx, cy=cy, side=float(side), weight=1.0, born_t=born_t)]
    for _ in range(count - 1):
        dx, dy = rng.normal(0.0, offset_sigma, size=2)
        ox, oy = clamp_center(fixation.u + dx, fixation.v + dy)
        rois.append(Roi(cx=ox, cy=oy, side=float(side), weight=1.0, born_t=born_t))
    return rois


def roi_nms(rois: list[Roi], iou_thresh: float) -> list[Roi]:
    """Greedy suppression by weight, then recency; kept set has pairwise
    IoU <= iou_thresh. Stable for equal keys, so appending proposals never
    changes earlier keep/drop decisions."""
    order = sorted(range(len(rois)), key=lambda i: (-rois[i].weight, -rois[i].born_t, i))
    kept: list[Roi] = []
    for i in order:
        cand = rois[i]
        if all(cand.iou(k) <= iou_thresh for k in kept):
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# exact rectangle unions

@dataclass(frozen=True)
class RegionMask:
    """Canonical disjoint decomposition of a union of pixel rectangles."""

    rects: tuple[Rect, ...]
    total_area: int

    def is_empty(self) -> bool:
        return not self.rects

    def bbox(self) -> Rect | None:
        if not self.rects:
            return None
        return Rect(
            min(r.x0 for r in self.rects), min(r.y0 for r in self.rects),
            max(r.x1 for r in self.rects), max(r.y1 for r in self.rects),
        )

    def intersection_area(self, rect: Rect) -> int:
        return sum(r.intersect(rect).area for r in self.rects)

    def intersection_bbox(self, rect: Rect) -> Rect | None:
        pieces = [r.intersect(rect) for r in self.rects]
        pieces = [p for p in pieces if not p.is_empty()]
        if not pieces:
            return None
        return Rect(
            min(p.x0 for p in pieces), min(p.y0 for p in pieces),
            max(p.x1 for p in pieces), max(p.y1 for p in pieces),
        )

    def contains_point(self, x: float, y: float) -> bool:
        return any(r.x0 <= x < r.x1 and r.y0 <= y < r.y1 for r in self.rects)


def region_union(rects) -> RegionMask:
    """Exact union via coordinate compression; order independent."""
    rects = [r for r in rects if not r.is_empty()]
    if not rects:
        return RegionMask(rects=(), total_area=0)
    xs = sorted({r.x0 for r in rects} | {r.x1 for r in rects})
    ys = sorted({r.y0 for r in rects} | {r.y1 for r in rects})
    nx, ny = len(xs) - 1, len(ys) - 1
    covered = np.zeros((ny, nx), dtype=bool)
    for r in rects:
        i0 = bisect.bisect_left(xs, r.x0)
        i1 = bisect.bisect_left(xs, r.x1)
        j0 = bisect.bisect_left(ys, r.y0)
        j1 = bisect.bisect_left(ys, r.y1)
        covered[j0:j1, i0:i1] = True

    def band_runs(j: int) -> tuple[tuple[int, int], ...]:
        runs = []
        i = 0
        while i < nx:
            if covered[j, i]:
                start = i
                while i < nx and covered[j, i]:
                    i += 1
                runs.append((xs[start], xs[i]))
            else:
                i += 1
        return tuple(runs)

    out: list[Rect] = []
    j = 0
    while j < ny:
        runs = band_runs(j)
        j2 = j + 1
        while j2 < ny and band_runs(j2) == runs:
            j2 += 1
        for x0, x1 in runs:
            out.append(Rect(x0, ys[j], x1, ys[j2]))
        j = j2
    total = sum(r.area for r in out)
    return RegionMask(rects=tuple(out), total_area=total)


def spatial_union(rois: list[Roi], width: int, height: int) -> RegionMask:
    """Union of the ROIs' clamped pixel footprints."""
    return region_union(r.rect(width, height) for r in rois)


def masks_equal(a: RegionMask, b: RegionMask) -> bool:
    """Exact region equality (not decomposition equality)."""
    merged = region_union(list(a.rects) + list(b.rects))
    return a.total_area == merged.total_area == b.total_area


def mask_components(mask: RegionMask) -> list[list[Rect]]:
    """Connected components under edge adjacency (positive-length contact)."""
    rects = list(mask.rects)
    n = len(rects)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def adjacent(a: Rect, b: Rect) -> bool:
        if (a.x1 == b.x0 or b.x1 == a.x0) and min(a.y1, b.y1) > max(a.y0, b.y0):
            return True
        if (a.y1 == b.y0 or b.y1 == a.y0) and min(a.x1, b.x1) > max(a.x0, b.x0):
            return True
        return False

    for i in range(n):
        for j in range(i + 1, n):
            if adjacent(rects[i], rects[j]):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups: dict[int, list[Rect]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(rects[i])
    # deterministic component order: by top-left of the component bbox
    comps = list(groups.values())
    comps.sort(key=lambda g: (min(r.y0 for r in g), min(r.x0 for r in g)))
    return comps


# ---------------------------------------------------------------------------
# mosaic

@dataclass(frozen=True)
class Placement:
    src: Rect   # frame coordinates
    dst: Rect   # canvas coordinates


@dataclass
class Mosaic:
    canvas: np.ndarray | None
    width: int
    height: int
    placements: list[Placement]
    mask: RegionMask

    @property
    def area(self) -> int:
        return self.width * self.height


def _shelf_pack(sizes: list[tuple[int, int]]) -> tuple[list[tuple[int, int]], int, int]:
    """First-fit-decreasing-height shelf packing.

    Tries a few deterministic target widths and keeps the smallest canvas.
    Returns per-input positions plus the trimmed canvas size.
    """
    if not sizes:
        return [], 0, 0
    order = sorted(range(len(sizes)), key=lambda i: (-sizes[i][1], -sizes[i][0], i))
    max_w = max(w for w, _ in sizes)
    total = sum(w * h for w, h in sizes)
    candidates = sorted({max_w, max(max_w, math.ceil(math.sqrt(total))),
                         max(max_w, math.ceil(1.25 * math.sqrt(total)))})

    best = None
    for target in candidates:
        shelves: list[list[int]] = []  # [y, height, used_width]
        pos: list[tuple[int, int] | None] = [None] * len(sizes)
        y_top = 0
        for i in order:
            w, h = sizes[i]
            placed = False
            for shelf in shelves:
                if shelf[2] + w <= target and h <= shelf[1]:
                    pos[i] = (shelf[2], shelf[0])
                    shelf[2] += w
                    placed = True
                    break
            if not placed:
                shelves.append([y_top, h, w])
                pos[i] = (0, y_top)
                y_top += h
        used_w = max(shelf[2] for shelf in shelves)
        area = used_w * y_top
        if best is None or area < best[0]:
            best = (area, pos, used_w, y_top)
    _, pos, canvas_w, canvas_h = best
    return pos, canvas_w, canvas_h


def build_mosaic(frame: np.ndarray | None, mask: RegionMask) -> Mosaic | None:
    """Single detector-ready crop covering the mask.

    Each connected component contributes its bounding rectangle (keeping
    objects that straddle adjacent ROIs contiguous); the rectangles are
    shelf-packed into one canvas. Returns None for an empty mask, which
    callers treat as "skip the detector this frame".
    """
    if mask.is_empty():
        return None
    comps = mask_components(mask)
    srcs = [
        Rect(
            min(r.x0 for r in g), min(r.y0 for r in g),
            max(r.x1 for r in g), max(r.y1 for r in g),
        )
        for g in comps
    ]
    sizes = [(r.width, r.height) for r in srcs]
    pos, canvas_w, canvas_h = _shelf_pack(sizes)
    placements = [
        Placement(src=s, dst=Rect(x, y, x + s.width, y + s.height))
        for s, (x, y) in zip(srcs, pos)
    ]
    canvas = None
    if frame is not None:
        canvas = np.zeros((canvas_h, canvas_w), dtype=frame.dtype)
        for p in placements:
            canvas[p.dst.y0 : p.dst.y1, p.dst.x0 : p.dst.x1] = frame[
                p.src.y0 : p.src.y1, p.src.x0 : p.src.x1
            ]
    return Mosaic(canvas=canvas, width=canvas_w, height=canvas_h,
                  placements=placements, mask=mask)


# ---------------------------------------------------------------------------
# back-projection

_ADJ_EPS = 1e-6


def _boxes_adjacent(a: Box, b: Box) -> bool:
    gap_x = max(a.x, b.x) - min(a.x1, b.x1)
    gap_y = max(a.y, b.y) - min(a.y1, b.y1)
    return gap_x <= _ADJ_EPS and gap_y <= _ADJ_EPS


def _merge_adjacent(boxes: list[Box]) -> list[Box]:
    boxes = list(boxes)
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if _boxes_adjacent(boxes[i], boxes[j]):
                    a, b = boxes[i], boxes[j]
                    lo_x, lo_y = min(a.x, b.x), min(a.y, b.y)
                    hi_x, hi_y = max(a.x1, b.x1), max(a.y1, b.y1)
                    boxes[i] = Box(lo_x, lo_y, hi_x - lo_x, hi_y - lo_y)
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    return boxes


def backproject(box: Box, placements: list[Placement]) -> tuple[list[Box], bool]:
    """Map a canvas-coordinate box back to frame coordinates.

    The box is split per placement it overlaps, translated piecewise, and
    pieces that end up adjacent in the frame are re-merged. Returns
    (boxes, orphaned); an orphan overlaps no placement and is dropped.
    """
    pieces: list[Box] = []
    for p in placements:
        ix0 = max(box.x, p.dst.x0)
        iy0 = max(box.y, p.dst.y0)
        ix1 = min(box.x1, p.dst.x1)
        iy1 = min(box.y1, p.dst.y1)
        if ix1 <= ix0 or iy1 <= iy0:
            continue
        dx = p.src.x0 - p.dst.x0
        dy = p.src.y0 - p.dst.y0
        pieces.append(Box(ix0 + dx, iy0 + dy, ix1 - ix0, iy1 - iy0))
    if not pieces:
        return [], True
    return _merge_adjacent(pieces), False


# ---------------------------------------------------------------------------
# export

def write_mosaic(mosaic: Mosaic, png_path, json_path) -> None:
    """PNG canvas plus the placement sidecar for the external-detector
    protocol: a JSON list of {src: [x,y,w,h], dst: [x,y,w,h]}."""
    from PIL import Image

    if mosaic.canvas is None:
        raise ConfigError("mosaic has no pixel canvas (built without a frame)")
    Image.fromarray(mosaic.canvas.astype(np.uint8), mode="L").save(png_path)
    sidecar = [
        {
            "src": [p.src.x0, p.src.y0, p.src.width, p.src.height],
            "dst": [p.dst.x0, p.dst.y0, p.dst.width, p.dst.height],
        }
        for p in mosaic.placements
    ]
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh)


__all__ = [
    "Rect", "Box", "Roi", "CameraIntrinsics", "Fixation", "RegionMask",
    "Placement", "Mosaic", "focal_length", "project_gaze",
    "uncertainty_radius", "roi_side", "propose_rois", "roi_nms",
    "region_union", "spatial_union", "masks_equal", "mask_components",
    "build_mosaic", "backproject", "write_mosaic", "DEFAULT_SNAP_SIDES",
]
