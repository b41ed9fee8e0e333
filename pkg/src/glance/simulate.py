"""Frame-sequence simulator: gaze -> ROIs -> policy -> mosaic -> detector.

The detector is a port. The bundled oracle emits the visible part of each
ground-truth box whose mask coverage clears a visibility threshold, which
makes recoverability measurable without any detector weights; an external
detector can be attached over a file-based protocol. Accuracy counts a
ground truth as recovered when any detection reaches IoU >= 0.3,
class-independent, stratified by object area at the 32^2 and 96^2
boundaries. Costs are accounted in digitized pixels and transmitted
bytes against a full-frame baseline.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field, replace

import numpy as np

from . import policy as policy_mod
from . import roi as roi_mod
from . import stabilization as stab_mod
from .errors import ConfigError, DataError, DetectorError, GazeAwayError
from .policy import PolicyConfig, TemporalState
from .roi import Box, CameraIntrinsics, Fixation, Mosaic, RegionMask, Roi
from .stabilization import PoseSample

IOU_HIT = 0.3
STRATA = ("small", "medium", "large")
SMALL_MAX_AREA = 32 * 32
MEDIUM_MAX_AREA = 96 * 96


# ---------------------------------------------------------------------------
# records

@dataclass(frozen=True)
class GtBox:
    box: Box
    cls: int = 0


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    cls: int = 0


@dataclass
class FrameRecord:
    t: int
    image: np.ndarray | None = None
    gt: list[GtBox] = field(default_factory=list)
    gaze: np.ndarray | None = None          # unit direction, optional
    fixation: tuple[float, float] | None = None
    pose: PoseSample | None = None
    eye_image: np.ndarray | None = None


def size_stratum(gt: GtBox | Box) -> str:
    area = gt.area if isinstance(gt, Box) else gt.box.area
    if area <= 0:
        raise DataError(f"ground-truth box must have positive area, got {area}")
    if area < SMALL_MAX_AREA:
        return "small"
    if area < MEDIUM_MAX_AREA:
        return "medium"
    return "large"


def accuracy(detections: list[Box], gt_boxes: list[Box], iou_thresh: float = IOU_HIT) -> float | None:
    """Fraction of ground truths matched by any detection at the IoU
    threshold; None when there is no ground truth."""
    if not gt_boxes:
        return None
    hits = sum(1 for g in gt_boxes if any(d.iou(g) >= iou_thresh for d in detections))
    return hits / len(gt_boxes)


# ---------------------------------------------------------------------------
# gaze sources

class RecordedGaze:
    """Replays pre-recorded fixations (or frame-attached gaze vectors)."""

    def fixation_for(self, frame: FrameRecord, intr: CameraIntrinsics, seed: int) -> Fixation:
        if frame.fixation is not None:
            u, v = frame.fixation
            return Fixation(float(u), float(v))
        if frame.gaze is not None:
            return roi_mod.project_gaze(frame.gaze, intr)
        raise DataError(f"frame {frame.t} carries neither a fixation nor a gaze vector")


class OffsetGaze:
    """Reproducible gaze prior: the center of an attended ground-truth box
    plus seeded Gaussian pixel noise emulating angular error.

    The per-frame draw depends only on (seed, t), so sweeps over ROI count
    and side see identical fixations.
    """

    def __init__(self, sigma_px: float):
        self.sigma_px = sigma_px

    def fixation_for(self, frame: FrameRecord, intr: CameraIntrinsics, seed: int) -> Fixation:
        rng = np.random.default_rng([seed, frame.t, 0])
        if frame.gt:
            target = frame.gt[frame.t % len(frame.gt)].box
            u = target.x + target.w / 2.0
            v = target.y + target.h / 2.0
        else:
            u, v = intr.cx, intr.cy
        du, dv = rng.normal(0.0, self.sigma_px, size=2)
        return Fixation(
            min(max(u + du, 0.0), float(intr.width)),
            min(max(v + dv, 0.0), float(intr.height)),
        )


class ModelGaze:
    """Runs a gaze estimator on the frame's eye image and projects it.

    Accepts a float GazeModel or a parsed quantized model.
    """

    def __init__(self, model):
        from .model_io import QuantizedModel

        if isinstance(model, QuantizedModel):
            model = model.dequantize()
        self.model = model

    def fixation_for(self, frame: FrameRecord, intr: CameraIntrinsics, seed: int) -> Fixation:
        if frame.eye_image is None:
            raise DataError(f"frame {frame.t} has no eye image for model-driven gaze")
        from . import dwn

        ghat = dwn.infer_hard(self.model, frame.eye_image)
        return roi_mod.project_gaze(ghat, intr)


# ---------------------------------------------------------------------------
# detectors

def _project_to_canvas(box: Box, placements) -> list[Box]:
    """Frame box -> canvas pieces (the inverse of backproject)."""
    pieces = []
    for p in placements:
        ix0 = max(box.x, p.src.x0)
        iy0 = max(box.y, p.src.y0)
        ix1 = min(box.x1, p.src.x1)
        iy1 = min(box.y1, p.src.y1)
        if ix1 <= ix0 or iy1 <= iy0:
            continue
        dx = p.dst.x0 - p.src.x0
        dy = p.dst.y0 - p.src.y0
        pieces.append(Box(ix0 + dx, iy0 + dy, ix1 - ix0, iy1 - iy0))
    return pieces


class OracleDetector:
    """Ground-truth-backed stand-in detector.

    Emits the visible portion of every ground truth whose fraction of area
    inside the attended mask reaches vis_thresh, scored by that fraction.
    Boxes are returned in canvas coordinates, split across placements, so
    the back-projection path is exercised like with a real detector.
    """

    def __init__(self, vis_thresh: float = 0.3, jitter_px: float = 0.0, seed: int = 0):
        if not 0.0 < vis_thresh <= 1.0:
            raise ConfigError(f"vis_thresh must be in (0, 1], got {vis_thresh}")
        self.vis_thresh = vis_thresh
        self.jitter_px = jitter_px
        self.seed = seed

    def detect(self, mosaic: Mosaic, frame: FrameRecord) -> list[Detection]:
        rng = np.random.default_rng([self.seed, frame.t, 3])
        out: list[Detection] = []
        for gt in frame.gt:
            g = gt.box
            grect = roi_mod.Rect(
                int(np.floor(g.x)), int(np.floor(g.y)),
                int(np.ceil(g.x1)), int(np.ceil(g.y1)),
            )
            inter = mosaic.mask.intersection_area(grect)
            vis = inter / grect.area if grect.area > 0 else 0.0
            if vis < self.vis_thresh:
                continue
            bbox = mosaic.mask.intersection_bbox(grect)
            if bbox is None:
                continue
            visible = Box.from_rect(bbox)
            if self.jitter_px > 0:
                dx, dy = rng.normal(0.0, self.jitter_px, size=2)
                visible = Box(visible.x + dx, visible.y + dy, visible.w, visible.h)
            for piece in _project_to_canvas(visible, mosaic.placements):
                out.append(Detection(box=piece, score=float(vis), cls=gt.cls))
        return out


class ExternalDetector:
    """Subprocess detector over the file protocol.

    Per frame, a work directory receives ``mosaic.png`` and
    ``placements.json``; the command is invoked with that directory as its
    last argument and must write ``detections.json``: a list of
    {"box": [x, y, w, h], "score": s, "class": c} in canvas coordinates.
    """

    def __init__(self, command: list[str], workdir, timeout_s: float = 30.0):
        if not command:
            raise ConfigError("external detector needs a non-empty command")
        self.command = list(command)
        self.workdir = workdir
        self.timeout_s = timeout_s

    def detect(self, mosaic: Mosaic, frame: FrameRecord) -> list[Detection]:
        import os

        frame_dir = os.path.join(str(self.workdir), f"frame_{frame.t:06d}")
        os.makedirs(frame_dir, exist_ok=True)
        png = os.path.join(frame_dir, "mosaic.png")
        sidecar = os.path.join(frame_dir, "placements.json")
        roi_mod.write_mosaic(mosaic, png, sidecar)
        try:
            proc = subprocess.run(
                self.command + [frame_dir],
                capture_output=True, timeout=self.timeout_s, text=True,
            )
        except subprocess.TimeoutExpired as exc:
            raise DetectorError(f"frame {frame.t}: detector timed out after {self.timeout_s}s") from exc
        if proc.returncode != 0:
            raise DetectorError(
                f"frame {frame.t}: detector exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        det_path = os.path.join(frame_dir, "detections.json")
        try:
            with open(det_path) as fh:
                raw = json.load(fh)
            return [
                Detection(
                    box=Box(*map(float, d["box"])),
                    score=float(d.get("score", 0.0)),
                    cls=int(d.get("class", 0)),
                )
                for d in raw
            ]
        except FileNotFoundError as exc:
            raise DetectorError(f"frame {frame.t}: detector wrote no detections.json") from exc
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DetectorError(f"frame {frame.t}: malformed detector response: {exc}") from exc


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class RoiOptions:
    side: int = 64
    count: int = 1
    theta_max_deg: float = 8.3
    offset_sigma: float | None = None     # None: e/2 from theta_max
    nms_iou: float = 0.3
    snap_sides: tuple = roi_mod.DEFAULT_SNAP_SIDES

    def sigma(self, intr: CameraIntrinsics) -> float:
        if self.offset_sigma is not None:
            return self.offset_sigma
        return roi_mod.uncertainty_radius(intr, self.theta_max_deg) / 2.0


@dataclass(frozen=True)
class StabilizationOptions:
    enabled: bool = False
    z_min: float = 0.5
    alpha_max: float = 0.2
    frame_dt: float = 1.0 / 30.0


@dataclass(frozen=True)
class CostOptions:
    bytes_per_pixel: int = 1
    roi_metadata_bytes: int = 16


@dataclass(frozen=True)
class SimOptions:
    seed: int = 0
    intr: CameraIntrinsics = None
    rois: RoiOptions = RoiOptions()
    policy: PolicyConfig = PolicyConfig()
    stabilization: StabilizationOptions = StabilizationOptions()
    cost: CostOptions = CostOptions()
    full_frame: bool = False               # baseline mode: mask = whole frame


# ---------------------------------------------------------------------------
# trace and report

@dataclass
class FrameTrace:
    t: int
    fixation: tuple[float, float] | None
    n_proposals: int
    union_area: int
    refreshed: bool
    mosaic_area: int | None
    detections: list[dict]
    failed: bool
    orphans: int
    gaze_away: bool

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "fixation": list(self.fixation) if self.fixation else None,
            "n_proposals": self.n_proposals,
            "union_area": self.union_area,
            "refreshed": self.refreshed,
            "mosaic_area": self.mosaic_area,
            "detections": self.detections,
            "failed": self.failed,
            "orphans": self.orphans,
            "gaze_away": self.gaze_away,
        }


@dataclass
class RunReport:
    seed: int
    frames: int
    refresh_count: int
    detector_runs: int
    failures: list
    accuracy: dict
    gt_counts: dict
    mean_mosaic_area: float | None
    pixels_processed: int
    bytes_tx: int
    baseline_pixels: int
    baseline_bytes: int
    area_reduction_ratio: float | None
    comm_reduction_ratio: float | None
    area_saving_frac: float | None
    trace: list[FrameTrace]

    def to_dict(self, include_trace: bool = False) -> dict:
        out = {
            "seed": self.seed,
            "frames": self.frames,
            "refresh_count": self.refresh_count,
            "detector_runs": self.detector_runs,
            "failures": self.failures,
            "accuracy": self.accuracy,
            "gt_counts": self.gt_counts,
            "mean_mosaic_area": self.mean_mosaic_area,
            "pixels_processed": self.pixels_processed,
            "bytes_tx": self.bytes_tx,
            "baseline_pixels": self.baseline_pixels,
            "baseline_bytes": self.baseline_bytes,
            "area_reduction_ratio": self.area_reduction_ratio,
            "comm_reduction_ratio": self.comm_reduction_ratio,
            "area_saving_frac": self.area_saving_frac,
        }
        if include_trace:
            out["trace"] = [t.to_dict() for t in self.trace]
        return out

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.to_dict(include_trace=include_trace), sort_keys=True, indent=2)


def cost_model(trace: list[FrameTrace], cost: CostOptions, intr: CameraIntrinsics) -> dict:
    """Digitized pixels and transmitted bytes versus a full-frame baseline.

    Every frame ships per-ROI metadata; frames with a detector run ship
    the mosaic pixels once.
    """
    frames = len(trace)
    pixels = sum(t.mosaic_area for t in trace if t.mosaic_area is not None)
    meta = sum(t.n_proposals for t in trace) * cost.roi_metadata_bytes
    bytes_tx = pixels * cost.bytes_per_pixel + meta
    baseline_pixels = frames * intr.width * intr.height
    baseline_bytes = baseline_pixels * cost.bytes_per_pixel
    return {
        "pixels_processed": pixels,
        "bytes_tx": bytes_tx,
        "baseline_pixels": baseline_pixels,
        "baseline_bytes": baseline_bytes,
        "area_reduction_ratio": baseline_pixels / pixels if pixels else None,
        "comm_reduction_ratio": baseline_bytes / bytes_tx if bytes_tx else None,
        "area_saving_frac": 1.0 - pixels / baseline_pixels if baseline_pixels else None,
    }


# ---------------------------------------------------------------------------
# the frame loop

def run_sequence(frames: list[FrameRecord], gaze_source, detector, sim: SimOptions) -> RunReport:
    """Drive the full pipeline over a frame sequence.

    Per frame: fixation -> proposals -> NMS -> spatial union -> temporal
    update -> stabilization -> refresh test -> mosaic -> detect ->
    back-project -> post-run decay. Detector failures mark the frame and
    continue. Deterministic for fixed seeds.
    """
    if not frames:
        raise DataError("empty frame sequence")
    intr = sim.intr
    if intr is None:
        raise ConfigError("simulation needs camera intrinsics")
    state = TemporalState(config=sim.policy, width=intr.width, height=intr.height)
    trace: list[FrameTrace] = []
    failures = []
    hit_counts = {s: 0 for s in STRATA}
    gt_counts = {s: 0 for s in STRATA}
    prev_pose: PoseSample | None = None
    sigma = None if sim.full_frame else sim.rois.sigma(intr)

    for frame in frames:
        gaze_away = False
        fixation = None
        if sim.full_frame:
            proposals = [Roi(cx=intr.width / 2.0, cy=intr.height / 2.0,
                             side=float(max(intr.width, intr.height)), born_t=frame.t)]
        else:
            try:
                fixation = gaze_source.fixation_for(frame, intr, sim.seed)
            except GazeAwayError:
                gaze_away = True
                proposals = []
            else:
                proposals = roi_mod.propose_rois(
                    fixation, sim.rois.side, sim.rois.count,
                    intr.width, intr.height, sigma,
                    rng=np.random.default_rng([sim.seed, frame.t, 1]),
                    born_t=frame.t,
                )
                proposals = roi_mod.roi_nms(proposals, sim.rois.nms_iou)

        state = policy_mod.temporal_update(state, proposals)

        if sim.stabilization.enabled and frame.pose is not None:
            state = _stabilize(state, prev_pose, frame.pose, intr, sim)
        if frame.pose is not None:
            prev_pose = frame.pose

        union_area = state.union_area()  # the value the refresh rule sees
        refreshed = policy_mod.should_refresh(state)
        mosaic_area = None
        det_dicts: list[dict] = []
        frame_boxes: list[Box] = []
        failed = False
        orphans = 0
        if refreshed:
            mask = state.union_mask()
            mosaic = roi_mod.build_mosaic(frame.image, mask)
            if mosaic is not None:
                mosaic_area = mosaic.area
                try:
                    dets = detector.detect(mosaic, frame)
                except DetectorError as exc:
                    failed = True
                    failures.append({"t": frame.t, "error": str(exc)})
                else:
                    for det in dets:
                        boxes, orphan = roi_mod.backproject(det.box, mosaic.placements)
                        if orphan:
                            orphans += 1
                            continue
                        for b in boxes:
                            frame_boxes.append(b)
                            det_dicts.append(
                                {"box": [b.x, b.y, b.w, b.h], "score": det.score, "class": det.cls}
                            )
                state = policy_mod.decay_after_run(state)

        for gt in frame.gt:
            stratum = size_stratum(gt)
            gt_counts[stratum] += 1
            if any(b.iou(gt.box) >= IOU_HIT for b in frame_boxes):
                hit_counts[stratum] += 1

        trace.append(
            FrameTrace(
                t=frame.t,
                fixation=(fixation.u, fixation.v) if fixation else None,
                n_proposals=len(proposals),
                union_area=union_area,
                refreshed=refreshed,
                mosaic_area=mosaic_area,
                detections=det_dicts,
                failed=failed,
                orphans=orphans,
                gaze_away=gaze_away,
            )
        )

    acc = {}
    for s in STRATA:
        acc[s] = hit_counts[s] / gt_counts[s] if gt_counts[s] else None
    total_gt = sum(gt_counts.values())
    acc["all"] = sum(hit_counts.values()) / total_gt if total_gt else None

    metrics = policy_mod.policy_metrics(trace)
    costs = cost_model(trace, sim.cost, intr)
    return RunReport(
        seed=sim.seed,
        frames=len(frames),
        refresh_count=metrics.refresh_count,
        detector_runs=sum(1 for t in trace if t.mosaic_area is not None),
        failures=failures,
        accuracy=acc,
        gt_counts=gt_counts,
        mean_mosaic_area=metrics.mean_mosaic_area,
        trace=trace,
        **costs,
    )


def _stabilize(state: TemporalState, prev_pose, pose, intr, sim: SimOptions) -> TemporalState:
    """Reproject stale regions for the pose delta, then apply the
    motion-driven inflation bound under the policy's area budget."""
    regions = []
    for r in state.regions:
        if prev_pose is not None and r.born_t < state.t:
            r2, visible = stab_mod.reproject_roi(r, prev_pose, pose, intr)
            if not visible:
                continue
            r = r2
        regions.append(r)
    alpha = stab_mod.inflation_alpha(
        pose.a_fwd, sim.stabilization.frame_dt, sim.stabilization.z_min, sim.stabilization.alpha_max
    )
    if alpha > 0:
        inflated = []
        for i, r in enumerate(regions):
            others = tuple(inflated) + tuple(regions[i + 1 :])
            inflated.append(
                stab_mod.inflate_roi(
                    r, alpha, intr.width, intr.height,
                    area_budget=state.config.area_budget, other_rois=others,
                )
            )
        regions = inflated
    return replace(state, regions=tuple(regions))


# ---------------------------------------------------------------------------
# (side, count) sweep

def sweep(
    frames: list[FrameRecord],
    gaze_source,
    detector,
    sim: SimOptions,
    sides=(48, 64, 80),
    counts=(1, 2, 3, 4, 5, 10, 15, 20, 25, 30, 40, 50),
) -> dict:
    """Accuracy grid over ROI side and count, plus a full-frame baseline.

    Every cell replays the same frames with the same per-frame random
    draws; only (side, count) vary.
    """
    cells = {}
    for s in sides:
        for n in counts:
            cell_sim = replace(sim, rois=replace(sim.rois, side=int(s), count=int(n)))
            report = run_sequence(frames, gaze_source, detector, cell_sim)
            cells[(int(s), int(n))] = report
    baseline = run_sequence(frames, gaze_source, detector, replace(sim, full_frame=True))
    return {
        "sides": [int(s) for s in sides],
        "counts": [int(n) for n in counts],
        "cells": cells,
        "baseline": baseline,
    }


def sweep_table_rows(result: dict) -> list[list]:
    """Flatten a sweep into CSV rows: stratum, side, one column per count,
    then the full-frame baseline column."""
    rows = [["stratum", "side"] + [f"N={n}" for n in result["counts"]] + ["global"]]
    for stratum in STRATA:
        base = result["baseline"].accuracy[stratum]
        for s in result["sides"]:
            row = [stratum, s]
            for n in result["counts"]:
                a = result["cells"][(s, n)].accuracy[stratum]
                row.append("" if a is None else round(a, 4))
            row.append("" if base is None else round(base, 4))
            rows.append(row)
    return rows
