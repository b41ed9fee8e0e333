"""Simulator configuration files.

One JSON document with camera, frames, gaze, roi, policy, stabilization,
detector, and cost blocks. Validation errors name the offending field
path. The full schema is documented in docs/simconfig.md; every block is
optional and falls back to the documented defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .policy import PolicyConfig
from .roi import CameraIntrinsics
from .simulate import (
    CostOptions,
    ExternalDetector,
    ModelGaze,
    OffsetGaze,
    OracleDetector,
    RecordedGaze,
    RoiOptions,
    SimOptions,
    StabilizationOptions,
)
from .synthetic import SceneOptions, make_scene


def _load_gaze_model(path: str):
    """A .dwn file or a float .npz training checkpoint."""
    if str(path).endswith(".dwn"):
        from .model_io import import_quantized

        with open(path, "rb") as fh:
            return import_quantized(fh.read())
    from .training import load_checkpoint

    return load_checkpoint(path)[0]


def _attach_fixations(frames, csv_path) -> None:
    """Load a t,u,v CSV and attach fixations to the matching frames."""
    import csv as csv_mod

    table = {}
    with open(csv_path, newline="") as fh:
        reader = csv_mod.DictReader(fh)
        required = {"t", "u", "v"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DataError(
                f"fixation CSV must have columns t,u,v, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                table[int(row["t"])] = (float(row["u"]), float(row["v"]))
            except ValueError as exc:
                raise DataError(f"bad fixation row at line {lineno}: {exc}") from exc
    for frame in frames:
        if frame.t in table:
            frame.fixation = table[frame.t]


def _check(block: dict, path: str, allowed: dict) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown field (allowed: {sorted(allowed)})")
    for key, (typ, pred, desc) in allowed.items():
        if key not in block:
            continue
        val = block[key]
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, typ) or isinstance(val, bool) and typ is not bool:
            raise ConfigError(f"{path}.{key}: expected {desc}, got {val!r}")
        if pred is not None and not pred(val):
            raise ConfigError(f"{path}.{key}: expected {desc}, got {val!r}")


_POS = lambda v: v > 0
_NONNEG = lambda v: v >= 0
_UNIT = lambda v: 0 < v <= 1


@dataclass
class SimBundle:
    """Everything cmd_simulate needs, assembled from one config file."""

    sim: SimOptions
    frames: list
    gaze_source: object
    detector_cfg: dict
    scene: SceneOptions | None

    def make_detector(self, workdir=None):
        block = self.detector_cfg
        if block["kind"] == "oracle":
            return OracleDetector(
                vis_thresh=block.get("vis_thresh", 0.3),
                jitter_px=block.get("jitter_px", 0.0),
                seed=self.sim.seed,
            )
        return ExternalDetector(
            command=block["command"],
            workdir=workdir if workdir is not None else block.get("workdir", "."),
            timeout_s=block.get("timeout_s", 30.0),
        )


def parse_sim_config(doc: dict, seed_override: int | None = None) -> SimBundle:
    if not isinstance(doc, dict):
        raise ConfigError(f"config root: expected an object, got {type(doc).__name__}")
    known = {"seed", "camera", "frames", "gaze", "roi", "policy", "stabilization", "detector", "cost"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level block (allowed: {sorted(known)})")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    if seed_override is not None:
        seed = seed_override

    cam = doc.get("camera", {})
    _check(cam, "camera", {
        "width": (int, _POS, "a positive integer"),
        "height": (int, _POS, "a positive integer"),
        "fov_h_deg": (float, lambda v: 0 < v < 180, "degrees in (0, 180)"),
    })
    intr = CameraIntrinsics(
        width=cam.get("width", 640), height=cam.get("height", 640),
        fov_h_deg=cam.get("fov_h_deg", 90.0),
    )

    fr = doc.get("frames", {"source": "synthetic"})
    source = fr.get("source", "synthetic")
    scene = None
    if source == "synthetic":
        _check(fr, "frames", {
            "source": (str, None, "a string"),
            "count": (int, _POS, "a positive integer"),
            "objects": (int, _POS, "a positive integer"),
            "motion_px": (float, _NONNEG, "a non-negative number"),
            "a_fwd": (float, None, "a number"),
            "yaw_rate": (float, None, "a number"),
            "pitch_rate": (float, None, "a number"),
            "render": (bool, None, "a boolean"),
        })
        scene = SceneOptions(
            width=intr.width, height=intr.height,
            frames=fr.get("count", 30), objects=fr.get("objects", 6),
            motion_px=fr.get("motion_px", 0.0), a_fwd=fr.get("a_fwd", 0.0),
            yaw_rate=fr.get("yaw_rate", 0.0), pitch_rate=fr.get("pitch_rate", 0.0),
            render=fr.get("render", True), seed=seed,
        )
        frames = make_scene(scene)
    elif source == "coco":
        _check(fr, "frames", {
            "source": (str, None, "a string"),
            "annotations": (str, None, "a path string"),
            "images_dir": (str, None, "a path string"),
        })
        if "annotations" not in fr:
            raise ConfigError("frames.annotations: required for source 'coco'")
        from .datasets import load_coco_frames

        frames = load_coco_frames(fr["annotations"], fr.get("images_dir"))
    else:
        raise ConfigError(f"frames.source: expected 'synthetic' or 'coco', got {source!r}")

    gz = doc.get("gaze", {"source": "offset"})
    gsource = gz.get("source", "offset")
    if gsource == "offset":
        _check(gz, "gaze", {
            "source": (str, None, "a string"),
            "sigma_deg": (float, _NONNEG, "a non-negative number"),
            "sigma_px": (float, _NONNEG, "a non-negative number"),
        })
        if "sigma_px" in gz:
            sigma_px = gz["sigma_px"]
        else:
            sigma_deg = gz.get("sigma_deg", 8.3)
            sigma_px = intr.focal * math.tan(math.radians(sigma_deg)) if sigma_deg > 0 else 0.0
        gaze_source = OffsetGaze(sigma_px=sigma_px)
    elif gsource == "recorded":
        _check(gz, "gaze", {
            "source": (str, None, "a string"),
            "fixations": (str, None, "a path string"),
        })
        if "fixations" in gz:
            _attach_fixations(frames, gz["fixations"])
        gaze_source = RecordedGaze()
    elif gsource == "model":
        _check(gz, "gaze", {
            "source": (str, None, "a string"),
            "model": (str, None, "a path string"),
        })
        if "model" not in gz:
            raise ConfigError("gaze.model: required for source 'model'")
        gaze_source = ModelGaze(_load_gaze_model(gz["model"]))
    else:
        raise ConfigError(
            f"gaze.source: expected 'offset', 'recorded', or 'model', got {gsource!r}"
        )

    rb = doc.get("roi", {})
    _check(rb, "roi", {
        "side": (int, _POS, "a positive integer"),
        "hit_probability": (float, lambda v: 0 <= v <= 1, "a number in [0, 1]"),
        "count": (int, _POS, "a positive integer"),
        "theta_max_deg": (float, _POS, "a positive number"),
        "offset_sigma": (float, _NONNEG, "a non-negative number"),
        "nms_iou": (float, lambda v: 0 <= v <= 1, "a number in [0, 1]"),
        "snap_sides": (list, lambda v: v and all(isinstance(s, int) and s > 0 for s in v),
                       "a list of positive integers"),
    })
    snap = tuple(rb.get("snap_sides", (48, 64, 80)))
    theta = rb.get("theta_max_deg", 8.3)
    if "side" in rb:
        side = rb["side"]
    elif "hit_probability" in rb:
        from .roi import roi_side, uncertainty_radius

        _, side = roi_side(rb["hit_probability"], uncertainty_radius(intr, theta), snap)
    else:
        side = 64
    rois = RoiOptions(
        side=side, count=rb.get("count", 1), theta_max_deg=theta,
        offset_sigma=rb.get("offset_sigma"), nms_iou=rb.get("nms_iou", 0.3),
        snap_sides=snap,
    )

    pb = doc.get("policy", {})
    _check(pb, "policy", {
        "lambda": (float, _UNIT, "a number in (0, 1]"),
        "lambda_post": (float, _UNIT, "a number in (0, 1]"),
        "w_min": (float, lambda v: 0 <= v < 1, "a number in [0, 1)"),
        "K": (int, _POS, "a positive integer or omitted for unbounded"),
        "R": (int, _POS, "a positive integer"),
        "B": (float, _POS, "a positive number or omitted for unlimited"),
    })
    pol = PolicyConfig(
        decay=pb.get("lambda", 1.0), post_run_decay=pb.get("lambda_post", 1.0),
        w_min=pb.get("w_min", 0.1), window=pb.get("K"),
        refresh_period=pb.get("R", 1), area_budget=pb.get("B"),
    )

    sb = doc.get("stabilization", {})
    _check(sb, "stabilization", {
        "enabled": (bool, None, "a boolean"),
        "z_min": (float, _POS, "a positive number"),
        "alpha_max": (float, _NONNEG, "a non-negative number"),
        "frame_dt": (float, _POS, "a positive number"),
    })
    stab = StabilizationOptions(
        enabled=sb.get("enabled", False), z_min=sb.get("z_min", 0.5),
        alpha_max=sb.get("alpha_max", 0.2), frame_dt=sb.get("frame_dt", 1.0 / 30.0),
    )

    db = doc.get("detector", {"kind": "oracle"})
    kind = db.get("kind", "oracle")
    if kind == "oracle":
        _check(db, "detector", {
            "kind": (str, None, "a string"),
            "vis_thresh": (float, _UNIT, "a number in (0, 1]"),
            "jitter_px": (float, _NONNEG, "a non-negative number"),
        })
    elif kind == "external":
        _check(db, "detector", {
            "kind": (str, None, "a string"),
            "command": (list, lambda v: v and all(isinstance(c, str) for c in v),
                        "a non-empty list of strings"),
            "workdir": (str, None, "a path string"),
            "timeout_s": (float, _POS, "a positive number"),
        })
        if "command" not in db:
            raise ConfigError("detector.command: required for kind 'external'")
    else:
        raise ConfigError(f"detector.kind: expected 'oracle' or 'external', got {kind!r}")

    cb = doc.get("cost", {})
    _check(cb, "cost", {
        "bytes_per_pixel": (int, _POS, "a positive integer"),
        "roi_metadata_bytes": (int, _NONNEG, "a non-negative integer"),
    })
    cost = CostOptions(
        bytes_per_pixel=cb.get("bytes_per_pixel", 1),
        roi_metadata_bytes=cb.get("roi_metadata_bytes", 16),
    )

    sim = SimOptions(seed=seed, intr=intr, rois=rois, policy=pol,
                     stabilization=stab, cost=cost)
    return SimBundle(sim=sim, frames=frames, gaze_source=gaze_source,
                     detector_cfg=db, scene=scene)


def load_sim_config(path, seed_override: int | None = None) -> SimBundle:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_sim_config(doc, seed_override=seed_override)
