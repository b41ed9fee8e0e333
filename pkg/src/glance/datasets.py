"""Dataset plumbing: gaze image directories with index.csv, leave-one-
person-out splits, and COCO-style annotation ingestion for users who
bring their own detection data."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .roi import Box
from .simulate import FrameRecord, GtBox

INDEX_COLUMNS = ("path", "gx", "gy", "gz", "subject")


@dataclass
class GazeIndex:
    paths: list[str]
    targets: np.ndarray      # (N, 3), raw (not yet normalized)
    subjects: list[str]

    def __len__(self) -> int:
        return len(self.paths)


def load_index(data_dir) -> GazeIndex:
    """Read index.csv (columns path,gx,gy,gz,subject); errors carry the
    row number."""
    index_path = os.path.join(str(data_dir), "index.csv")
    if not os.path.exists(index_path):
        raise DataError(f"no index.csv in {data_dir}")
    paths, targets, subjects = [], [], []
    with open(index_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != INDEX_COLUMNS:
            raise DataError(f"index.csv row 1: expected header {','.join(INDEX_COLUMNS)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(f"index.csv row {lineno}: expected 5 columns, got {len(row)}")
            try:
                vec = [float(row[1]), float(row[2]), float(row[3])]
            except ValueError as exc:
                raise DataError(f"index.csv row {lineno}: bad gaze vector: {exc}") from exc
            paths.append(row[0])
            targets.append(vec)
            subjects.append(row[4])
    if not paths:
        raise DataError(f"index.csv in {data_dir} lists no samples")
    return GazeIndex(paths=paths, targets=np.array(targets, dtype=float), subjects=subjects)


def load_image(path, input_size: int) -> np.ndarray:
    """Grayscale PGM/PNG -> (S, S) floats in [-1, 1]; LANCZOS resize."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if im.size != (input_size, input_size):
                im = im.resize((input_size, input_size), Image.LANCZOS)
            arr = np.asarray(im, dtype=float)
    except FileNotFoundError as exc:
        raise DataError(f"missing image file {path}") from exc
    return arr / 127.5 - 1.0


@dataclass
class GazeSplit:
    train_images: np.ndarray
    train_targets: np.ndarray
    val_images: np.ndarray
    val_targets: np.ndarray
    holdout: str | None
    subjects: list[str]


def load_gaze_split(data_dir, input_size: int, holdout: str | None = None,
                    val_fraction: float = 0.15, seed: int = 0) -> GazeSplit:
    """Load all images and split for training.

    With a holdout subject, that subject's samples form the validation set
    (leave-one-person-out). Otherwise a seeded random fraction is held out.
    Targets are unit-normalized here.
    """
    from . import dwn

    index = load_index(data_dir)
    if holdout is not None and holdout not in set(index.subjects):
        raise DataError(f"holdout subject {holdout!r} not present in index.csv")
    images = np.stack(
        [load_image(os.path.join(str(data_dir), p), input_size) for p in index.paths]
    )
    targets = np.stack([dwn.normalize_target(t) for t in index.targets])
    if holdout is not None:
        mask = np.array([s == holdout for s in index.subjects])
    else:
        rng = np.random.default_rng([seed, 6])
        mask = rng.random(len(index)) < val_fraction
    if mask.all():
        raise DataError("holdout split leaves no training samples")
    return GazeSplit(
        train_images=images[~mask],
        train_targets=targets[~mask],
        val_images=images[mask],
        val_targets=targets[mask],
        holdout=holdout,
        subjects=sorted(set(index.subjects)),
    )


def load_coco_frames(annotation_path, images_dir=None) -> list[FrameRecord]:
    """COCO-subset ingestion: images + annotations with bbox (and area).

    Each image becomes one frame ordered by image id; pixels load only
    when images_dir is given. Never required by the test suite.
    """
    try:
        with open(annotation_path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"missing annotation file {annotation_path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed COCO JSON: {exc}") from exc
    if "images" not in data or "annotations" not in data:
        raise DataError("COCO JSON needs 'images' and 'annotations' keys")
    by_image: dict[int, list[GtBox]] = {}
    for ann in data["annotations"]:
        try:
            x, y, w, h = (float(v) for v in ann["bbox"])
            by_image.setdefault(int(ann["image_id"]), []).append(
                GtBox(box=Box(x, y, w, h), cls=int(ann.get("category_id", 0)))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad COCO annotation {ann.get('id')}: {exc}") from exc
    frames = []
    for t, img in enumerate(sorted(data["images"], key=lambda im: im["id"])):
        image = None
        if images_dir is not None and img.get("file_name"):
            from PIL import Image

            path = os.path.join(str(images_dir), img["file_name"])
            with Image.open(path) as im:
                image = np.asarray(im.convert("L"))
        frames.append(FrameRecord(t=t, image=image, gt=by_image.get(int(img["id"]), [])))
    return frames
