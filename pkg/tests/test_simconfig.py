"""Simulator config parsing: defaults, field-path errors, gaze sources."""

import json

import numpy as np
import pytest

from glance import simconfig
from glance.errors import ConfigError
from glance.simulate import (ExternalDetector, ModelGaze, OffsetGaze,
                             OracleDetector, RecordedGaze)


def test_empty_config_gets_defaults():
    bundle = simconfig.parse_sim_config({})
    assert bundle.sim.intr.width == 640
    assert bundle.sim.policy.refresh_period == 1
    assert bundle.sim.policy.area_budget is None
    assert bundle.sim.cost.roi_metadata_bytes == 16
    assert isinstance(bundle.gaze_source, OffsetGaze)
    assert isinstance(bundle.make_detector(), OracleDetector)
    assert len(bundle.frames) == 30


def test_unknown_top_level_block():
    with pytest.raises(ConfigError, match="bogus"):
        simconfig.parse_sim_config({"bogus": {}})


def test_unknown_field_names_path():
    with pytest.raises(ConfigError, match="camera.widht"):
        simconfig.parse_sim_config({"camera": {"widht": 640}})


def test_type_errors_name_field_path():
    with pytest.raises(ConfigError, match="policy.R"):
        simconfig.parse_sim_config({"policy": {"R": 0}})
    with pytest.raises(ConfigError, match="roi.count"):
        simconfig.parse_sim_config({"roi": {"count": "three"}})
    with pytest.raises(ConfigError, match="frames.count"):
        simconfig.parse_sim_config({"frames": {"source": "synthetic", "count": -1}})


def test_seed_validation_and_override():
    with pytest.raises(ConfigError, match="seed"):
        simconfig.parse_sim_config({"seed": -1})
    bundle = simconfig.parse_sim_config({"seed": 3}, seed_override=99)
    assert bundle.sim.seed == 99


def test_hit_probability_derives_snapped_side():
    bundle = simconfig.parse_sim_config({
        "camera": {"width": 640, "height": 640, "fov_h_deg": 90.0},
        "roi": {"hit_probability": 0.7},
    })
    assert bundle.sim.rois.side == 64


def test_external_detector_block(tmp_path):
    bundle = simconfig.parse_sim_config({
        "detector": {"kind": "external", "command": ["echo"], "timeout_s": 5.0},
    })
    det = bundle.make_detector(workdir=tmp_path)
    assert isinstance(det, ExternalDetector)
    assert det.timeout_s == 5.0
    with pytest.raises(ConfigError, match="detector.command"):
        simconfig.parse_sim_config({"detector": {"kind": "external"}})


def test_coco_frames_source(tmp_path):
    ann = tmp_path / "ann.json"
    ann.write_text(json.dumps({
        "images": [{"id": 1, "file_name": "a.png"}],
        "annotations": [{"id": 1, "image_id": 1, "bbox": [0, 0, 50, 50]}],
    }))
    bundle = simconfig.parse_sim_config({
        "frames": {"source": "coco", "annotations": str(ann)},
    })
    assert len(bundle.frames) == 1
    with pytest.raises(ConfigError, match="frames.annotations"):
        simconfig.parse_sim_config({"frames": {"source": "coco"}})


def test_recorded_fixations_csv(tmp_path):
    fix = tmp_path / "fix.csv"
    fix.write_text("t,u,v\n0,100.5,200.5\n2,300.0,301.0\n")
    bundle = simconfig.parse_sim_config({
        "frames": {"source": "synthetic", "count": 3, "render": False},
        "gaze": {"source": "recorded", "fixations": str(fix)},
    })
    assert bundle.frames[0].fixation == (100.5, 200.5)
    assert bundle.frames[1].fixation is None
    assert bundle.frames[2].fixation == (300.0, 301.0)
    assert isinstance(bundle.gaze_source, RecordedGaze)


def test_model_gaze_source_from_checkpoint_or_dwn(tmp_path):
    from glance import dwn, model_io, training

    cfg = dwn.DwnConfig(input_size=8, pool_k=4, therm_bits=1, num_luts=2,
                        addr_bits=1, seed=0)
    model = dwn.init_model(cfg)
    model.thresholds = dwn.ThresholdTable(tau=np.zeros((4, 1)))
    ckpt = tmp_path / "m.npz"
    training.save_checkpoint(ckpt, model, training.AdamState.for_model(model), 0)
    dwn_file = tmp_path / "m.dwn"
    dwn_file.write_bytes(model_io.export_quantized(model))
    for path in (str(ckpt), str(dwn_file)):
        bundle = simconfig.parse_sim_config({
            "gaze": {"source": "model", "model": path},
            "frames": {"source": "synthetic", "count": 2},
        })
        assert isinstance(bundle.gaze_source, ModelGaze)
    with pytest.raises(ConfigError, match="gaze.model"):
        simconfig.parse_sim_config({"gaze": {"source": "model"}})


def test_bad_gaze_source_name():
    with pytest.raises(ConfigError, match="gaze.source"):
        simconfig.parse_sim_config({"gaze": {"source": "telepathy"}})
