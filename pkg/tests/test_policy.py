"""Temporal union maintenance, refresh rule, policy metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glance import policy, roi
from glance.errors import ConfigError
from glance.policy import PolicyConfig, TemporalState


def fresh_state(**kwargs):
    return TemporalState(config=PolicyConfig(**kwargs), width=640, height=480)


def random_roi_stream(seed, frames, per_frame):
    rng = np.random.default_rng(seed)
    stream = []
    for _ in range(frames):
        stream.append([
            roi.Roi(float(rng.uniform(40, 600)), float(rng.uniform(40, 440)),
                    float(rng.choice([48, 64, 80])))
            for _ in range(per_frame)
        ])
    return stream


def test_pure_accumulation_area_nondecreasing():
    state = fresh_state(decay=1.0)
    areas = []
    for rois in random_roi_stream(0, 12, 2):
        state = policy.temporal_update(state, rois)
        areas.append(state.union_area())
    assert np.all(np.diff(areas) >= 0)


def test_window_one_equals_per_frame_union():
    state = fresh_state(window=1)
    for t, rois in enumerate(random_roi_stream(1, 10, 3)):
        state = policy.temporal_update(state, rois)
        expect = roi.spatial_union(rois, 640, 480)
        assert roi.masks_equal(state.union_mask(), expect)
        assert state.t == t


def test_decay_chain_survives_exactly_four_frames():
    state = fresh_state(decay=0.5, w_min=0.1)
    state = policy.temporal_update(state, [roi.Roi(100, 100, 48)])
    survived = 0
    for _ in range(6):
        state = policy.temporal_update(state, [])
        if state.regions:
            survived += 1
    assert survived == 3          # present after 1st, 2nd, 3rd decay
    assert policy.survival_frames(0.5, 0.1) == 4  # dropped on the 4th


def test_refresh_every_frame_when_period_one():
    state = fresh_state(refresh_period=1)
    for rois in random_roi_stream(2, 5, 1):
        state = policy.temporal_update(state, rois)
        assert policy.should_refresh(state)


def test_refresh_period_five_frame_seven():
    state = fresh_state(refresh_period=5)
    for rois in random_roi_stream(3, 8, 1):
        state = policy.temporal_update(state, rois)
    assert state.t == 7
    assert not policy.should_refresh(state)


def test_budget_trigger_fires_regardless_of_phase():
    state = fresh_state(refresh_period=100, area_budget=48 * 48)
    state = policy.temporal_update(state, [roi.Roi(100, 100, 48)])  # t=0: periodic
    state = policy.temporal_update(state, [roi.Roi(300, 300, 48)])  # t=1, area 2*48^2 > B
    assert state.union_area() == 2 * 48 * 48
    assert policy.should_refresh(state)


def test_budget_safety_property():
    state = fresh_state(refresh_period=1000, area_budget=30000.0, decay=1.0)
    for rois in random_roi_stream(4, 15, 2):
        state = policy.temporal_update(state, rois)
        if state.union_area() > 30000.0:
            assert policy.should_refresh(state)


def test_decay_after_run_noop_at_one():
    state = fresh_state(post_run_decay=1.0)
    state = policy.temporal_update(state, [roi.Roi(100, 100, 48)])
    after = policy.decay_after_run(state)
    assert after.regions == state.regions


def test_decay_after_run_at_w_min_drops_unreinforced():
    state = fresh_state(w_min=0.1)
    state = policy.temporal_update(state, [roi.Roi(100, 100, 48)])
    after = policy.decay_after_run(state, 0.1)   # weights 1 -> 0.1 <= w_min
    assert after.regions == ()


def test_decay_after_run_empty_state_idempotent():
    state = fresh_state()
    assert policy.decay_after_run(state).regions == ()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_monotone_window_property(seed):
    # with decay 1, the K=a union is contained in the K=b union for a <= b
    stream = random_roi_stream(seed, 8, 2)
    a, b = 2, 5
    sa = fresh_state(decay=1.0, window=a)
    sb = fresh_state(decay=1.0, window=b)
    for rois in stream:
        sa = policy.temporal_update(sa, rois)
        sb = policy.temporal_update(sb, rois)
        combined = roi.region_union(list(sa.union_mask().rects) + list(sb.union_mask().rects))
        assert combined.total_area == sb.union_mask().total_area  # sa subset of sb


def test_policy_metrics_counts_and_mean():
    trace = [
        {"refreshed": True, "mosaic_area": 100},
        {"refreshed": False, "mosaic_area": None},
        {"refreshed": True, "mosaic_area": 300},
        {"refreshed": True, "mosaic_area": None},  # refresh with empty mask
    ]
    m = policy.policy_metrics(trace)
    assert m.refresh_count == 3
    assert m.mean_mosaic_area == pytest.approx(200.0)
    assert m.frames == 4


def test_policy_metrics_constant_area():
    trace = [{"refreshed": True, "mosaic_area": 555} for _ in range(7)]
    m = policy.policy_metrics(trace)
    assert m.refresh_count == 7
    assert m.mean_mosaic_area == 555


def test_config_validation():
    with pytest.raises(ConfigError):
        PolicyConfig(decay=0.0)
    with pytest.raises(ConfigError):
        PolicyConfig(decay=1.5)
    with pytest.raises(ConfigError):
        PolicyConfig(refresh_period=0)
