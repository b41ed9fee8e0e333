"""Temporal attention accumulation and the detector refresh rule.

The accumulated union is realized as a set of weighted regions: each
frame multiplies existing weights by a decay factor, drops regions that
fall below the weight floor or age out of the window, and inserts the
incoming proposals at full weight. The detector fires on a periodic
trigger or when the union area exceeds the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError
from .roi import RegionMask, Roi, spatial_union


@dataclass(frozen=True)
class PolicyConfig:
    """Decay/window/trigger parameters.

    window=None means no age cutoff; area_budget=None disables the budget
    trigger (the default pairs an infinite budget with refresh_period=1).
    """

    decay: float = 1.0            # per-frame weight multiplier
    post_run_decay: float = 1.0   # applied right after a detector run
    w_min: float = 0.1            # regions at or below this weight are dropped
    window: int | None = None     # hard age cutoff in frames
    refresh_period: int = 1
    area_budget: float | None = None

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if not 0.0 < self.post_run_decay <= 1.0:
            raise ConfigError(f"post_run_decay must be in (0, 1], got {self.post_run_decay}")
        if self.refresh_period < 1:
            raise ConfigError(f"refresh_period must be >= 1, got {self.refresh_period}")
        if self.window is not None and self.window < 1:
            raise ConfigError(f"window must be >= 1 or None, got {self.window}")


@dataclass(frozen=True)
class TemporalState:
    """Weighted region set after integrating frames 0..t (t = -1: none)."""

    config: PolicyConfig
    width: int
    height: int
    regions: tuple[Roi, ...] = ()
    t: int = -1

    def union_mask(self) -> RegionMask:
        return spatial_union(list(self.regions), self.width, self.height)

    def union_area(self) -> int:
        return self.union_mask().total_area


def _apply_drop(regions, cfg: PolicyConfig, t: int):
    kept = []
    for r in regions:
        age = t - r.born_t
        if r.weight <= cfg.w_min:
            continue
        if cfg.window is not None and age >= cfg.window:
            continue
        kept.append(r)
    return tuple(kept)


def temporal_update(state: TemporalState, incoming: list[Roi]) -> TemporalState:
    """Integrate the next frame's proposals.

    Existing weights decay multiplicatively; stale or weak regions drop;
    incoming ROIs enter at weight 1 with the new frame index.
    """
    cfg = state.config
    t = state.t + 1
    decayed = [replace(r, weight=r.weight * cfg.decay) for r in state.regions]
    kept = _apply_drop(decayed, cfg, t)
    fresh = tuple(replace(r, weight=1.0, born_t=t) for r in incoming)
    return replace(state, regions=kept + fresh, t=t)


def should_refresh(state: TemporalState) -> bool:
    """True iff (t mod R == 0) or the union area exceeds the budget."""
    cfg = state.config
    if state.t < 0:
        return False
    if state.t % cfg.refresh_period == 0:
        return True
    return cfg.area_budget is not None and state.union_area() > cfg.area_budget


def decay_after_run(state: TemporalState, post_run_decay: float | None = None) -> TemporalState:
    """Soft decay applied immediately after a detector run."""
    lam = state.config.post_run_decay if post_run_decay is None else post_run_decay
    if not 0.0 < lam <= 1.0:
        raise ConfigError(f"post-run decay must be in (0, 1], got {lam}")
    decayed = [replace(r, weight=r.weight * lam) for r in state.regions]
    return replace(state, regions=_apply_drop(decayed, state.config, state.t))


def survival_frames(decay: float, w_min: float) -> int:
    """Updates an unreinforced region survives before the weight floor
    drops it: smallest d with decay**d <= w_min."""
    if decay >= 1.0:
        return -1  # never dropped by weight
    return math.ceil(math.log(w_min) / math.log(decay))


@dataclass(frozen=True)
class PolicyMetrics:
    refresh_count: int
    mean_mosaic_area: float | None   # over frames with a detector run
    frames: int


def policy_metrics(trace) -> PolicyMetrics:
    """Aggregate a completed per-frame trace.

    Records need ``refreshed`` and ``mosaic_area`` attributes (or keys).
    """

    def get(rec, name):
        return rec[name] if isinstance(rec, dict) else getattr(rec, name)

    refreshed = [rec for rec in trace if get(rec, "refreshed")]
    areas = [get(rec, "mosaic_area") for rec in refreshed if get(rec, "mosaic_area") is not None]
    mean_area = float(sum(areas) / len(areas)) if areas else None
    return PolicyMetrics(
        refresh_count=len(refreshed),
        mean_mosaic_area=mean_area,
        frames=len(list(trace)),
    )
