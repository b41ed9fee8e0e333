"""Gradient-descent training for the lookup-table gaze estimator.

Gradients flow loss -> normalization -> linear head -> expected-lookup
layer -> logistic encoder, into the LUT entries and the head only
(thresholds and the connection map stay frozen). The optimizer is Adam
with decoupled weight decay and global-norm gradient clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dwn
from .dwn import DwnConfig, GazeModel
from .errors import NumericsError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators for (entries, W, c)."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: GazeModel) -> "AdamState":
        state = cls()
        for name, arr in _trainables(model).items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def _trainables(model: GazeModel) -> dict[str, np.ndarray]:
    return {"entries": model.luts.entries, "W": model.head.W, "c": model.head.c}


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """GazeSample records -> (images, targets) arrays, targets normalized."""
    images = np.stack([s.image for s in samples])
    targets = np.stack([dwn.normalize_target(s.target) for s in samples])
    return images, targets


@dataclass
class ForwardCache:
    feats: np.ndarray
    flat_soft: np.ndarray
    addr_w: np.ndarray        # (N, L, 2**n)
    z: np.ndarray             # (N, L)
    y: np.ndarray             # (N, 3)
    ghat: np.ndarray          # (N, 3)
    keep: np.ndarray          # (N,) bool, False where ||y|| hit the guard


def forward_soft(model: GazeModel, images: np.ndarray) -> ForwardCache:
    """Differentiable forward pass over a batch of (N, S, S) images."""
    cfg = model.config
    table = dwn._require_thresholds(model)
    feats = dwn.preprocess(images, cfg.input_size, cfg.pool_k)
    soft = dwn.encode_soft(feats, table, cfg.temperature)
    flat = soft.reshape(soft.shape[0], -1)
    sel = flat[:, model.cmap.pi]
    addr_w = dwn._address_weights(sel)
    z = np.einsum("bla,la->bl", addr_w, model.luts.entries)
    y = z @ model.head.W.T + model.head.c
    nrm = np.linalg.norm(y, axis=1)
    keep = nrm >= dwn.NORM_GUARD
    ghat = np.zeros_like(y)
    ghat[keep] = y[keep] / nrm[keep, None]
    return ForwardCache(feats=feats, flat_soft=flat, addr_w=addr_w, z=z, y=y, ghat=ghat, keep=keep)


def batch_loss_and_grads(
    model: GazeModel, images: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray], ForwardCache]:
    """Mean composite loss over the batch and its analytic gradients.

    Samples whose head output hits the norm guard are skipped (their
    normalization Jacobian is undefined); the mean runs over kept samples.
    """
    lam = model.config.loss_lambda
    cache = forward_soft(model, images)
    targets = np.asarray(targets, dtype=float)
    keep = cache.keep
    kept = int(keep.sum())
    if kept == 0:
        raise NumericsError("all samples in the batch hit the degenerate-norm guard")
    g = targets[keep]
    ghat = cache.ghat[keep]
    y = cache.y[keep]
    per_sample = lam * np.sum((ghat - g) ** 2, axis=1) + (1.0 - lam) * (1.0 - np.sum(ghat * g, axis=1))
    mean_loss = float(per_sample.mean())

    # d(mean loss)/d ghat, then through ghat = y/||y||: (I - ghat ghat^T)/||y||
    dghat = (2.0 * lam * (ghat - g) - (1.0 - lam) * g) / kept
    nrm = np.linalg.norm(y, axis=1, keepdims=True)
    dy = (dghat - ghat * np.sum(ghat * dghat, axis=1, keepdims=True)) / nrm

    dy_full = np.zeros_like(cache.y)
    dy_full[keep] = dy
    grad_c = dy_full.sum(axis=0)
    grad_w = np.einsum("bi,bl->il", dy_full, cache.z)
    dz = dy_full @ model.head.W
    grad_entries = np.einsum("bl,bla->la", dz, cache.addr_w)
    grads = {"entries": grad_entries, "W": grad_w, "c": grad_c}
    return mean_loss, grads, cache


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def train_step(
    model: GazeModel, images: np.ndarray, targets: np.ndarray, opt: AdamState
) -> tuple[GazeModel, float]:
    """One clipped Adam update with decoupled weight decay, in place.

    A non-finite loss aborts the step before any parameter is touched.
    """
    cfg = model.config
    mean_loss, grads, _ = batch_loss_and_grads(model, images, targets)
    if not np.isfinite(mean_loss):
        raise NumericsError(f"non-finite loss {mean_loss!r}; step aborted")
    clip_global_norm(grads, cfg.grad_clip)
    opt.step += 1
    t = opt.step
    params = _trainables(model)
    for name, p in params.items():
        g = grads[name]
        opt.m[name] = ADAM_BETA1 * opt.m[name] + (1.0 - ADAM_BETA1) * g
        opt.v[name] = ADAM_BETA2 * opt.v[name] + (1.0 - ADAM_BETA2) * g * g
        mhat = opt.m[name] / (1.0 - ADAM_BETA1**t)
        vhat = opt.v[name] / (1.0 - ADAM_BETA2**t)
        p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + ADAM_EPS)
        p -= cfg.learning_rate * cfg.weight_decay * p
    return model, mean_loss


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_error_deg: float | None


def evaluate_angular(model: GazeModel, images: np.ndarray, targets: np.ndarray) -> float:
    """Mean angular error (degrees) of hard inference over a dataset."""
    preds = dwn.infer_hard_batch(model, images)
    return float(dwn.angular_errors(preds, np.asarray(targets, dtype=float)).mean())


def fit(
    model: GazeModel,
    train_images: np.ndarray,
    train_targets: np.ndarray,
    epochs: int = 30,
    val_images: np.ndarray | None = None,
    val_targets: np.ndarray | None = None,
    opt: AdamState | None = None,
    start_epoch: int = 0,
    log=None,
) -> tuple[GazeModel, list[EpochRecord]]:
    """Epoch loop with constant learning rate.

    Per-epoch shuffling derives its generator from (seed, epoch), so a run
    resumed from a checkpoint at epoch e replays exactly the batches the
    uninterrupted run would have seen.
    """
    cfg = model.config
    n = train_images.shape[0]
    if n == 0:
        raise NumericsError("empty training set")
    if opt is None:
        opt = AdamState.for_model(model)
    history: list[EpochRecord] = []
    for epoch in range(start_epoch, epochs):
        order = np.random.default_rng([cfg.seed, epoch, 2]).permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            try:
                _, step_loss = train_step(model, train_images[idx], train_targets[idx], opt)
            except NumericsError as exc:
                raise NumericsError(f"epoch {epoch}, batch starting at {lo}: {exc}") from exc
            losses.append(step_loss)
        val = None
        if val_images is not None and len(val_images):
            val = evaluate_angular(model, val_images, val_targets)
        rec = EpochRecord(epoch=epoch, mean_loss=float(np.mean(losses)), val_error_deg=val)
        history.append(rec)
        if log is not None:
            log(rec)
    return model, history


def save_checkpoint(path, model: GazeModel, opt: AdamState, epoch: int) -> None:
    """Float sidecar for training resumption (not the deployment format)."""
    import json

    cfg_json = json.dumps(vars(model.config) | {"__epoch__": epoch})
    arrays = {
        "entries": model.luts.entries,
        "W": model.head.W,
        "c": model.head.c,
        "pi": model.cmap.pi,
        "opt_step": np.array([opt.step]),
    }
    if model.thresholds is not None:
        arrays["tau"] = model.thresholds.tau
        arrays["degenerate"] = model.thresholds.degenerate
    for name in ("entries", "W", "c"):
        arrays[f"m_{name}"] = opt.m[name]
        arrays[f"v_{name}"] = opt.v[name]
    np.savez(path, config=np.frombuffer(cfg_json.encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[GazeModel, AdamState, int]:
    import json

    data = np.load(path)
    meta = json.loads(bytes(data["config"]).decode())
    epoch = meta.pop("__epoch__")
    config = DwnConfig(**meta)
    thresholds = None
    if "tau" in data:
        thresholds = dwn.ThresholdTable(tau=data["tau"], degenerate=data["degenerate"].astype(bool))
    model = GazeModel(
        config=config,
        thresholds=thresholds,
        cmap=dwn.ConnectionMap(pi=data["pi"], seed=config.seed),
        luts=dwn.LutBank(entries=data["entries"].copy()),
        head=dwn.LinearHead(W=data["W"].copy(), c=data["c"].copy()),
    )
    opt = AdamState(step=int(data["opt_step"][0]))
    for name in ("entries", "W", "c"):
        opt.m[name] = data[f"m_{name}"].copy()
        opt.v[name] = data[f"v_{name}"].copy()
    return model, opt, int(epoch)
