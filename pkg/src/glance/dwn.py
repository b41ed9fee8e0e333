"""Lookup-table gaze estimator.

A grayscale eye crop is squashed through tanh, average-pooled, and
thermometer-encoded against per-feature quantile thresholds. The resulting
bit vector addresses a bank of small lookup tables; a linear head maps the
table outputs to a unit 3D gaze direction. Training uses a logistic
relaxation of the encoder and the exact Bernoulli expectation of each
lookup, so inference stays multiplication-free while gradients flow into
the table entries and the head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

NORM_GUARD = 1e-8        # ||Wz+c|| below this counts as degenerate output
TARGET_GUARD = 1e-6      # target vectors below this norm become [0,0,1]
TARGET_EPS = 1e-8        # denominator epsilon for target normalization


@dataclass(frozen=True)
class DwnConfig:
    """Hyperparameters of the estimator.

    Defaults follow the desk-scale reference configuration: 56x56 inputs,
    4x4 pooling, 4-bit thermometer at temperature 0.5, 131 LUTs with 6-bit
    addresses, and Adam with decoupled weight decay.
    """

    input_size: int = 56
    pool_k: int = 4
    therm_bits: int = 4
    temperature: float = 0.5
    num_luts: int = 131
    addr_bits: int = 6
    loss_lambda: float = 0.3
    learning_rate: float = 3e-3
    weight_decay: float = 1e-5
    grad_clip: float = 5.0
    batch_size: int = 64
    seed: int = 0

    @property
    def num_features(self) -> int:
        return (self.input_size // self.pool_k) ** 2

    @property
    def num_bits(self) -> int:
        return self.num_features * self.therm_bits

    def validate(self) -> None:
        if self.input_size <= 0 or self.pool_k <= 0 or self.input_size % self.pool_k != 0:
            raise ConfigError(
                f"input_size {self.input_size} must be a positive multiple of pool_k {self.pool_k}"
            )
        if self.therm_bits < 1:
            raise ConfigError(f"therm_bits must be >= 1, got {self.therm_bits}")
        if not 1 <= self.addr_bits <= 16:
            raise ConfigError(f"addr_bits must be in [1, 16], got {self.addr_bits}")
        if not 0.0 < self.loss_lambda < 1.0:
            raise ConfigError(f"loss_lambda must be in (0, 1), got {self.loss_lambda}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.num_luts < 1:
            raise ConfigError(f"num_luts must be >= 1, got {self.num_luts}")
        if self.addr_bits > self.num_bits:
            raise ConfigError(
                f"addr_bits {self.addr_bits} exceeds total bit count {self.num_bits}"
            )
        if self.num_luts > self.num_bits:
            raise ConfigError(
                f"num_luts {self.num_luts} exceeds total bit count {self.num_bits}"
            )


@dataclass
class ThresholdTable:
    """Per-feature thermometer thresholds, rows sorted ascending.

    ``degenerate`` flags features whose training values were all identical
    (their thresholds collapse to that value); fitting still succeeds.
    """

    tau: np.ndarray                  # (F, K)
    degenerate: np.ndarray = field(default=None)  # (F,) bool

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.degenerate is None:
            self.degenerate = np.zeros(self.tau.shape[0], dtype=bool)


@dataclass
class ConnectionMap:
    """Bit indices feeding each LUT; a pure function of (seed, B, L, n)."""

    pi: np.ndarray                   # (L, n) int indices into the bit vector
    seed: int


@dataclass
class LutBank:
    entries: np.ndarray              # (L, 2**n) float


@dataclass
class LinearHead:
    W: np.ndarray                    # (3, L)
    c: np.ndarray                    # (3,)


@dataclass
class GazeModel:
    config: DwnConfig
    thresholds: ThresholdTable | None
    cmap: ConnectionMap
    luts: LutBank
    head: LinearHead


@dataclass
class GazeSample:
    """One training record: S x S image in [-1, 1] and a unit target."""

    image: np.ndarray
    target: np.ndarray


@dataclass
class InferenceCost:
    """Instrumented operation counter for the hard inference path."""

    lookups: int = 0
    macs: int = 0


@dataclass(frozen=True)
class Complexity:
    params: int
    macs: int
    lookups: int


def count_complexity(config: DwnConfig) -> Complexity:
    """Parameter/operation counts: FK threshold cells, L*2^n table entries,
    3L+3 head weights; inference costs L lookups and 3L MACs."""
    config.validate()
    f, k = config.num_features, config.therm_bits
    l, n = config.num_luts, config.addr_bits
    return Complexity(
        params=f * k + l * 2**n + (3 * l + 3),
        macs=3 * l,
        lookups=l,
    )


def build_connection_map(seed: int, num_bits: int, num_luts: int, addr_bits: int) -> ConnectionMap:
    """Draw each LUT's input bits uniformly without replacement (per LUT).

    Uses the counter-based Philox generator so the map is reproducible from
    the seed alone (it is rebuilt, not stored, when importing a model file).
    """
    if addr_bits > num_bits:
        raise ConfigError(f"addr_bits {addr_bits} exceeds bit count {num_bits}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
    pi = np.stack(
        [rng.choice(num_bits, size=addr_bits, replace=False) for _ in range(num_luts)]
    ).astype(np.int64)
    return ConnectionMap(pi=pi, seed=seed)


HEAD_BOOT_BIAS = 1e-3  # forward bias at init; an exactly zero head would
                       # leave every sample behind the norm guard and no
                       # gradient could ever flow


def init_model(config: DwnConfig) -> GazeModel:
    """Fresh model: random connection map, small uniform LUT entries,
    near-zero head. Thresholds stay unset until fit_thresholds.

    The head starts at W = 0 with a tiny forward bias in c, so initial
    predictions are exactly [0, 0, 1] while the normalization Jacobian
    stays defined from the first training step.
    """
    config.validate()
    cmap = build_connection_map(config.seed, config.num_bits, config.num_luts, config.addr_bits)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 1])))
    entries = rng.uniform(-0.1, 0.1, size=(config.num_luts, 2**config.addr_bits))
    return GazeModel(
        config=config,
        thresholds=None,
        cmap=cmap,
        luts=LutBank(entries=entries),
        head=LinearHead(W=np.zeros((3, config.num_luts)), c=np.array([0.0, 0.0, HEAD_BOOT_BIAS])),
    )


def preprocess(raw: np.ndarray, input_size: int, pool_k: int) -> np.ndarray:
    """tanh then k x k average pooling, flattened row-major.

    Accepts a single (S, S) image or a (N, S, S) batch.
    """
    raw = np.asarray(raw, dtype=float)
    single = raw.ndim == 2
    if single:
        raw = raw[None]
    if raw.ndim != 3 or raw.shape[1] != input_size or raw.shape[2] != input_size:
        raise DataError(
            f"expected images of shape ({input_size}, {input_size}), got {raw.shape[1:]}"
        )
    g = input_size // pool_k
    pooled = np.tanh(raw).reshape(-1, g, pool_k, g, pool_k).mean(axis=(2, 4))
    feats = pooled.reshape(-1, g * g)
    return feats[0] if single else feats


def fit_thresholds(features: np.ndarray, therm_bits: int) -> ThresholdTable:
    """Empirical quantile thresholds at levels k/(K+1), k = 1..K.

    ``features`` is (N, F), samples first. Uses linear interpolation
    between order statistics; constant features are flagged degenerate.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise DataError(f"expected (N, F) feature matrix, got shape {features.shape}")
    n, _ = features.shape
    if n < therm_bits + 1:
        raise DataError(f"need at least K+1 = {therm_bits + 1} samples, got {n}")
    levels = np.array([k / (therm_bits + 1) for k in range(1, therm_bits + 1)])
    tau = np.quantile(features, levels, axis=0, method="linear").T  # (F, K)
    tau = np.sort(tau, axis=1)
    degenerate = features.max(axis=0) == features.min(axis=0)
    return ThresholdTable(tau=tau, degenerate=degenerate)


def bit_activation(features: np.ndarray, table: ThresholdTable) -> np.ndarray:
    """Fraction of samples activating each thermometer level, shape (K,)."""
    hard = encode_hard(features, table)
    k = table.tau.shape[1]
    return hard.reshape(features.shape[0], -1, k).mean(axis=(0, 1))


def encode_soft(features: np.ndarray, table: ThresholdTable, temperature: float) -> np.ndarray:
    """Logistic relaxation sigma((f - tau) / T); shape (..., F, K)."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    f = np.asarray(features, dtype=float)
    z = (f[..., None] - table.tau) / temperature
    return 1.0 / (1.0 + np.exp(-z))


def encode_hard(features: np.ndarray, table: ThresholdTable) -> np.ndarray:
    """Thermometer bits, 1 where f >= tau. Flattened feature-major then
    threshold index: bit j*K + k compares feature j against tau[j, k]."""
    f = np.asarray(features, dtype=float)
    bits = (f[..., None] >= table.tau).astype(np.uint8)
    return bits.reshape(bits.shape[:-2] + (-1,))


def _address_weights(sel: np.ndarray) -> np.ndarray:
    """Probability of each 2^n address under independent Bernoulli bits.

    ``sel`` holds the selected soft bits, last axis MSB-first; result has
    the same leading shape with a trailing 2^n axis.
    """
    n = sel.shape[-1]
    w = np.ones(sel.shape[:-1] + (1,), dtype=float)
    for m in range(n):
        p = sel[..., m]
        pair = np.stack((1.0 - p, p), axis=-1)
        w = (w[..., :, None] * pair[..., None, :]).reshape(sel.shape[:-1] + (-1,))
    return w


def _lut_soft_flat(flat_bits: np.ndarray, luts: LutBank, cmap: ConnectionMap) -> np.ndarray:
    sel = flat_bits[..., cmap.pi]                 # (..., L, n)
    w = _address_weights(sel)                     # (..., L, 2**n)
    return np.einsum("...la,la->...l", w, luts.entries)


def lut_forward_soft(soft_bits: np.ndarray, luts: LutBank, cmap: ConnectionMap) -> np.ndarray:
    """Expected lookup value under independent Bernoulli bits.

    ``soft_bits`` is (..., F, K) as produced by encode_soft. For each LUT,
    z_i = sum over addresses a of entries[i][a] * P(address = a), an exact
    2^n-term expectation that reduces to the hard lookup at saturation.
    """
    flat = np.asarray(soft_bits, dtype=float)
    flat = flat.reshape(flat.shape[:-2] + (-1,))
    return _lut_soft_flat(flat, luts, cmap)


def hard_addresses(bits: np.ndarray, cmap: ConnectionMap) -> np.ndarray:
    """LUT addresses from hard bits; bit m is the MSB-first address digit."""
    n = cmap.pi.shape[1]
    powers = 1 << np.arange(n - 1, -1, -1)
    sel = np.asarray(bits)[..., cmap.pi].astype(np.int64)
    return sel @ powers


def lut_forward_hard(bits: np.ndarray, luts: LutBank, cmap: ConnectionMap) -> np.ndarray:
    """One table read per LUT; exactly L lookups, zero multiplications."""
    addr = hard_addresses(bits, cmap)
    l = cmap.pi.shape[0]
    return luts.entries[np.arange(l), addr]


def head_forward(z: np.ndarray, head: LinearHead) -> tuple[np.ndarray, bool]:
    """Linear projection then unit normalization; 3L MACs.

    Returns (direction, degenerate). A near-zero projection yields the
    forward direction [0, 0, 1] with degenerate = True.
    """
    y = head.W @ np.asarray(z, dtype=float) + head.c
    nrm = float(np.linalg.norm(y))
    if nrm < NORM_GUARD:
        return np.array([0.0, 0.0, 1.0]), True
    return y / nrm, False


def normalize_target(g_raw: np.ndarray) -> np.ndarray:
    """Unit-normalize a target; near-zero vectors become [0, 0, 1]."""
    g = np.asarray(g_raw, dtype=float)
    nrm = float(np.linalg.norm(g))
    if nrm < TARGET_GUARD:
        return np.array([0.0, 0.0, 1.0])
    return g / (nrm + TARGET_EPS)


def loss(pred: np.ndarray, target: np.ndarray, lam: float) -> float:
    """lam * ||ghat - g||^2 + (1 - lam) * (1 - <ghat, g>), both unit inputs."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    return float(lam * np.sum((pred - target) ** 2) + (1.0 - lam) * (1.0 - pred @ target))


def angular_error(pred: np.ndarray, target: np.ndarray) -> float:
    """Angle between unit vectors, in degrees."""
    dot = float(np.clip(np.asarray(pred) @ np.asarray(target), -1.0, 1.0))
    return math.degrees(math.acos(dot))


def angular_errors(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    dots = np.clip(np.sum(np.asarray(preds) * np.asarray(targets), axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def _require_thresholds(model: GazeModel) -> ThresholdTable:
    if model.thresholds is None:
        raise ConfigError("model has no fitted thresholds; run fit_thresholds first")
    return model.thresholds


def infer_hard(model: GazeModel, image: np.ndarray, cost: InferenceCost | None = None) -> np.ndarray:
    """Full hard-inference pipeline for one image.

    When ``cost`` is given, runs a scalar reference path that counts every
    table read and multiply-accumulate; otherwise uses the vectorized path.
    The two paths agree exactly (same float operations reassociated).
    """
    cfg = model.config
    table = _require_thresholds(model)
    feats = preprocess(image, cfg.input_size, cfg.pool_k)
    bits = encode_hard(feats, table)
    if cost is None:
        z = lut_forward_hard(bits, model.luts, model.cmap)
        ghat, _ = head_forward(z, model.head)
        return ghat
    pi = model.cmap.pi
    l, n = pi.shape
    z = np.empty(l)
    for i in range(l):
        addr = 0
        for m in range(n):
            addr = (addr << 1) | int(bits[pi[i, m]])
        z[i] = model.luts.entries[i, addr]
        cost.lookups += 1
    y = np.empty(3)
    for r in range(3):
        acc = model.head.c[r]
        for i in range(l):
            acc += model.head.W[r, i] * z[i]
            cost.macs += 1
        y[r] = acc
    nrm = float(np.linalg.norm(y))
    if nrm < NORM_GUARD:
        return np.array([0.0, 0.0, 1.0])
    return y / nrm


def infer_hard_batch(model: GazeModel, images: np.ndarray) -> np.ndarray:
    """Vectorized hard inference over (N, S, S) images; returns (N, 3)."""
    cfg = model.config
    table = _require_thresholds(model)
    feats = preprocess(images, cfg.input_size, cfg.pool_k)
    bits = encode_hard(feats, table)
    addr = hard_addresses(bits, model.cmap)
    l = model.cmap.pi.shape[0]
    z = model.luts.entries[np.arange(l), addr]
    y = z @ model.head.W.T + model.head.c
    nrm = np.linalg.norm(y, axis=-1, keepdims=True)
    out = np.where(nrm < NORM_GUARD, np.array([0.0, 0.0, 1.0]), y / np.maximum(nrm, NORM_GUARD))
    return out
