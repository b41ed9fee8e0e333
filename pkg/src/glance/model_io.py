"""Quantized `.dwn` model files.

Thresholds and the linear head are stored as 8-bit codes, LUT entries as
sign bits with one magnitude scale per table. The payload is exactly
F*K + ceil(L*2^n / 8) + (3L + 3) bytes; affine scales and dimensions live
in the header. The connection map is rebuilt from the seed rather than
stored. Layout details in docs/format.md.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import dwn
from .dwn import DwnConfig, GazeModel
from .errors import NumericsError, ParseError

MAGIC = b"DWN1"
VERSION = 1
QUANTILE_RULE_LINEAR = 1

_FIXED_HEADER = struct.Struct("<4sBBHHHHHIQ")  # magic, version, qrule, pad, S, k, K, n, L, seed


def payload_bytes(config: DwnConfig) -> int:
    """Quantized parameter footprint, excluding the header."""
    f, k = config.num_features, config.therm_bits
    l, n = config.num_luts, config.addr_bits
    return f * k + math.ceil(l * 2**n / 8) + (3 * l + 3)


def header_bytes(config: DwnConfig) -> int:
    return _FIXED_HEADER.size + 4 * (2 * config.num_features + config.num_luts + 2)


@dataclass
class QuantizedModel:
    """Parsed `.dwn` contents; codes and scales kept verbatim."""

    config: DwnConfig
    thresh_codes: np.ndarray    # (F, K) uint8
    thresh_lo: np.ndarray       # (F,) float32
    thresh_hi: np.ndarray       # (F,) float32
    lut_bits: np.ndarray        # (L, 2**n) uint8 (0/1)
    lut_scale: np.ndarray       # (L,) float32
    w_codes: np.ndarray         # (3, L) int8
    c_codes: np.ndarray         # (3,) int8
    w_scale: float
    c_scale: float

    def to_bytes(self) -> bytes:
        cfg = self.config
        head = _FIXED_HEADER.pack(
            MAGIC, VERSION, QUANTILE_RULE_LINEAR, 0,
            cfg.input_size, cfg.pool_k, cfg.therm_bits, cfg.addr_bits,
            cfg.num_luts, cfg.seed,
        )
        scales = (
            self.thresh_lo.astype("<f4").tobytes()
            + self.thresh_hi.astype("<f4").tobytes()
            + self.lut_scale.astype("<f4").tobytes()
            + struct.pack("<ff", self.w_scale, self.c_scale)
        )
        payload = (
            self.thresh_codes.astype(np.uint8).tobytes()
            + np.packbits(self.lut_bits.reshape(-1)).tobytes()
            + self.w_codes.astype(np.int8).tobytes()
            + self.c_codes.astype(np.int8).tobytes()
        )
        assert len(payload) == payload_bytes(cfg)
        return head + scales + payload

    def dequantize(self) -> GazeModel:
        """Float model over the quantization grid; shares the normal
        inference code path."""
        cfg = self.config
        # span in float64 so code 255 dequantizes to exactly thresh_hi,
        # making re-quantization a byte-level fixpoint
        span = self.thresh_hi.astype(float) - self.thresh_lo.astype(float)
        tau = self.thresh_lo.astype(float)[:, None] + self.thresh_codes / 255.0 * span[:, None]
        entries = self.lut_scale.astype(float)[:, None] * np.where(self.lut_bits == 1, 1.0, -1.0)
        return GazeModel(
            config=cfg,
            thresholds=dwn.ThresholdTable(tau=tau),
            cmap=dwn.build_connection_map(cfg.seed, cfg.num_bits, cfg.num_luts, cfg.addr_bits),
            luts=dwn.LutBank(entries=entries),
            head=dwn.LinearHead(
                W=self.w_codes.astype(float) * self.w_scale,
                c=self.c_codes.astype(float) * self.c_scale,
            ),
        )


def _symmetric_codes(x: np.ndarray) -> tuple[np.ndarray, float]:
    max_abs = float(np.max(np.abs(x))) if x.size else 0.0
    scale = max_abs / 127.0 if max_abs > 0 else 1.0
    return np.clip(np.rint(x / scale), -127, 127).astype(np.int8), scale


def quantize(model: GazeModel) -> QuantizedModel:
    """8-bit thresholds (per-feature min/max affine), 8-bit symmetric head,
    1-bit sign LUT entries with per-LUT mean-magnitude scale."""
    cfg = model.config
    table = dwn._require_thresholds(model)
    for arr in (table.tau, model.luts.entries, model.head.W, model.head.c):
        if not np.all(np.isfinite(arr)):
            raise NumericsError("model has non-finite parameters; refusing to export")
    lo = table.tau.min(axis=1).astype(np.float32)
    hi = table.tau.max(axis=1).astype(np.float32)
    span = hi.astype(float) - lo.astype(float)
    safe = np.where(span > 0, span, 1.0)
    codes = np.rint((table.tau - lo[:, None]) / safe[:, None] * 255.0)
    thresh_codes = np.clip(np.where(span[:, None] > 0, codes, 0.0), 0, 255).astype(np.uint8)
    lut_bits = (model.luts.entries >= 0).astype(np.uint8)
    lut_scale = np.abs(model.luts.entries).mean(axis=1).astype(np.float32)
    w_codes, w_scale = _symmetric_codes(model.head.W)
    c_codes, c_scale = _symmetric_codes(model.head.c)
    return QuantizedModel(
        config=cfg,
        thresh_codes=thresh_codes,
        thresh_lo=lo,
        thresh_hi=hi,
        lut_bits=lut_bits,
        lut_scale=lut_scale,
        w_codes=w_codes,
        c_codes=c_codes,
        w_scale=w_scale,
        c_scale=c_scale,
    )


def export_quantized(model: GazeModel) -> bytes:
    return quantize(model).to_bytes()


def import_quantized(blob: bytes) -> QuantizedModel:
    """Parse a `.dwn` blob; errors report the byte offset of the problem."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(blob) < _FIXED_HEADER.size:
        raise ParseError("truncated header", offset=len(blob))
    magic, version, qrule, _pad, s, k, kk, n, l, seed = _FIXED_HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if qrule != QUANTILE_RULE_LINEAR:
        raise ParseError(f"unknown quantile rule {qrule}", offset=5)
    try:
        config = DwnConfig(input_size=s, pool_k=k, therm_bits=kk, addr_bits=n, num_luts=l, seed=seed)
        config.validate()
    except Exception as exc:
        raise ParseError(f"inconsistent header dimensions: {exc}", offset=6) from exc
    f = config.num_features
    expected = header_bytes(config) + payload_bytes(config)
    if len(blob) != expected:
        raise ParseError(
            f"length mismatch: file is {len(blob)} bytes, header implies {expected}",
            offset=min(len(blob), expected),
        )
    off = _FIXED_HEADER.size
    thresh_lo = np.frombuffer(blob, dtype="<f4", count=f, offset=off).copy()
    off += 4 * f
    thresh_hi = np.frombuffer(blob, dtype="<f4", count=f, offset=off).copy()
    off += 4 * f
    lut_scale = np.frombuffer(blob, dtype="<f4", count=l, offset=off).copy()
    off += 4 * l
    w_scale, c_scale = struct.unpack_from("<ff", blob, off)
    off += 8
    thresh_codes = (
        np.frombuffer(blob, dtype=np.uint8, count=f * kk, offset=off).reshape(f, kk).copy()
    )
    off += f * kk
    nbits = l * 2**n
    packed = np.frombuffer(blob, dtype=np.uint8, count=math.ceil(nbits / 8), offset=off)
    lut_bits = np.unpackbits(packed)[:nbits].reshape(l, 2**n).copy()
    off += math.ceil(nbits / 8)
    w_codes = np.frombuffer(blob, dtype=np.int8, count=3 * l, offset=off).reshape(3, l).copy()
    off += 3 * l
    c_codes = np.frombuffer(blob, dtype=np.int8, count=3, offset=off).copy()
    return QuantizedModel(
        config=config,
        thresh_codes=thresh_codes,
        thresh_lo=thresh_lo,
        thresh_hi=thresh_hi,
        lut_bits=lut_bits,
        lut_scale=lut_scale,
        w_codes=w_codes,
        c_codes=c_codes,
        w_scale=w_scale,
        c_scale=c_scale,
    )


def quantized_forward(qmodel: QuantizedModel, image: np.ndarray) -> np.ndarray:
    """Hard inference with dequantized parameters.

    Shares the float pipeline; cost is unchanged (L lookups, 3L MACs). The
    threshold compare can equivalently run on 8-bit codes on-device since
    the per-feature affine map is monotone.
    """
    cached = getattr(qmodel, "_deq", None)
    if cached is None:
        cached = qmodel.dequantize()
        qmodel._deq = cached
    return dwn.infer_hard(cached, image)
