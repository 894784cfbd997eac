"""Deterministic forward evaluations of the domain-adaptation objectives.

These are pure functions of their inputs: rare-class sampling
probabilities, multi-resolution attention fusion, masked-consistency
cross-entropy, video-discriminator losses, and two-frame logit fusion.
No gradients are provided. Losses are returned as per-pixel means so the
values are resolution-independent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    IGNORE_VALUE,
    FlowField,
    LabelMap,
    LogitVolume,
    ScalarPlane,
    check_same_shape,
)
from .errors import (
    DataError,
    FormatError,
    LengthError,
    ParameterError,
    ShapeError,
    UndefinedLossError,
)
from .warp import propagate_logits

PROB_EPS = 1e-7  # probability clamp to keep log() finite


@dataclass(frozen=True)
class ClassFrequencies:
    """Per-class pixel proportions plus the sampling temperature."""

    f: np.ndarray
    temperature: float

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64).copy()
        if f.ndim != 1 or f.size == 0:
            raise ParameterError("frequencies must be a non-empty 1-D vector")
        if np.any(f < 0.0) or np.any(f > 1.0) or not np.all(np.isfinite(f)):
            raise ParameterError("frequencies must lie in [0, 1]")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        f.flags.writeable = False
        object.__setattr__(self, "f", f)


def rcs_distribution(freqs: ClassFrequencies) -> np.ndarray:
    """Rare-class sampling probabilities: softmax over (1 - f_c) / T.

    Rarer classes receive strictly more mass; the result sums to one.
    """
    logits = (1.0 - freqs.f) / freqs.temperature
    logits = logits - logits.max()  # shift invariance keeps exp() in range
    weights = np.exp(logits)
    return weights / weights.sum()


@dataclass(frozen=True)
class FusionWeights:
    """Parameters of the per-pixel 1x1 fusion convolution."""

    weights: np.ndarray  # (C_out, C_in)
    bias: np.ndarray | None = None  # (C_out,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32).copy()
        if w.ndim != 2:
            raise ShapeError(f"weights must be 2-D (C_out, C_in), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DataError("fusion weights contain non-finite values")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float32).copy()
            if b.shape != (w.shape[0],):
                raise ShapeError(f"bias must have shape ({w.shape[0]},), got {b.shape}")
            if not np.all(np.isfinite(b)):
                raise DataError("fusion bias contains non-finite values")
            b.flags.writeable = False
            object.__setattr__(self, "bias", b)


def write_fusion_weights(weights: FusionWeights, path) -> None:
    """Write fusion weights: 3 little-endian int32 (C_out, C_in, has_bias),
    then row-major float32 weights, then the bias when present."""
    c_out, c_in = weights.weights.shape
    has_bias = 1 if weights.bias is not None else 0
    blob = struct.pack("<iii", c_out, c_in, has_bias)
    blob += weights.weights.astype("<f4").tobytes()
    if weights.bias is not None:
        blob += weights.bias.astype("<f4").tobytes()
    Path(path).write_bytes(blob)


def read_fusion_weights(path) -> FusionWeights:
    """Read fusion weights written by write_fusion_weights."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise LengthError(f"{path}: file shorter than the 12-byte header")
    c_out, c_in, has_bias = struct.unpack("<iii", blob[0:12])
    if c_out <= 0 or c_in <= 0 or has_bias not in (0, 1):
        raise FormatError(
            f"{path}: bad header (C_out={c_out}, C_in={c_in}, has_bias={has_bias})"
        )
    expected = 12 + 4 * c_out * c_in + (4 * c_out if has_bias else 0)
    if len(blob) != expected:
        raise LengthError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    w = np.frombuffer(blob, dtype="<f4", offset=12, count=c_out * c_in)
    bias = None
    if has_bias:
        bias = np.frombuffer(blob, dtype="<f4", offset=12 + 4 * c_out * c_in)
    return FusionWeights(weights=w.reshape(c_out, c_in), bias=bias)


def upsample_bilinear(data: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear upsampling by a positive factor, half-pixel-center convention.

    Output pixel (i, j) samples the input at ((i + 0.5) / s - 0.5,
    (j + 0.5) / s - 0.5) with edge clamping, so constants are preserved
    and the map is linear in the input values. scale=1 is the identity.
    """
    if not (np.isfinite(scale) and scale > 0):
        raise ParameterError(f"scale must be positive, got {scale}")
    if scale == 1.0:
        return np.array(data, dtype=np.float64, copy=True)
    arr = np.asarray(data, dtype=np.float64)
    h, w = arr.shape[:2]
    out_h = int(round(h * scale))
    out_w = int(round(w * scale))
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"scale {scale} collapses {h}x{w} to {out_h}x{out_w}")
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) / scale - 0.5
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) / scale - 0.5
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    y0i = np.clip(y0, 0, h - 1).astype(np.intp)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    x0i = np.clip(x0, 0, w - 1).astype(np.intp)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    if arr.ndim == 3:
        wy = wy[:, :, None]
        wx = wx[:, :, None]
    top = (1.0 - wx) * arr[y0i][:, x0i] + wx * arr[y0i][:, x1i]
    bottom = (1.0 - wx) * arr[y1i][:, x0i] + wx * arr[y1i][:, x1i]
    return (1.0 - wy) * top + wy * bottom


def mrfusion_fuse(
    y_context: LogitVolume,
    y_detail: LogitVolume,
    attention: ScalarPlane,
    scale: float,
) -> LogitVolume:
    """Attention-weighted fusion of upsampled context with detail logits.

    Computes upsample((1 - a) * context, s) + upsample(a, s) * detail,
    with the attention map defined at the context resolution and
    broadcast across channels.
    """
    if np.any(attention.data < 0.0) or np.any(attention.data > 1.0):
        raise DataError("attention must lie in [0, 1]")
    check_same_shape(y_context, attention)
    a = attention.data.astype(np.float64)[:, :, None]
    weighted_context = (1.0 - a) * y_context.data.astype(np.float64)
    up_context = upsample_bilinear(weighted_context, scale)
    up_attention = upsample_bilinear(attention.data, scale)
    if up_context.shape[:2] != (y_detail.height, y_detail.width):
        raise ShapeError(
            f"context {(y_context.height, y_context.width)} upsampled by {scale} "
            f"gives {up_context.shape[:2]}, but detail is "
            f"{(y_detail.height, y_detail.width)}"
        )
    fused = up_context + up_attention[:, :, None] * y_detail.data.astype(np.float64)
    return LogitVolume(fused.astype(np.float32), y_detail.class_space)


def mic_loss(
    masked_logits: LogitVolume, pseudo_label: LabelMap, weight: ScalarPlane
) -> float:
    """Weighted cross-entropy of masked-image logits against pseudo-labels.

    Mean over non-ignore pixels of weight * CE(softmax(logits), label).
    """
    check_same_shape(masked_logits, pseudo_label, weight)
    if np.any(weight.data < 0.0) or np.any(weight.data > 1.0):
        raise DataError("loss weight must lie in [0, 1]")
    labels = pseudo_label.data
    supervised = labels != IGNORE_VALUE
    if not np.any(supervised):
        raise UndefinedLossError("every pixel is ignore; the loss has no support")
    logits = masked_logits.data.astype(np.float64)
    shifted = logits - logits.max(axis=2, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=2))
    picked = np.take_along_axis(
        shifted, np.where(supervised, labels, 0)[:, :, None].astype(np.intp), axis=2
    )[:, :, 0]
    ce = log_norm - picked
    weighted = weight.data.astype(np.float64) * ce
    return float(weighted[supervised].mean())


def _clamped_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def _check_probability(plane: ScalarPlane, name: str):
    if np.any(plane.data < 0.0) or np.any(plane.data > 1.0):
        raise DataError(f"{name} must lie in [0, 1]")


def video_disc_loss_d(d_src: ScalarPlane, d_tgt: ScalarPlane) -> float:
    """Discriminator loss: mean(-log D(source)) + mean(-log(1 - D(target)))."""
    _check_probability(d_src, "source discriminator output")
    _check_probability(d_tgt, "target discriminator output")
    src = d_src.data.astype(np.float64)
    tgt = d_tgt.data.astype(np.float64)
    return float(-_clamped_log(src).mean() - _clamped_log(1.0 - tgt).mean())


def video_disc_loss_f(d_tgt: ScalarPlane) -> float:
    """Feature (fooling) loss: mean(-log D(target))."""
    _check_probability(d_tgt, "target discriminator output")
    return float(-_clamped_log(d_tgt.data.astype(np.float64)).mean())


def accel_fuse(
    logits_t: LogitVolume,
    logits_tpk: LogitVolume,
    flow: FlowField,
    fusion: FusionWeights,
) -> LogitVolume:
    """Fuse current and flow-warped neighbor logits with a 1x1 convolution.

    The warped half is stacked after the current half (2C channels);
    pixels whose warp sampled outside the frame fall back to the current
    logits so fusion degrades gracefully at borders.
    """
    check_same_shape(logits_t, logits_tpk, flow)
    c = logits_t.channels
    if logits_tpk.channels != c:
        raise ShapeError(f"channel counts differ: {c} vs {logits_tpk.channels}")
    if fusion.weights.shape[1] != 2 * c or fusion.weights.shape[0] != c:
        raise ShapeError(
            f"fusion weights must be ({c}, {2 * c}), got {fusion.weights.shape}"
        )
    warped = propagate_logits(logits_tpk, flow)
    neighbor = np.where(
        warped.validity.data[:, :, None], warped.payload.data, logits_t.data
    )
    stacked = np.concatenate([logits_t.data, neighbor], axis=2).astype(np.float64)
    fused = stacked @ fusion.weights.astype(np.float64).T
    if fusion.bias is not None:
        fused = fused + fusion.bias.astype(np.float64)
    return LogitVolume(fused.astype(np.float32), logits_t.class_space)
