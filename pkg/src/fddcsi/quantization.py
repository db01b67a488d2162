"""Uniform scalar quantizers and magnitude-dependent phase quantization."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .transforms import AngularDelayCsi

TierSpec = tuple[tuple[int, "int | None"], ...]
DEFAULT_TIERS: TierSpec = ((50, 4), (200, 2))
PASSTHROUGH_BITS = 64  # float64 phase sent verbatim


class QuantizationError(ValueError):
    pass


def _check_bits(bits, allow_zero=False) -> None:
    lo = 0 if allow_zero else 1
    if not isinstance(bits, (int, np.integer)) or not lo <= bits <= 32:
        raise QuantizationError(f"bits must be an integer in [{lo}, 32], got {bits!r}")


def _step(bits: int, lo: float, hi: float) -> float:
    _check_bits(bits)
    if not hi > lo:
        raise QuantizationError(f"empty quantizer range [{lo}, {hi})")
    return (hi - lo) / (1 << bits)


def uniform_quantize(x, bits: int, lo: float, hi: float) -> np.ndarray:
    """Cell indices ``floor((x - lo) / step)`` clamped to ``[0, 2**bits - 1]``."""
    step = _step(bits, lo, hi)
    idx = np.floor((np.asarray(x, dtype=np.float64) - lo) / step)
    return np.clip(idx, 0, (1 << bits) - 1).astype(np.int64)


def uniform_dequantize(idx, bits: int, lo: float, hi: float) -> np.ndarray:
    """Cell midpoints ``lo + (idx + 0.5) * step``."""
    step = _step(bits, lo, hi)
    return lo + (np.asarray(idx, dtype=np.float64) + 0.5) * step


def normalize_tiers(tiers) -> TierSpec:
    out = []
    for count, bits in tiers:
        if int(count) < 0:
            raise QuantizationError("tier tap counts must be non-negative")
        if bits is not None:
            _check_bits(bits, allow_zero=True)
            bits = int(bits)
        out.append((int(count), bits))
    return tuple(out)


def fit_tiers(tiers, n_taps: int) -> TierSpec:
    """Tiers truncated in rank order so they code at most ``n_taps`` taps."""
    out, left = [], n_taps
    for count, bits in normalize_tiers(tiers):
        take = min(count, left)
        if take:
            out.append((take, bits))
        left -= take
    return tuple(out)


def tier_bits(tiers) -> list[int]:
    return [PASSTHROUGH_BITS if b is None else b for _, b in tiers]


@dataclass(frozen=True)
class PhaseFeedback:
    """Phase payload for one angular-delay image.

    ``tap_indices`` lists coded taps (flat indices) in rank order; they are
    derivable from the decoded magnitudes and so are not transmitted.
    Passthrough tiers (``bits=None``) carry the raw float64 bit pattern.
    """

    tier_spec: TierSpec
    tap_indices: np.ndarray
    codes: np.ndarray  # uint64, aligned with tap_indices
    shape: tuple[int, int]

    @property
    def total_bits(self) -> int:
        return sum(c * b for (c, _), b in zip(self.tier_spec, tier_bits(self.tier_spec)))

    def tier_of(self) -> np.ndarray:
        """Bit depth of each coded tap (``None`` tiers reported as -1)."""
        return np.concatenate([np.full(c, -1 if b is None else b) for c, b in self.tier_spec] or [np.zeros(0, int)])


def magnitude_ranking(mag_hat) -> np.ndarray:
    """Flat tap order by descending magnitude; ties keep flat index order."""
    return np.argsort(-np.asarray(mag_hat, dtype=np.float64).ravel(), kind="stable")


def mag_phase_quantize(true_phases, mag_hat, tier_spec=DEFAULT_TIERS) -> PhaseFeedback:
    """Quantize one image's phases with bit depths set by the ranking of ``mag_hat``.

    Ranking on the decoded magnitude lets both ends agree on which taps are
    coded without sending indices.
    """
    phase = np.asarray(true_phases, dtype=np.float64)
    if phase.ndim != 2 or phase.shape != np.shape(mag_hat):
        raise QuantizationError(f"phase {phase.shape} and magnitude {np.shape(mag_hat)} must be equal 2-D shapes")
    tiers = normalize_tiers(tier_spec)
    n_coded = sum(c for c, _ in tiers)
    if n_coded > phase.size:
        raise QuantizationError(f"tier spec codes {n_coded} taps but the image has {phase.size}")
    order = magnitude_ranking(mag_hat)[:n_coded]
    flat = phase.ravel()
    codes, pos = [], 0
    for count, bits in tiers:
        taps = flat[order[pos : pos + count]]
        pos += count
        if bits is None:
            codes.append(taps.view(np.uint64))
        elif bits == 0:
            codes.append(np.zeros(count, np.uint64))
        else:
            codes.append(uniform_quantize(taps, bits, -np.pi, np.pi).astype(np.uint64))
    codes = np.concatenate(codes) if codes else np.zeros(0, np.uint64)
    return PhaseFeedback(tiers, order, codes, phase.shape)


def dequantize_phases(fb: PhaseFeedback) -> np.ndarray:
    """Phase image from feedback; taps outside every tier (or in 0-bit tiers) get phase 0."""
    out = np.zeros(int(np.prod(fb.shape)))
    pos = 0
    for count, bits in fb.tier_spec:
        idx = fb.tap_indices[pos : pos + count]
        code = fb.codes[pos : pos + count]
        pos += count
        if bits is None:
            out[idx] = code.view(np.float64)
        elif bits > 0:
            out[idx] = uniform_dequantize(code.astype(np.int64), bits, -np.pi, np.pi)
    return out.reshape(fb.shape)


def reconstruct_complex(mag_hat, fb: PhaseFeedback) -> AngularDelayCsi:
    mag_hat = np.asarray(mag_hat, dtype=np.float64)
    if mag_hat.shape != fb.shape:
        raise QuantizationError("magnitude shape does not match the feedback")
    return AngularDelayCsi(mag_hat * np.exp(1j * dequantize_phases(fb)))


def quantize_batch(true_phases, mag_hat, tier_spec=DEFAULT_TIERS) -> tuple[np.ndarray, int]:
    """Quantized phases for a batch ``(..., Nt, Ld)`` and the per-image bit count."""
    phase = np.asarray(true_phases, dtype=np.float64)
    mag = np.asarray(mag_hat, dtype=np.float64)
    p = phase.reshape((-1,) + phase.shape[-2:])
    m = mag.reshape(p.shape)
    out = np.empty_like(p)
    bits = 0
    for i in range(len(p)):
        fb = mag_phase_quantize(p[i], m[i], tier_spec)
        out[i] = dequantize_phases(fb)
        bits = fb.total_bits
    return out.reshape(phase.shape), bits


# -- wire format ---------------------------------------------------------------

_HEADER = struct.Struct(">4sBHH")  # magic, n_tiers, rows, cols
_TIER = struct.Struct(">IB")  # tap count, bits (255 = float64 passthrough)
_PASS = 255


def serialize(fb: PhaseFeedback) -> bytes:
    """Tier spec header, then every code MSB-first in rank order, zero-padded to a byte."""
    parts = [_HEADER.pack(b"MPQ1", len(fb.tier_spec), *fb.shape)]
    parts += [_TIER.pack(c, _PASS if b is None else b) for c, b in fb.tier_spec]
    widths = np.repeat(tier_bits(fb.tier_spec), [c for c, _ in fb.tier_spec])
    bitstr = "".join(format(int(code), f"0{w}b") for code, w in zip(fb.codes, widths) if w)
    bitstr += "0" * (-len(bitstr) % 8)
    body = int(bitstr, 2).to_bytes(len(bitstr) // 8, "big") if bitstr else b""
    return b"".join(parts) + body


def deserialize(data: bytes, mag_hat) -> PhaseFeedback:
    """Inverse of :func:`serialize`; tap indices are re-derived from ``mag_hat``."""
    magic, n_tiers, rows, cols = _HEADER.unpack_from(data, 0)
    if magic != b"MPQ1":
        raise QuantizationError("bad payload magic")
    off = _HEADER.size
    tiers = []
    for _ in range(n_tiers):
        count, bits = _TIER.unpack_from(data, off)
        off += _TIER.size
        tiers.append((count, None if bits == _PASS else bits))
    tiers = normalize_tiers(tiers)
    widths = np.repeat(tier_bits(tiers), [c for c, _ in tiers])
    nbits = int(widths.sum())
    body = data[off:]
    if len(body) != (nbits + 7) // 8:
        raise QuantizationError("payload length does not match the tier spec")
    bitstr = "".join(format(b, "08b") for b in body)
    ends = np.cumsum(widths)
    codes = [int(bitstr[e - w : e], 2) if w else 0 for e, w in zip(ends, widths)]
    if tuple(np.shape(mag_hat)) != (rows, cols):
        raise QuantizationError("magnitude shape does not match the payload header")
    order = magnitude_ranking(mag_hat)[: len(codes)]
    return PhaseFeedback(tiers, order, np.array(codes, dtype=np.uint64), (rows, cols))
