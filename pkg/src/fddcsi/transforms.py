"""Angular-delay transforms and real-valued plane representations of CSI.

Array-level functions accept any number of leading batch axes; the last two
axes are always (antenna, subcarrier) or (angle, delay).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .channel import BandSpec, CsiMatrix

DEFAULT_DELAY_TAPS = 32


class Mode(str, Enum):
    ORG = "ORG"
    POLAR = "POLAR"
    ABS = "ABS"



@dataclass(frozen=True)
class AngularDelayCsi:
    values: np.ndarray
    band: BandSpec | None = None
    angular: bool = True

    @property
    def n_delay(self) -> int:
        return self.values.shape[-1]


def ad_transform(h: np.ndarray, n_delay: int = DEFAULT_DELAY_TAPS, angular: bool = True) -> np.ndarray:
    """Frequency -> (angular-)delay domain, truncated to the first ``n_delay`` taps."""
    nc = h.shape[-1]
    if n_delay > nc:
        raise ValueError(f"n_delay={n_delay} exceeds {nc} subcarriers")
    out = np.fft.ifft(h, axis=-1, norm="ortho")
    if angular:
        out = np.fft.fft(out, axis=-2, norm="ortho")
    return out[..., :n_delay]


def ad_inverse(ad: np.ndarray, n_subcarriers: int, angular: bool = True) -> np.ndarray:
    """Zero-pad the delay axis to ``n_subcarriers`` and undo :func:`ad_transform`."""
    n_delay = ad.shape[-1]
    if n_subcarriers < n_delay:
        raise ValueError(f"n_subcarriers={n_subcarriers} is smaller than {n_delay} taps")
    pad = [(0, 0)] * (ad.ndim - 1) + [(0, n_subcarriers - n_delay)]
    out = np.pad(ad, pad)
    if angular:
        out = np.fft.ifft(out, axis=-2, norm="ortho")
    return np.fft.fft(out, axis=-1, norm="ortho")


def to_angular_delay(csi: CsiMatrix, n_delay: int = DEFAULT_DELAY_TAPS, angular: bool = True) -> AngularDelayCsi:
    return AngularDelayCsi(ad_transform(csi.values, n_delay, angular), csi.band, angular)


def from_angular_delay(ad: AngularDelayCsi, n_subcarriers: int | None = None) -> CsiMatrix:
    if ad.band is None:
        raise ValueError("band metadata is required; use ad_inverse for bare arrays")
    nc = ad.band.n_subcarriers if n_subcarriers is None else n_subcarriers
    if nc != ad.band.n_subcarriers:
        raise ValueError(f"band has {ad.band.n_subcarriers} subcarriers, asked for {nc}")
    return CsiMatrix(ad_inverse(ad.values, nc, ad.angular), ad.band)


def phase_of(z: np.ndarray) -> np.ndarray:
    """Angle in (-pi, pi]; zero magnitude maps to 0."""
    phase = np.angle(z)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return np.where(z == 0, 0.0, phase)


@dataclass
class RepresentationPlanes:
    """Real planes normalized to [0, 1] plus what is needed to invert them.

    ``planes`` is ``(..., 2, Nt, Ld)``; ``scale`` is ``(..., 2, 2)`` holding
    the (lo, hi) range mapped onto [0, 1] for each plane; ``signs`` (ABS only)
    is ``(..., 2, Nt, Ld)`` boolean, True where the real/imaginary part is
    negative.
    """

    mode: Mode
    planes: np.ndarray
    scale: np.ndarray
    signs: np.ndarray | None = None

    def raw(self) -> np.ndarray:
        """Planes mapped back to their physical range."""
        lo = self.scale[..., 0][..., None, None]
        hi = self.scale[..., 1][..., None, None]
        return lo + self.planes * (hi - lo)

    def __getitem__(self, idx) -> RepresentationPlanes:
        """Index the leading batch axes."""
        signs = None if self.signs is None else self.signs[idx]
        return RepresentationPlanes(self.mode, self.planes[idx], self.scale[idx], signs)


def raw_planes(ad: np.ndarray, mode: Mode | str) -> tuple[np.ndarray, np.ndarray | None]:
    """Unnormalized planes ``(..., 2, Nt, Ld)`` and optional sign bits."""
    mode = Mode(mode)
    if mode is Mode.ORG:
        return np.stack([ad.real, ad.imag], axis=-3), None
    if mode is Mode.POLAR:
        return np.stack([np.abs(ad), phase_of(ad)], axis=-3), None
    signs = np.stack([ad.real < 0, ad.imag < 0], axis=-3)
    return np.stack([np.abs(ad.real), np.abs(ad.imag)], axis=-3), signs


def plane_ranges(planes: np.ndarray, mode: Mode) -> np.ndarray:
    """Per-sample (lo, hi) for each plane.

    Signed planes use a symmetric range so that zero maps to 0.5; magnitude
    planes start at 0; phase uses the fixed (-pi, pi] range.
    """
    peak = np.max(np.abs(planes), axis=(-2, -1))
    peak = np.where(peak > 0, peak, 1.0)
    if mode is Mode.ORG:
        lo, hi = -peak, peak
    elif mode is Mode.ABS:
        lo, hi = np.zeros_like(peak), peak
    else:
        lo = np.stack([np.zeros_like(peak[..., 0]), np.full_like(peak[..., 1], -np.pi)], axis=-1)
        hi = np.stack([peak[..., 0], np.full_like(peak[..., 1], np.pi)], axis=-1)
    return np.stack([lo, hi], axis=-1)


def decompose(ad: AngularDelayCsi | np.ndarray, mode: Mode | str) -> RepresentationPlanes:
    values = ad.values if isinstance(ad, AngularDelayCsi) else np.asarray(ad)
    mode = Mode(mode)
    planes, signs = raw_planes(values, mode)
    scale = plane_ranges(planes, mode)
    lo = scale[..., 0][..., None, None]
    hi = scale[..., 1][..., None, None]
    return RepresentationPlanes(mode, (planes - lo) / (hi - lo), scale, signs)


def combine(mode: Mode | str, raw: np.ndarray, signs: np.ndarray | None = None) -> np.ndarray:
    """Complex values from unnormalized planes."""
    mode = Mode(mode)
    if mode is Mode.ORG:
        return raw[..., 0, :, :] + 1j * raw[..., 1, :, :]
    if mode is Mode.POLAR:
        mag = raw[..., 0, :, :]
        if np.any(mag < 0):
            raise ValueError("POLAR magnitudes must be non-negative")
        return mag * np.exp(1j * raw[..., 1, :, :])
    if signs is None:
        raise ValueError("ABS planes need sign bits to recompose")
    signed = np.where(signs, -raw, raw)
    return signed[..., 0, :, :] + 1j * signed[..., 1, :, :]


def recompose(planes: RepresentationPlanes, band: BandSpec | None = None) -> AngularDelayCsi:
    return AngularDelayCsi(combine(planes.mode, planes.raw(), planes.signs), band)
