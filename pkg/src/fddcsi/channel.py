"""Paired uplink/downlink channel synthesis from a shared multipath geometry.

A clustered geometric model: every path has one delay and one departure angle
that both links see, while gains and phases are partially decorrelated as a
function of the band gap. The downlink realization is the anchor of each
draw, so for a fixed seed the downlink channel does not depend on where the
uplink band sits; only the uplink moves.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

Link = Literal["uplink", "downlink"]


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class BandSpec:
    """One link direction: carrier, OFDM grid and the gNB array."""

    center_freq: float
    bandwidth: float
    n_subcarriers: int = 256
    n_tx_antennas: int = 32
    antenna_spacing: float = SPEED_OF_LIGHT / 5.3e9 / 2

    def __post_init__(self):
        if not (self.bandwidth > 0 and self.center_freq > self.bandwidth / 2):
            raise ValueError(
                f"need center_freq > bandwidth/2 > 0, got {self.center_freq}, {self.bandwidth}"
            )
        if not _is_pow2(self.n_subcarriers) or not _is_pow2(self.n_tx_antennas):
            raise ValueError("n_subcarriers and n_tx_antennas must be powers of two")
        if self.antenna_spacing <= 0:
            raise ValueError("antenna_spacing must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.center_freq

    @property
    def subcarrier_offsets(self) -> np.ndarray:
        """Baseband subcarrier frequencies, uniform grid centred on the carrier."""
        k = np.arange(self.n_subcarriers)
        return (k - self.n_subcarriers / 2) * self.bandwidth / self.n_subcarriers


@dataclass(frozen=True)
class ChannelConfig:
    """Scenario parameters for :func:`sample_paths`.

    ``phase_decorrelation`` scales the random excess phase between the two
    bands (its standard deviation is ``phase_decorrelation * band_gap * delay``)
    and ``gain_decorrelation_freq`` sets the gain correlation
    ``exp(-band_gap / gain_decorrelation_freq)``. With ``grid_aligned`` the
    delays and angles are snapped onto the downlink delay/angle grid, which
    gives exactly sparse angular-delay images.
    """

    uplink: BandSpec
    downlink: BandSpec
    n_clusters: int = 6
    rays_per_cluster: int = 4
    max_delay: float = 1.6e-6
    delay_decay: float = 0.5e-6
    cluster_delay_spread: float = 100e-9
    angle_spread: float = np.deg2rad(2.0)
    phase_decorrelation: float = 1.0
    gain_decorrelation_freq: float = 1e9
    seed: int = 0
    grid_aligned: bool = False

    def __post_init__(self):
        if self.uplink.n_tx_antennas != self.downlink.n_tx_antennas:
            raise ValueError("uplink and downlink must share the antenna count")
        if self.uplink.antenna_spacing != self.downlink.antenna_spacing:
            raise ValueError("uplink and downlink must share the array geometry")
        if self.n_paths < 1:
            raise ValueError("at least one path is required")
        if self.max_delay < 0 or self.delay_decay <= 0 or self.cluster_delay_spread < 0:
            raise ValueError("need max_delay >= 0, delay_decay > 0, cluster_delay_spread >= 0")
        for band in (self.uplink, self.downlink):
            if self.max_delay >= band.n_subcarriers / band.bandwidth:
                raise ValueError(
                    f"max_delay {self.max_delay:g}s aliases on a grid of "
                    f"{band.n_subcarriers} subcarriers at {band.bandwidth:g} Hz"
                )
        if self.phase_decorrelation < 0:
            raise ValueError("phase_decorrelation must be >= 0")
        if self.gain_decorrelation_freq <= 0:
            raise ValueError("gain_decorrelation_freq must be positive")

    @classmethod
    def fdd(
        cls,
        dl_center: float = 5.3e9,
        band_gap: float = 200e6,
        bandwidth: float = 20e6,
        n_subcarriers: int = 256,
        n_tx_antennas: int = 32,
        max_delay: float | None = None,
        **kwargs,
    ) -> ChannelConfig:
        """Build a config with the uplink ``band_gap`` below the downlink.

        The array is spaced at half the downlink wavelength, and ``max_delay``
        defaults to 32 delay taps at the given bandwidth.
        """
        spacing = SPEED_OF_LIGHT / dl_center / 2
        common = dict(
            bandwidth=bandwidth,
            n_subcarriers=n_subcarriers,
            n_tx_antennas=n_tx_antennas,
            antenna_spacing=spacing,
        )
        if max_delay is None:
            max_delay = 32 / bandwidth
        return cls(
            uplink=BandSpec(center_freq=dl_center - band_gap, **common),
            downlink=BandSpec(center_freq=dl_center, **common),
            max_delay=max_delay,
            **kwargs,
        )

    @property
    def band_gap(self) -> float:
        return abs(self.downlink.center_freq - self.uplink.center_freq)

    @property
    def n_paths(self) -> int:
        return self.n_clusters * self.rays_per_cluster

    @property
    def gain_correlation(self) -> float:
        return float(np.exp(-self.band_gap / self.gain_decorrelation_freq))

    def band(self, which: Link) -> BandSpec:
        if which == "uplink":
            return self.uplink
        if which == "downlink":
            return self.downlink
        raise ValueError(f"unknown link {which!r}")

    def replace(self, **changes) -> ChannelConfig:
        return dataclasses.replace(self, **changes)

    def with_bands(
        self, band_gap: float | None = None, bandwidth: float | None = None
    ) -> ChannelConfig:
        """Same scenario with the uplink moved and/or both bandwidths changed.

        The downlink carrier, the array and the physical delay profile are
        kept, so the propagation geometry is unchanged.
        """
        bw = self.downlink.bandwidth if bandwidth is None else bandwidth
        gap = self.band_gap if band_gap is None else band_gap
        dl = dataclasses.replace(self.downlink, bandwidth=bw)
        ul = dataclasses.replace(self.uplink, bandwidth=bw, center_freq=dl.center_freq - gap)
        return dataclasses.replace(self, uplink=ul, downlink=dl)


@dataclass(frozen=True)
class PathSet:
    """Multipath parameters shared by both links, with per-link gains/phases."""

    delays: np.ndarray
    angles: np.ndarray
    mag_ul: np.ndarray
    mag_dl: np.ndarray
    phase_ul: np.ndarray
    phase_dl: np.ndarray
    doppler_angles: np.ndarray
    uplink: BandSpec = field(repr=False)
    downlink: BandSpec = field(repr=False)

    def __len__(self) -> int:
        return len(self.delays)

    def link(self, which: Link) -> tuple[np.ndarray, np.ndarray, BandSpec]:
        if which == "uplink":
            return self.mag_ul, self.phase_ul, self.uplink
        if which == "downlink":
            return self.mag_dl, self.phase_dl, self.downlink
        raise ValueError(f"unknown link {which!r}")

    def equals(self, other: PathSet) -> bool:
        """Bitwise equality of every array and of the band metadata."""
        names = ("delays", "angles", "mag_ul", "mag_dl", "phase_ul", "phase_dl", "doppler_angles")
        return (
            self.uplink == other.uplink
            and self.downlink == other.downlink
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)
        )


@dataclass(frozen=True)
class CsiMatrix:
    """Frequency-domain CSI, antennas x subcarriers."""

    values: np.ndarray
    band: BandSpec

    def __post_init__(self):
        shape = (self.band.n_tx_antennas, self.band.n_subcarriers)
        if self.values.shape != shape:
            raise ValueError(f"CSI shape {self.values.shape} does not match band {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("CSI contains non-finite entries")


def _wrap(phase: np.ndarray) -> np.ndarray:
    return np.mod(phase, 2 * np.pi)


def sample_paths(config: ChannelConfig, rng_seed: int | None = None) -> PathSet:
    """Draw one multipath realization.

    Draw order is fixed and independent of the band gap, so two configs that
    differ only in the uplink carrier produce the same downlink paths for the
    same seed.
    """
    seed = config.seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed)
    n_c, n_r = config.n_clusters, config.rays_per_cluster
    n = n_c * n_r
    dl = config.downlink

    centers = rng.uniform(-np.pi / 2, np.pi / 2, size=n_c)
    offsets = rng.uniform(-config.angle_spread, config.angle_spread, size=(n_c, n_r))
    angles = np.clip(centers[:, None] + offsets, -np.pi / 2, np.pi / 2).ravel()

    # inverse CDF of the exponential profile truncated at max_delay
    u = rng.uniform(size=n_c)
    tail = -np.expm1(-config.max_delay / config.delay_decay)
    cluster_delays = -config.delay_decay * np.log1p(-u * tail)
    excess = rng.exponential(size=(n_c, n_r)) * config.cluster_delay_spread
    delays = np.minimum(cluster_delays[:, None] + excess, config.max_delay).ravel()

    if config.grid_aligned:
        delays = np.floor(delays * dl.bandwidth) / dl.bandwidth
        spacing = dl.antenna_spacing / dl.wavelength
        q = np.round(dl.n_tx_antennas * spacing * np.sin(angles))
        angles = np.arcsin(np.clip(q / (dl.n_tx_antennas * spacing), -1.0, 1.0))

    power = np.exp(-delays / config.delay_decay)
    scale = np.sqrt(power / 2)
    mag_dl = rng.rayleigh(scale=scale)
    mag_other = rng.rayleigh(scale=scale)
    rho = config.gain_correlation
    mag_ul = rho * mag_dl + np.sqrt(1.0 - rho**2) * mag_other

    phase_dl = rng.uniform(0.0, 2 * np.pi, size=n)
    drift = rng.standard_normal(n) * (config.phase_decorrelation * config.band_gap * delays)
    phase_ul = _wrap(phase_dl - drift)

    doppler_angles = rng.uniform(0.0, 2 * np.pi, size=n)
    return PathSet(
        delays=delays,
        angles=angles,
        mag_ul=mag_ul,
        mag_dl=mag_dl,
        phase_ul=phase_ul,
        phase_dl=phase_dl,
        doppler_angles=doppler_angles,
        uplink=config.uplink,
        downlink=config.downlink,
    )


def synthesize_csi(paths: PathSet, band: BandSpec, which: Link) -> CsiMatrix:
    """Sum the paths into an ``Nt x Nc`` frequency response for one link."""
    mag, phase, expected = paths.link(which)
    if band != expected:
        raise ValueError(f"band does not match the {which} band the paths were drawn for")
    n = np.arange(band.n_tx_antennas)
    freqs = band.center_freq + band.subcarrier_offsets
    steer = np.exp(-2j * np.pi * np.outer(n, band.antenna_spacing / band.wavelength * np.sin(paths.angles)))
    # reduce f*tau modulo one cycle before exponentiating to keep the phase exact
    cycles = np.mod(np.outer(paths.delays, freqs), 1.0)
    response = np.exp(-2j * np.pi * cycles)
    gains = mag * np.exp(1j * phase)
    return CsiMatrix(values=steer @ (gains[:, None] * response), band=band)


def evolve_paths(paths: PathSet, doppler_freq: float, dt: float) -> PathSet:
    """Advance every path phase by its Doppler rotation over ``dt`` seconds."""
    if doppler_freq < 0:
        raise ValueError("doppler_freq must be >= 0")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    advance = 2 * np.pi * doppler_freq * np.cos(paths.doppler_angles) * dt
    return dataclasses.replace(
        paths,
        phase_ul=_wrap(paths.phase_ul + advance),
        phase_dl=_wrap(paths.phase_dl + advance),
    )


def path_sequence(
    config: ChannelConfig, seed: int, length: int, doppler_freq: float = 0.0, dt: float = 1e-3
) -> list[PathSet]:
    paths = sample_paths(config, seed)
    seq = [paths]
    for _ in range(length - 1):
        paths = evolve_paths(paths, doppler_freq, dt)
        seq.append(paths)
    return seq


def csi_pair(paths: PathSet) -> tuple[np.ndarray, np.ndarray]:
    """Uplink and downlink CSI values for one path set."""
    ul = synthesize_csi(paths, paths.uplink, "uplink").values
    dl = synthesize_csi(paths, paths.downlink, "downlink").values
    return ul, dl
