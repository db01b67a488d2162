"""Uplink/downlink correlation statistics per CSI representation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelConfig, csi_pair, sample_paths
from .dataset import load_dataset
from .transforms import DEFAULT_DELAY_TAPS, ad_transform, phase_of

REPRESENTATIONS = ("real", "imag", "magnitude", "phase", "abs_real", "abs_imag", "sign_agreement")
DEFAULT_CI_LEVELS = (80.0, 90.0, 95.0)
MIN_SAMPLES = 30

# separate planes are reported; real and imaginary parts are never pooled
REPORT_METADATA = {"pooling": "per-plane", "sign_agreement": "2*fraction-1 over Re and Im sign bits"}

# seed distance between grid points of a sweep
_SWEEP_SEED_STRIDE = 1_000_003


class UndefinedCorrelationError(ValueError):
    """Pearson correlation of a constant vector."""


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(dx @ dx)
    sy = np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def _plane(values: np.ndarray, rep: str) -> np.ndarray:
    if rep == "real":
        return values.real
    if rep == "imag":
        return values.imag
    if rep == "magnitude":
        return np.abs(values)
    if rep == "phase":
        return phase_of(values)
    if rep == "abs_real":
        return np.abs(values.real)
    if rep == "abs_imag":
        return np.abs(values.imag)
    raise ValueError(f"unknown representation {rep!r}")


def sample_correlation(ul: np.ndarray, dl: np.ndarray, rep: str) -> float:
    """Correlation of one representation between one uplink/downlink pair."""
    if rep == "sign_agreement":
        same = np.concatenate([
            (np.signbit(ul.real) == np.signbit(dl.real)).ravel(),
            (np.signbit(ul.imag) == np.signbit(dl.imag)).ravel(),
        ])
        return float(2 * same.mean() - 1)
    return pearson(_plane(ul, rep), _plane(dl, rep))


@dataclass
class CorrelationReport:
    representation: str
    per_sample_corr: np.ndarray
    ci_levels: list[tuple[float, float, float]]
    median: float
    n_undefined: int = 0
    metadata: dict = field(default_factory=lambda: dict(REPORT_METADATA))

    @property
    def n(self) -> int:
        return len(self.per_sample_corr)

    def ci(self, level: float) -> tuple[float, float]:
        for lvl, lo, hi in self.ci_levels:
            if lvl == level:
                return lo, hi
        raise KeyError(level)

    def csv_rows(self) -> list[list]:
        return [[self.representation, self.n, self.median, lvl, lo, hi] for lvl, lo, hi in self.ci_levels]


REPORT_COLUMNS = ["representation", "n", "median", "ci_level", "ci_low", "ci_high"]


def summarize(rep: str, coeffs: Sequence[float], levels: Iterable[float] = DEFAULT_CI_LEVELS) -> CorrelationReport:
    """Empirical percentile intervals over per-sample coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    valid = coeffs[np.isfinite(coeffs)]
    if valid.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples for intervals, got {valid.size}")
    ci = []
    for level in sorted(levels):
        tail = (100.0 - level) / 2
        lo, hi = np.percentile(valid, [tail, 100.0 - tail])
        ci.append((float(level), float(lo), float(hi)))
    return CorrelationReport(
        representation=rep,
        per_sample_corr=valid,
        ci_levels=ci,
        median=float(np.median(valid)),
        n_undefined=int(coeffs.size - valid.size),
    )


def _coefficients(ul_iter, dl_iter, representations) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {rep: [] for rep in representations}
    for ul, dl in zip(ul_iter, dl_iter):
        for rep in representations:
            try:
                out[rep].append(sample_correlation(ul, dl, rep))
            except UndefinedCorrelationError:
                out[rep].append(np.nan)
    return out


def _transformed(csi: np.ndarray, domain: str, n_delay: int, angular: bool):
    for h in csi:
        h = np.asarray(h, dtype=np.complex128)
        yield h if domain == "frequency" else ad_transform(h, n_delay, angular)


def correlation_reports(
    dataset: str | Path,
    representations: Sequence[str] = REPRESENTATIONS,
    n_delay: int = DEFAULT_DELAY_TAPS,
    levels: Iterable[float] = DEFAULT_CI_LEVELS,
    domain: str = "delay",
    angular: bool = True,
) -> dict[str, CorrelationReport]:
    """One report per representation from the first time step of each sample.

    ``domain="frequency"`` skips the transforms and correlates raw subcarrier
    responses.
    """
    if domain not in ("delay", "frequency"):
        raise ValueError(f"unknown domain {domain!r}")
    for rep in representations:
        if rep not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {rep!r}")
    ds = load_dataset(dataset)
    if len(ds) < MIN_SAMPLES:
        raise ValueError(f"dataset has {len(ds)} samples; at least {MIN_SAMPLES} needed")
    ul = _transformed(ds.uplink[:, 0], domain, n_delay, angular)
    dl = _transformed(ds.downlink[:, 0], domain, n_delay, angular)
    coeffs = _coefficients(ul, dl, representations)
    return {rep: summarize(rep, c, levels) for rep, c in coeffs.items()}


def correlation_report(dataset: str | Path, representation: str, n_delay: int = DEFAULT_DELAY_TAPS, **kwargs) -> CorrelationReport:
    return correlation_reports(dataset, [representation], n_delay, **kwargs)[representation]


def reports_to_csv(reports: Iterable[CorrelationReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for report in reports:
        writer.writerows(report.csv_rows())
    return buf.getvalue()


@dataclass(frozen=True)
class SweepRow:
    band_gap: float
    bandwidth: float
    mean_corr: float
    ci_low: float
    ci_high: float
    n_samples: int


SWEEP_COLUMNS = ["band_gap", "bandwidth", "mean_corr", "ci_low", "ci_high", "n_samples"]


@dataclass
class SweepTable:
    rows: list[SweepRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            writer.writerow([r.band_gap, r.bandwidth, r.mean_corr, r.ci_low, r.ci_high, r.n_samples])
        return buf.getvalue()

    def select(self, band_gap: float | None = None, bandwidth: float | None = None) -> list[SweepRow]:
        return [
            r
            for r in self.rows
            if (band_gap is None or r.band_gap == band_gap) and (bandwidth is None or r.bandwidth == bandwidth)
        ]


def magnitude_correlations(config: ChannelConfig, n: int, n_delay: int = DEFAULT_DELAY_TAPS) -> np.ndarray:
    """Per-sample delay-domain magnitude correlation for ``n`` fresh draws."""
    coeffs = np.empty(n)
    for i in range(n):
        ul, dl = csi_pair(sample_paths(config, config.seed + i))
        try:
            coeffs[i] = pearson(np.abs(ad_transform(ul, n_delay)), np.abs(ad_transform(dl, n_delay)))
        except UndefinedCorrelationError:
            coeffs[i] = np.nan
    return coeffs


def sweep_bandgap_bandwidth(
    gaps: Sequence[float],
    bandwidths: Sequence[float],
    base: ChannelConfig,
    n: int,
    n_delay: int = DEFAULT_DELAY_TAPS,
    level: float = 95.0,
) -> SweepTable:
    """Magnitude correlation over a band-gap x bandwidth grid.

    The downlink carrier and the physical delay profile of ``base`` are kept;
    each grid point draws from its own seed range.
    """
    if not gaps or not bandwidths:
        raise ValueError("empty sweep grid")
    if n < MIN_SAMPLES:
        raise ValueError(f"need n >= {MIN_SAMPLES} samples per grid point")
    rows = []
    idx = 0
    for bw in bandwidths:
        for gap in gaps:
            idx += 1
            cfg = base.with_bands(band_gap=gap, bandwidth=bw).replace(seed=base.seed + idx * _SWEEP_SEED_STRIDE)
            report = summarize("magnitude", magnitude_correlations(cfg, n, n_delay), [level])
            lo, hi = report.ci(level)
            rows.append(SweepRow(gap, bw, float(report.per_sample_corr.mean()), lo, hi, report.n))
    return SweepTable(rows)
