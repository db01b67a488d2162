import csv
import io

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fddcsi.channel import ChannelConfig
from fddcsi.correlation import (
    MIN_SAMPLES,
    REPRESENTATIONS,
    SWEEP_COLUMNS,
    UndefinedCorrelationError,
    correlation_report,
    correlation_reports,
    pearson,
    reports_to_csv,
    sample_correlation,
    summarize,
    sweep_bandgap_bandwidth,
)
from fddcsi.dataset import build_dataset

SMALL = dict(n_subcarriers=64, n_tx_antennas=16, bandwidth=20e6)


def test_pearson_known_values():
    x = np.array([1.0, 2.0, 3.0])
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)
    assert pearson(x, [1.0, 2.0, 4.0]) == pytest.approx(0.9819805060619657, abs=1e-12)


def test_pearson_guards():
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        pearson([1.0], [2.0])
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [1.0, 2.0, 3.0])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=30), st.floats(-10, 10), st.floats(-10, 10))
def test_pearson_symmetry_scale_and_bounds(pairs, a, b):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3 and abs(a) > 1e-2)
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    assert pearson(y, x) == pytest.approx(r, abs=1e-9)
    assert pearson(a * x + b, y) == pytest.approx(np.sign(a) * r, abs=1e-6)


def test_sign_agreement_extremes():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    assert sample_correlation(z, z, "sign_agreement") == 1.0
    assert sample_correlation(z, -z, "sign_agreement") == -1.0


def test_identical_channels_correlate_perfectly(tmp_path):
    cfg = ChannelConfig.fdd(band_gap=0.0, phase_decorrelation=0.0, **SMALL)
    build_dataset(cfg, MIN_SAMPLES, 1, tmp_path / "d.bin")
    reports = correlation_reports(tmp_path / "d.bin")
    for rep in REPRESENTATIONS:
        assert np.allclose(reports[rep].per_sample_corr, 1.0, atol=1e-5), rep


def test_small_dataset_refused(tmp_path):
    build_dataset(ChannelConfig.fdd(**SMALL), MIN_SAMPLES - 1, 1, tmp_path / "d.bin")
    with pytest.raises(ValueError):
        correlation_report(tmp_path / "d.bin", "magnitude")


def test_unknown_representation(tmp_path):
    build_dataset(ChannelConfig.fdd(**SMALL), MIN_SAMPLES, 1, tmp_path / "d.bin")
    with pytest.raises(ValueError):
        correlation_report(tmp_path / "d.bin", "angle")


def test_representation_ordering(tmp_path):
    build_dataset(ChannelConfig.fdd(band_gap=200e6), 300, 1, tmp_path / "d.bin")
    r = correlation_reports(tmp_path / "d.bin")
    assert r["magnitude"].median > r["abs_real"].median > r["real"].median
    assert abs(r["phase"].median) < 0.2


def test_large_kappa_centers_phase_near_zero(tmp_path):
    build_dataset(ChannelConfig.fdd(phase_decorrelation=10.0, **SMALL), 200, 1, tmp_path / "d.bin")
    rep = correlation_report(tmp_path / "d.bin", "phase")
    assert abs(np.mean(rep.per_sample_corr)) < 0.05


def test_intervals_nest_and_contain_median():
    rng = np.random.default_rng(1)
    rep = summarize("magnitude", rng.uniform(-1, 1, 500))
    widths = [hi - lo for _, lo, hi in rep.ci_levels]
    assert widths == sorted(widths)
    for _, lo, hi in rep.ci_levels:
        assert lo <= rep.median <= hi


def test_summarize_counts_undefined():
    coeffs = np.r_[np.linspace(-1, 1, 40), np.nan, np.nan]
    rep = summarize("phase", coeffs)
    assert rep.n == 40
    assert rep.n_undefined == 2


def test_report_csv_columns():
    rep = summarize("magnitude", np.linspace(0, 1, 50))
    rows = list(csv.reader(io.StringIO(reports_to_csv([rep]))))
    assert rows[0] == ["representation", "n", "median", "ci_level", "ci_low", "ci_high"]
    assert len(rows) == 1 + 3
    assert rep.metadata["pooling"] == "per-plane"


def test_sweep_guards():
    base = ChannelConfig.fdd(**SMALL)
    with pytest.raises(ValueError):
        sweep_bandgap_bandwidth([], [20e6], base, 50)
    with pytest.raises(ValueError):
        sweep_bandgap_bandwidth([50e6], [20e6], base, 0)


def test_sweep_table_shape_and_determinism():
    base = ChannelConfig.fdd(**SMALL)
    a = sweep_bandgap_bandwidth([50e6, 400e6], [10e6, 20e6], base, MIN_SAMPLES)
    b = sweep_bandgap_bandwidth([50e6, 400e6], [10e6, 20e6], base, MIN_SAMPLES)
    assert len(a.rows) == 4
    assert a.rows == b.rows
    header = a.to_csv().splitlines()[0].split(",")
    assert header == SWEEP_COLUMNS
    for r in a.rows:
        assert r.ci_low <= r.ci_high
    assert len(a.select(bandwidth=10e6)) == 2
