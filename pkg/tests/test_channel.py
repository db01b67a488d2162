import dataclasses
import hashlib

import numpy as np
import pytest

from fddcsi.channel import (
    SPEED_OF_LIGHT,
    BandSpec,
    ChannelConfig,
    PathSet,
    csi_pair,
    evolve_paths,
    path_sequence,
    sample_paths,
    synthesize_csi,
)
from fddcsi.dataset import HEADER_SIZE, build_dataset, load_dataset
from fddcsi.transforms import ad_transform


def _single_path(band, delay=0.0, angle=0.0, mag=1.0, phase=0.0, psi=0.0):
    arr = lambda v: np.array([v], dtype=float)
    return PathSet(
        delays=arr(delay),
        angles=arr(angle),
        mag_ul=arr(mag),
        mag_dl=arr(mag),
        phase_ul=arr(phase),
        phase_dl=arr(phase),
        doppler_angles=arr(psi),
        uplink=band,
        downlink=band,
    )


def _band(nt=4, nc=8, fc=5.3e9, bw=20e6):
    return BandSpec(center_freq=fc, bandwidth=bw, n_subcarriers=nc, n_tx_antennas=nt, antenna_spacing=SPEED_OF_LIGHT / fc / 2)


# -- configuration guards ------------------------------------------------------


def test_bandspec_rejects_bad_values():
    with pytest.raises(ValueError):
        _band(nc=12)
    with pytest.raises(ValueError):
        BandSpec(center_freq=5e6, bandwidth=20e6)
    with pytest.raises(ValueError):
        BandSpec(center_freq=5e9, bandwidth=20e6, antenna_spacing=0.0)


def test_config_guards():
    with pytest.raises(ValueError):
        ChannelConfig.fdd(max_delay=256 / 20e6)  # aliasing
    with pytest.raises(ValueError):
        ChannelConfig.fdd(n_clusters=0)
    with pytest.raises(ValueError):
        ChannelConfig.fdd(phase_decorrelation=-1.0)
    with pytest.raises(ValueError):
        ChannelConfig.fdd(gain_decorrelation_freq=0.0)


def test_default_geometry():
    cfg = ChannelConfig.fdd()
    assert cfg.n_paths == 24
    assert cfg.band_gap == pytest.approx(200e6)
    assert cfg.max_delay == pytest.approx(32 / 20e6)
    assert cfg.gain_correlation == pytest.approx(np.exp(-0.2))


# -- sample_paths ----------------------------------------------------------------


def test_zero_gap_gives_identical_bands():
    p = sample_paths(ChannelConfig.fdd(band_gap=0.0), 7)
    assert np.array_equal(p.mag_ul, p.mag_dl)
    assert np.array_equal(p.phase_ul, p.phase_dl)


def test_fixed_seed_is_bitwise_reproducible():
    cfg = ChannelConfig.fdd()
    assert sample_paths(cfg, 3).equals(sample_paths(cfg, 3))
    assert not sample_paths(cfg, 3).equals(sample_paths(cfg, 4))


def test_path_ranges():
    cfg = ChannelConfig.fdd()
    for seed in range(20):
        p = sample_paths(cfg, seed)
        assert len(p) == cfg.n_paths
        assert np.all((p.delays >= 0) & (p.delays <= cfg.max_delay))
        assert np.all(p.mag_ul >= 0) and np.all(p.mag_dl >= 0)
        assert np.all(np.abs(p.angles) <= np.pi / 2)
        assert np.all(np.round(p.delays * cfg.downlink.bandwidth) < cfg.downlink.n_subcarriers)


def test_magnitude_mixing_correlation():
    # a flat power profile gives every path the same Rayleigh law, where the
    # mixing rule yields corr = exp(-gap / f_dec) exactly
    cfg = ChannelConfig.fdd(band_gap=200e6, gain_decorrelation_freq=400e6, delay_decay=1e3)
    ul, dl = [], []
    for seed in range(420):
        p = sample_paths(cfg, seed)
        ul.append(p.mag_ul)
        dl.append(p.mag_dl)
    r = np.corrcoef(np.concatenate(ul), np.concatenate(dl))[0, 1]
    assert abs(r - np.exp(-0.5)) < 0.05


def _drift(p):
    return np.angle(np.exp(1j * (p.phase_dl - p.phase_ul)))


def test_no_phase_drift_without_kappa():
    p = sample_paths(ChannelConfig.fdd(phase_decorrelation=0.0), 1)
    assert np.allclose(_drift(p), 0.0, atol=1e-12)


def test_phase_drift_std_follows_kappa_gap_delay():
    kappa = 1e-3
    cfg = ChannelConfig.fdd(band_gap=200e6, phase_decorrelation=kappa)
    z = np.concatenate([_drift(p) / (cfg.band_gap * p.delays) for p in (sample_paths(cfg, s) for s in range(300))])
    z = z[np.isfinite(z)]
    assert np.std(z) == pytest.approx(kappa, rel=0.05)


def test_downlink_invariant_to_band_gap():
    a = sample_paths(ChannelConfig.fdd(band_gap=0.0), 5)
    b = sample_paths(ChannelConfig.fdd(band_gap=800e6), 5)
    assert np.array_equal(a.mag_dl, b.mag_dl)
    assert np.array_equal(a.phase_dl, b.phase_dl)
    assert np.array_equal(a.delays, b.delays)


# -- synthesize_csi ----------------------------------------------------------------


def test_single_trivial_path_is_all_ones():
    band = _band()
    h = synthesize_csi(_single_path(band), band, "downlink").values
    assert np.allclose(h, 1.0, atol=1e-12)


def test_unit_delay_gives_linear_phase():
    band = _band(nt=1, nc=16)
    h = synthesize_csi(_single_path(band, delay=1 / band.bandwidth), band, "downlink").values[0]
    assert np.allclose(np.abs(h), 1.0)
    step = np.angle(h[1:] / h[:-1])
    assert np.allclose(step, -2 * np.pi / band.n_subcarriers)


def test_two_paths_match_direct_summation():
    band = _band(nt=2, nc=4)
    p = dataclasses.replace(
        _single_path(band),
        delays=np.array([30e-9, 110e-9]),
        angles=np.array([0.3, -0.7]),
        mag_dl=np.array([0.8, 0.5]),
        phase_dl=np.array([1.1, 4.0]),
        mag_ul=np.array([0.8, 0.5]),
        phase_ul=np.array([1.1, 4.0]),
        doppler_angles=np.zeros(2),
    )
    h = synthesize_csi(p, band, "downlink").values
    d_over_lambda = band.antenna_spacing / band.wavelength
    expect = np.zeros((2, 4), complex)
    for n in range(2):
        for k in range(4):
            fk = (k - 2) * band.bandwidth / 4
            for a, ph, tau, th in zip(p.mag_dl, p.phase_dl, p.delays, p.angles):
                expect[n, k] += (
                    a * np.exp(1j * ph) * np.exp(-2j * np.pi * (band.center_freq + fk) * tau) * np.exp(-2j * np.pi * n * d_over_lambda * np.sin(th))
                )
    assert np.allclose(h, expect, atol=1e-9)


def test_band_mismatch_rejected():
    cfg = ChannelConfig.fdd()
    p = sample_paths(cfg, 0)
    with pytest.raises(ValueError):
        synthesize_csi(p, cfg.uplink, "downlink")


def test_reciprocity_at_zero_gap_and_kappa():
    cfg = ChannelConfig.fdd(band_gap=0.0, phase_decorrelation=0.0)
    ul, dl = csi_pair(sample_paths(cfg, 2))
    assert np.allclose(ul, dl)


def test_energy_independent_of_carrier():
    e = []
    for fc in (2e9, 5.3e9):
        cfg = ChannelConfig.fdd(dl_center=fc)
        e.append(np.mean([np.sum(np.abs(csi_pair(sample_paths(cfg, s))[1]) ** 2) for s in range(300)]))
    assert e[0] == pytest.approx(e[1], rel=0.1)


# -- temporal evolution ------------------------------------------------------------------


def test_zero_doppler_is_identity():
    p = sample_paths(ChannelConfig.fdd(), 0)
    assert evolve_paths(p, 0.0, 1e-3).equals(p)


def test_half_turn_advance():
    band = _band()
    p = evolve_paths(_single_path(band), 100.0, 5e-3)
    assert p.phase_dl[0] == pytest.approx(np.pi)
    assert p.phase_ul[0] == pytest.approx(np.pi)
    assert np.array_equal(p.delays, [0.0])


def test_negative_inputs_rejected():
    p = sample_paths(ChannelConfig.fdd(), 0)
    with pytest.raises(ValueError):
        evolve_paths(p, 10.0, -1.0)
    with pytest.raises(ValueError):
        evolve_paths(p, -1.0, 1e-3)


def test_temporal_autocorrelation_decays():
    cfg = ChannelConfig.fdd()
    lags = (1, 5, 15)
    frames = []
    for seed in range(60):
        seq = path_sequence(cfg, seed, 20, doppler_freq=50.0, dt=1e-3)
        frames.append([np.abs(ad_transform(csi_pair(seq[t])[1])).ravel() for t in (0,) + lags])
    frames = np.array(frames)  # (draw, lag index, tap)
    r = [np.corrcoef(frames[:, 0].ravel(), frames[:, i + 1].ravel())[0, 1] for i in range(len(lags))]
    assert r[0] > r[1] > r[2]


# -- dataset file ----------------------------------------------------------------------


def test_dataset_size_and_checksum(tmp_path):
    cfg = ChannelConfig.fdd(n_subcarriers=64, n_tx_antennas=8, bandwidth=20e6)
    a = build_dataset(cfg, 10, 1, tmp_path / "a.bin")
    b = build_dataset(cfg, 10, 1, tmp_path / "b.bin")
    assert a.n_bytes == HEADER_SIZE + 10 * 2 * 8 * 64 * 2 * 4
    assert a.checksum == b.checksum
    assert hashlib.sha256((tmp_path / "a.bin").read_bytes()).hexdigest() == a.checksum


def test_dataset_roundtrip(tmp_path):
    cfg = ChannelConfig.fdd(n_subcarriers=64, n_tx_antennas=8)
    build_dataset(cfg, 3, 2, tmp_path / "d.bin", doppler_freq=20.0)
    ds = load_dataset(tmp_path / "d.bin")
    assert ds.csi.shape == (3, 2, 2, 8, 64)
    seq = path_sequence(cfg, cfg.seed + 1, 2, 20.0, 1e-3)
    ul, dl = csi_pair(seq[1])
    assert np.allclose(ds.uplink[1, 1], ul.astype(np.complex64))
    assert np.allclose(ds.downlink[1, 1], dl.astype(np.complex64))


def test_truncated_dataset_rejected(tmp_path):
    cfg = ChannelConfig.fdd(n_subcarriers=64, n_tx_antennas=8)
    build_dataset(cfg, 2, 1, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    (tmp_path / "d.bin").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "d.bin")
