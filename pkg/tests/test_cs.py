import numpy as np
import pytest

from fddcsi.channel import ChannelConfig, csi_pair, sample_paths
from fddcsi.cs import MeasurementEnsemble, cs_encode, cs_roundtrip, default_sparsity, omp_path, omp_recover
from fddcsi.metrics import nmse_db
from fddcsi.transforms import ad_transform


def test_zero_input_zero_measurements():
    ens = MeasurementEnsemble.gaussian(10, 32, seed=0)
    assert np.array_equal(cs_encode(np.zeros((2, 4, 4)), ens), np.zeros(10))


def test_identity_ensemble_is_vectorization():
    x = np.arange(32.0).reshape(2, 4, 4)
    assert np.array_equal(cs_encode(x, MeasurementEnsemble(np.eye(32))), x.ravel())


def test_seed_reproducible_and_batched():
    x = np.random.default_rng(0).standard_normal((3, 2, 4, 4))
    a = cs_encode(x, MeasurementEnsemble.gaussian(8, 32, seed=5))
    b = cs_encode(x, MeasurementEnsemble.gaussian(8, 32, seed=5))
    assert np.array_equal(a, b)
    assert np.allclose(a[1], cs_encode(x[1], MeasurementEnsemble.gaussian(8, 32, seed=5)))


def test_ensemble_guards():
    with pytest.raises(ValueError):
        MeasurementEnsemble(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        cs_encode(np.zeros(7), MeasurementEnsemble.gaussian(3, 8))
    assert MeasurementEnsemble.for_ratio(1 / 16, 32, 32).n_measurements == 128


def _sparse(seed, n=64, k=2):
    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    x[rng.choice(n, k, replace=False)] = rng.standard_normal(k) + np.sign(rng.standard_normal(k))
    return x


def test_exact_recovery_of_two_sparse():
    ok = 0
    for seed in range(100):
        x = _sparse(seed)
        ens = MeasurementEnsemble.gaussian(24, 64, seed=1000 + seed)
        ok += np.linalg.norm(omp_recover(ens.matrix @ x, ens, 2) - x) < 1e-6
    assert ok >= 99


def test_k_zero_returns_zero():
    ens = MeasurementEnsemble.gaussian(24, 64, seed=0)
    y = ens.matrix @ _sparse(0)
    res = omp_path(y, ens, 0)
    assert np.array_equal(res.x, np.zeros(64))
    assert res.residual == pytest.approx(np.linalg.norm(y))


def test_k_above_measurements_rejected():
    ens = MeasurementEnsemble.gaussian(4, 16, seed=0)
    with pytest.raises(ValueError):
        omp_path(np.zeros(4), ens, 5)


def test_residual_monotone_and_orthogonal():
    rng = np.random.default_rng(2)
    ens = MeasurementEnsemble.gaussian(40, 128, seed=3)
    y = rng.standard_normal(40)
    res = omp_path(y, ens, 20, tol=0)
    assert all(b <= a + 1e-12 for a, b in zip(res.residual_norms, res.residual_norms[1:]))
    r = y - ens.matrix @ res.x
    assert np.max(np.abs(ens.matrix[:, res.support].T @ r)) < 1e-10


def test_tolerance_stops_early():
    ens = MeasurementEnsemble.gaussian(24, 64, seed=4)
    res = omp_path(ens.matrix @ _sparse(4), ens, 10)
    assert res.stopped == "tolerance"
    assert len(res.support) == 2


def test_rank_deficient_active_set_stops():
    # only one independent direction: the second atom cannot be refit
    phi = np.array([[1.0, 2.0, -1.0], [0.0, 0.0, 0.0]])
    res = omp_path(np.array([1.0, 1.0]), MeasurementEnsemble(phi), 2, tol=0)
    assert res.stopped == "rank_deficient"
    assert len(res.support) == 1


def test_scaling_equivariance():
    ens = MeasurementEnsemble.gaussian(30, 64, seed=5)
    y = np.random.default_rng(6).standard_normal(30)
    assert np.allclose(omp_recover(3.5 * y, ens, 8, tol=0), 3.5 * omp_recover(y, ens, 8, tol=0))


def _cs_nmse(grid_aligned, n=3):
    cfg = ChannelConfig.fdd(grid_aligned=grid_aligned)
    ad = np.stack([ad_transform(csi_pair(sample_paths(cfg, s))[1], 32) for s in range(n)])
    ens = MeasurementEnsemble.for_ratio(1 / 4, 32, 32, seed=0)
    k = default_sparsity(cfg.n_paths)
    return nmse_db(ad, cs_roundtrip(ad, ens, k))


def test_on_grid_recovers_off_grid_leaks():
    on, off = _cs_nmse(True), _cs_nmse(False)
    assert on < -20
    assert off > on + 10
