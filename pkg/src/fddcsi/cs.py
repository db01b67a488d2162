"""Compressive-sensing reference codec: Gaussian measurements and OMP recovery."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class MeasurementEnsemble:
    """Real ``M x n`` sensing matrix shared by both ends through its seed."""

    matrix: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 1:
            raise ValueError(f"ensemble must be a non-empty 2-D matrix, got shape {m.shape}")
        if np.any(np.linalg.norm(m, axis=0) == 0):
            raise ValueError("ensemble has an all-zero column")
        object.__setattr__(self, "matrix", m)

    @property
    def n_measurements(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def gaussian(cls, n_measurements: int, width: int, seed: int = 0) -> "MeasurementEnsemble":
        """Entries i.i.d. N(0, 1/M) so columns have unit expected norm."""
        if not 1 <= n_measurements:
            raise ValueError("need at least one measurement")
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n_measurements, width)) / np.sqrt(n_measurements), seed)

    @classmethod
    def for_ratio(cls, cr: float, n_tx: int, n_delay: int, seed: int = 0) -> "MeasurementEnsemble":
        width = 2 * n_tx * n_delay
        return cls.gaussian(max(1, int(round(cr * width))), width, seed)


def cs_encode(planes, ensemble: MeasurementEnsemble) -> np.ndarray:
    """``y = Phi @ vec(planes)``; leading batch axes are kept when the rest matches the width."""
    x = np.asarray(planes, dtype=np.float64)
    n = ensemble.width
    if x.size == n:
        return ensemble.matrix @ x.ravel()
    if x.ndim >= 2 and int(np.prod(x.shape[1:])) == n:
        return x.reshape(len(x), n) @ ensemble.matrix.T
    raise ValueError(f"planes of shape {x.shape} do not match ensemble width {n}")


@dataclass
class OmpResult:
    x: np.ndarray
    support: list[int]
    residual_norms: list[float] = field(default_factory=list)
    stopped: str = "sparsity"  # sparsity | tolerance | rank_deficient

    @property
    def residual(self) -> float:
        return self.residual_norms[-1]


def omp_path(y, ensemble: MeasurementEnsemble, k: int, tol: float = DEFAULT_TOL) -> OmpResult:
    """Orthogonal matching pursuit with a full least-squares refit every step.

    Atoms are picked by normalized correlation with the residual. Iteration
    stops after ``k`` atoms, once the residual norm drops below ``tol``, or
    when a new atom would make the active set rank deficient (logged).
    """
    phi = ensemble.matrix
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (phi.shape[0],):
        raise ValueError(f"measurement vector shape {y.shape} does not match ensemble {phi.shape}")
    if not 0 <= k <= phi.shape[0]:
        raise ValueError(f"sparsity k={k} must lie in [0, M={phi.shape[0]}]")
    norms = np.linalg.norm(phi, axis=0)
    x = np.zeros(phi.shape[1])
    support: list[int] = []
    coef = np.zeros(0)
    residual = y.copy()
    history = [float(np.linalg.norm(residual))]
    stopped = "sparsity"
    for _ in range(k):
        if history[-1] < tol:
            stopped = "tolerance"
            break
        score = np.abs(phi.T @ residual) / norms
        score[support] = -1.0
        j = int(np.argmax(score))
        trial = support + [j]
        sub = phi[:, trial]
        if np.linalg.matrix_rank(sub) < len(trial):
            log.warning("OMP active set became rank deficient at %d atoms; stopping", len(trial))
            stopped = "rank_deficient"
            break
        support = trial
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ coef
        history.append(float(np.linalg.norm(residual)))
    else:
        if history[-1] < tol and k > 0:
            stopped = "tolerance"
    x[support] = coef
    return OmpResult(x, support, history, stopped)


def omp_recover(y, ensemble: MeasurementEnsemble, k: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Sparse estimate of ``vec(planes)`` from ``y``."""
    return omp_path(y, ensemble, k, tol).x


def default_sparsity(n_paths: int) -> int:
    return 2 * n_paths


def cs_roundtrip(ad, ensemble: MeasurementEnsemble, k: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Encode complex angular-delay images ``(B, Nt, Ld)`` as stacked real/imag planes and recover them."""
    ad = np.asarray(ad)
    planes = np.stack([ad.real, ad.imag], axis=1)
    y = cs_encode(planes, ensemble)
    out = np.stack([omp_recover(v, ensemble, min(k, ensemble.n_measurements), tol) for v in y]).reshape(planes.shape)
    return out[:, 0] + 1j * out[:, 1]
