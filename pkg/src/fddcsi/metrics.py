"""Reconstruction quality metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

NEG_INF_SENTINEL = "-inf"


@dataclass(frozen=True)
class Nmse:
    db: float
    per_sample: np.ndarray  # linear ratios of the scored samples
    n_skipped: int


def _batched(truth, estimate):
    t = np.asarray(truth)
    e = np.asarray(estimate)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: truth {t.shape} vs estimate {e.shape}")
    if t.ndim < 2:
        raise ValueError("expected at least a 2-D image per sample")
    if t.ndim == 2:
        t, e = t[None], e[None]
    return t.reshape(t.shape[0], -1, t.shape[-1]), e.reshape(e.shape[0], -1, e.shape[-1])


def nmse(truth, estimate) -> Nmse:
    """Mean over samples of ``||H_hat - H||^2 / ||H||^2`` in dB; zero-norm truths are skipped."""
    t, e = _batched(truth, estimate)
    power = np.sum(np.abs(t) ** 2, axis=(1, 2))
    keep = power > 0
    skipped = int(np.count_nonzero(~keep))
    if skipped:
        log.warning("skipping %d zero-norm truth samples", skipped)
    if not keep.any():
        raise ValueError("every truth sample has zero norm")
    ratio = np.sum(np.abs(e[keep] - t[keep]) ** 2, axis=(1, 2)) / power[keep]
    mean = float(np.mean(ratio))
    return Nmse(-math.inf if mean == 0 else 10 * math.log10(mean), ratio, skipped)


def nmse_db(truth, estimate) -> float:
    return nmse(truth, estimate).db


def cosine_sim(truth, estimate) -> float:
    """Mean over samples and delay columns of ``|<h_hat, h>| / (||h_hat|| ||h||)``.

    Columns with zero truth norm are skipped; a zero estimate column scores 0.
    """
    t, e = _batched(truth, estimate)
    nt = np.linalg.norm(t, axis=1)
    ne = np.linalg.norm(e, axis=1)
    keep = nt > 0
    if not keep.any():
        raise ValueError("every truth column has zero norm")
    inner = np.abs(np.sum(np.conj(e) * t, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(ne > 0, inner / (nt * ne), 0.0)
    return float(np.clip(np.mean(rho[keep]), 0.0, 1.0))


def format_db(value: float) -> str | float:
    """JSON/CSV-safe dB value: ``-inf`` becomes the sentinel string."""
    return NEG_INF_SENTINEL if value == -math.inf else value
