"""Ideal-anomaly reconstruction metrics and covariance-model evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .geometry import Grid
from .stats import HermitianCovariance, sample_mean_cov

TEMPLATE_KINDS = ("point", "dual-point")
COVARIANCE_MODEL_KINDS = ("full", "block-diagonal", "diagonal")

DEFAULT_ANOMALY_AMPLITUDE = 1000.0 + 0.0j

_WHITENING_RIDGE = 1e-8


@dataclass(frozen=True)
class AnomalyTemplate:
    """Ideal anomaly over the candidate region: support indices and amplitude."""

    kind: str
    support: tuple[int, ...]
    amplitude: complex = DEFAULT_ANOMALY_AMPLITUDE

    def vector(self, p_an: int) -> np.ndarray:
        out = np.zeros(p_an, dtype=complex)
        out[list(self.support)] = self.amplitude
        return out


def anomaly_template(
    grid: Grid, kind: str = "point", amplitude: complex = DEFAULT_ANOMALY_AMPLITUDE
) -> AnomalyTemplate:
    """Point template at the degree of freedom nearest the candidate-region
    center; dual-point adds its nearest neighbor. Ties break toward the
    lowest linear grid index."""
    if kind not in TEMPLATE_KINDS:
        raise ConfigError(f"unknown template kind: {kind!r}")
    positions = grid.anomaly_positions()
    if positions.shape[0] == 0:
        raise DomainError("grid has an empty candidate region")
    center = positions.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(positions - center, axis=1)))
    if kind == "point":
        return AnomalyTemplate(kind, (first,), amplitude)
    dist = np.linalg.norm(positions - positions[first], axis=1)
    dist[first] = np.inf
    second = int(np.argmin(dist))
    return AnomalyTemplate(kind, (first, second), amplitude)


@dataclass(frozen=True)
class ReconQuality:
    eps_loc: float
    max_spurious: float
    gamma_tp: float
    nmse: float
    false_alarms: int


def recon_quality(
    x_hat: np.ndarray,
    x_true: np.ndarray,
    grid: Grid,
    selection: np.ndarray | None = None,
    support: Sequence[int] | None = None,
) -> ReconQuality:
    """Peak-location, spurious-peak, NMSE and false-alarm metrics of a
    reconstruction against a baseline vector.

    The target support defaults to the nonzeros of x_true; pass it explicitly
    when x_true is a dense baseline (e.g. the clean-target reconstruction).
    """
    x_hat = np.asarray(x_hat, dtype=complex)
    x_true = np.asarray(x_true, dtype=complex)
    if x_hat.shape != x_true.shape:
        raise DomainError("reconstruction and template must share a shape")
    selection = grid.anomaly_selection if selection is None else np.asarray(selection, dtype=int)
    if x_hat.size != selection.size:
        raise DomainError("vector length must match the candidate selection")
    true_mag = np.abs(x_true)
    if not true_mag.any():
        raise DomainError("NMSE undefined for an all-zero template")
    positions = grid.voxel_centers[selection]
    hat_mag = np.abs(x_hat)
    # np.argmax takes the lowest index on exact ties
    peak_est = positions[int(np.argmax(hat_mag))]
    peak_true = positions[int(np.argmax(true_mag))]
    if support is None:
        support_mask = true_mag > 0
    else:
        support_mask = np.zeros(x_true.size, dtype=bool)
        support_mask[list(support)] = True
    off = ~support_mask
    max_spurious = float(hat_mag[off].max()) if off.any() else 0.0
    max_target = float(hat_mag[support_mask].max())
    gamma_tp = math.inf if max_spurious == 0.0 else max_target / max_spurious
    nmse = float(np.linalg.norm(x_hat - x_true) ** 2 / np.linalg.norm(x_true) ** 2)
    threshold = 0.5 * float(true_mag.max())
    false_alarms = int((hat_mag[off] > threshold).sum())
    return ReconQuality(
        eps_loc=float(np.linalg.norm(peak_est - peak_true)),
        max_spurious=max_spurious,
        gamma_tp=gamma_tp,
        nmse=nmse,
        false_alarms=false_alarms,
    )


def approximate_covariance(r: HermitianCovariance, kind: str) -> HermitianCovariance:
    """Mask a covariance to its full / block-diagonal / diagonal model."""
    if kind not in COVARIANCE_MODEL_KINDS:
        raise ConfigError(f"unknown covariance model kind: {kind!r}")
    if kind == "full":
        entries = r.entries
    elif kind == "block-diagonal":
        entries = r.block_diagonal_part()
    else:
        entries = np.diag(np.diag(r.entries))
    return HermitianCovariance(entries, block_size=r.block_size)


def _inverse_sqrt(r: HermitianCovariance) -> np.ndarray:
    """Hermitian inverse square root with a trace-scaled ridge."""
    ridge = _WHITENING_RIDGE * max(r.trace(), 0.0) / r.dim
    vals, vecs = np.linalg.eigh(r.entries + ridge * np.eye(r.dim))
    if np.any(vals <= 0):
        raise NumericalError("covariance model is singular even after ridge")
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


def whitening_error(
    r_model: HermitianCovariance, background_samples: np.ndarray
) -> float:
    """Frobenius deviation of the whitened-sample covariance from identity."""
    samples = np.asarray(background_samples, dtype=complex)
    whitener = _inverse_sqrt(r_model)
    whitened = samples @ whitener.T  # row l becomes W @ x_l
    _, cov = sample_mean_cov(whitened)
    dim = r_model.dim
    return float(np.linalg.norm(cov.entries - np.eye(dim)) / math.sqrt(dim))


@dataclass(frozen=True)
class DetectionResult:
    p_d_at_fa05: float
    z_margin: float
    threshold: float


def detection_eval(
    r_model: HermitianCovariance,
    target: np.ndarray,
    bg_samples: np.ndarray,
    tgt_samples: np.ndarray,
) -> DetectionResult:
    """Whitened matched-filter detection at a fixed 5% false-alarm point.

    The score of a sample x is |<W t, W x>|^2 / ||W t||^2 with W the model
    whitener; the threshold is the linearly interpolated 95th percentile of
    the background scores.
    """
    bg = np.asarray(bg_samples, dtype=complex)
    tgt = np.asarray(tgt_samples, dtype=complex)
    if bg.shape[0] < 100:
        raise DomainError("need at least 100 background samples for the threshold")
    whitener = _inverse_sqrt(r_model)
    wt = whitener @ np.asarray(target, dtype=complex)
    energy = float(np.linalg.norm(wt) ** 2)
    if energy == 0.0:
        raise DomainError("target vector whitens to zero")
    direction = wt.conj() @ whitener  # row vector: <W t, W x> = direction @ x

    def scores(samples: np.ndarray) -> np.ndarray:
        return np.abs(samples @ direction) ** 2 / energy

    bg_scores = scores(bg)
    tgt_scores = scores(tgt)
    threshold = float(np.percentile(bg_scores, 95))
    p_d = float((tgt_scores > threshold).mean())
    spread = float(bg_scores.std(ddof=1))
    if spread == 0.0:
        raise DomainError("separation margin undefined for constant scores")
    z = (float(tgt_scores.mean()) - float(bg_scores.mean())) / spread
    return DetectionResult(p_d_at_fa05=p_d, z_margin=z, threshold=threshold)
