"""Tikhonov receiver and reconstruction-domain transfer of residual responses.

The receiver solves min ||y - H_an x||^2 + lambda^2 ||x||^2 over the anomaly
candidate region. All solves share one cached eigendecomposition of the
normal-equation metric, so the direct route (receiver applied to a stacked
response) and the right-hand-side accumulation route agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericalError
from .forward import ObservationResponse, PropagationMatrix
from .stats import HermitianCovariance


def _as_matrix(h) -> np.ndarray:
    if isinstance(h, PropagationMatrix):
        return h.entries
    return np.asarray(h, dtype=complex)


def build_H_an(
    h_matrices: Sequence[np.ndarray | PropagationMatrix],
    selection: np.ndarray,
) -> np.ndarray:
    """Vertically stacked per-channel propagation matrices, restricted to the
    anomaly candidate columns."""
    selection = np.asarray(selection, dtype=int)
    blocks = []
    width = None
    for h in h_matrices:
        entries = _as_matrix(h)
        if width is None:
            width = entries.shape[1]
        elif entries.shape[1] != width:
            raise DomainError("per-channel matrices must share the voxel dimension")
        blocks.append(entries[:, selection])
    if not blocks:
        raise DomainError("need at least one channel matrix")
    return np.vstack(blocks)


class TikhonovReceiver:
    """Regularized linear receiver over the anomaly candidate region."""

    def __init__(self, h_an: np.ndarray, lam: float):
        h_an = np.asarray(h_an, dtype=complex)
        if h_an.ndim != 2:
            raise DomainError("stacked matrix must be 2-D")
        if not lam > 0:
            raise DomainError("regularization parameter must be positive")
        self.h_an = h_an
        self.lam = float(lam)
        gram = h_an.conj().T @ h_an
        self.gram = 0.5 * (gram + gram.conj().T)
        try:
            vals, vecs = np.linalg.eigh(self.gram)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("normal-matrix factorization failed") from exc
        # nonincreasing modal values, clamped PSD
        self.modal_values = np.clip(vals[::-1], 0.0, None)
        self.modal_basis = vecs[:, ::-1].copy()
        self._shrink = 1.0 / (self.modal_values + self.lam**2)

    @property
    def p_an(self) -> int:
        return self.h_an.shape[1]

    @property
    def observation_dim(self) -> int:
        return self.h_an.shape[0]

    def solve_normal(self, rhs: np.ndarray) -> np.ndarray:
        """(gram + lambda^2 I)^{-1} rhs through the cached eigendecomposition."""
        rhs = np.asarray(rhs, dtype=complex)
        coeff = self.modal_basis.conj().T @ rhs
        scaled = self._shrink * coeff if rhs.ndim == 1 else self._shrink[:, None] * coeff
        return self.modal_basis @ scaled

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Regularized estimate from a stacked observation vector."""
        y = np.asarray(y, dtype=complex)
        return self.solve_normal(self.h_an.conj().T @ y)

    def matrix(self) -> np.ndarray:
        """Explicit receiver matrix (P_an x M*N)."""
        return self.solve_normal(self.h_an.conj().T)


def tikhonov_apply(rcv: TikhonovReceiver, y: np.ndarray) -> np.ndarray:
    return rcv.apply(y)


def receiver_norm(rcv: TikhonovReceiver) -> float:
    """Spectral norm of the receiver: max sqrt(d)/(d + lambda^2) over modes."""
    d = rcv.modal_values
    return float((np.sqrt(d) / (d + rcv.lam**2)).max())


def resolution_error(rcv: TikhonovReceiver) -> float:
    """Frobenius distance of receiver*dictionary from identity, normalized."""
    shrink = rcv.lam**2 / (rcv.modal_values + rcv.lam**2)
    return float(np.sqrt((shrink**2).sum() / rcv.p_an))


def error_decomposition(
    rcv: TikhonovReceiver,
    xi_an: np.ndarray,
    c_sh: ObservationResponse | np.ndarray,
    noise: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reconstruction-error split: (regularization bias, pseudo-anomaly, noise)."""
    xi_an = np.asarray(xi_an, dtype=complex)
    stacked = c_sh.stacked if isinstance(c_sh, ObservationResponse) else np.asarray(c_sh, dtype=complex)
    noise = np.asarray(noise, dtype=complex)
    bias = rcv.apply(rcv.h_an @ xi_an) - xi_an
    pseudo = rcv.apply(stacked)
    noise_term = rcv.apply(noise)
    return bias, pseudo, noise_term


def recon_moments(
    rcv: TikhonovReceiver, m_sh: np.ndarray, r_sh: HermitianCovariance
) -> tuple[np.ndarray, HermitianCovariance, float]:
    """Mean, covariance and mean-square energy transferred into the anomaly
    domain."""
    g = rcv.matrix()
    mean = g @ np.asarray(m_sh, dtype=complex)
    cov = HermitianCovariance(g @ r_sh.entries @ g.conj().T)
    mse_energy = float(np.linalg.norm(mean) ** 2 + cov.trace())
    return mean, cov, mse_energy


@dataclass(frozen=True)
class RhsPerturbation:
    """Per-channel adjoint projections g_n and their accumulated sum."""

    g: np.ndarray  # (N, P_an)

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=complex))

    @property
    def b(self) -> np.ndarray:
        return self.g.sum(axis=0)


def rhs_perturbation(
    h_matrices: Sequence[np.ndarray | PropagationMatrix],
    selection: np.ndarray,
    responses: ObservationResponse | Sequence[np.ndarray],
) -> RhsPerturbation:
    """Adjoint projection of each channel response onto the candidate region."""
    selection = np.asarray(selection, dtype=int)
    if isinstance(responses, ObservationResponse):
        blocks = list(responses.per_channel)
    else:
        blocks = [np.asarray(r, dtype=complex) for r in responses]
    if len(blocks) != len(h_matrices):
        raise DomainError("channel count mismatch between matrices and responses")
    g = [
        _as_matrix(h)[:, selection].conj().T @ c
        for h, c in zip(h_matrices, blocks)
    ]
    return RhsPerturbation(np.vstack(g))


def path_coherence(perturbation: RhsPerturbation) -> float:
    """Alignment of the per-channel projections, 1/N (orthogonal) .. 1 (equal)."""
    g = perturbation.g
    total = float((np.abs(g) ** 2).sum())
    if total == 0.0:
        raise DomainError("path coherence undefined for an all-zero perturbation")
    return float(np.linalg.norm(g.sum(axis=0)) ** 2 / (g.shape[0] * total))


@dataclass(frozen=True)
class RhsCovariance:
    """Uncentered second-order structure of the accumulated perturbation."""

    r_b: HermitianCovariance
    eta_cross: float
    cross_blocks: np.ndarray  # (N, N, P_an, P_an)


def rhs_covariance(samples: Sequence[RhsPerturbation]) -> RhsCovariance:
    """Sample second moment of b plus the per-channel-pair block table.

    eta_cross is the trace-mass fraction carried by cross-channel blocks; it
    vanishes for independent zero-mean channels and grows with coherent
    cross-channel structure.
    """
    if len(samples) < 2:
        raise DomainError("need at least two perturbation samples")
    g_all = np.stack([s.g for s in samples])  # (L, N, P_an)
    length, n_channels, p_an = g_all.shape
    cross = np.einsum("lnp,lmq->nmpq", g_all, g_all.conj()) / length
    r_b = HermitianCovariance(cross.sum(axis=(0, 1)))
    traces = np.abs(np.trace(cross, axis1=2, axis2=3))
    total = float(traces.sum())
    off = float(total - np.trace(traces))
    eta_cross = off / total if total > 0 else 0.0
    return RhsCovariance(r_b=r_b, eta_cross=eta_cross, cross_blocks=cross)


@dataclass(frozen=True)
class CrossFrequencyTransfer:
    """Back-projected covariance split into within-channel and cross terms."""

    k_sh: np.ndarray
    k_diag: np.ndarray
    k_cf: np.ndarray
    r_e_full: np.ndarray
    r_e_diag: np.ndarray
    delta_r_cf: np.ndarray
    chi_cf: float
    eps_diag_shape: float
    eps_diag_trace: float
    modal_variances: np.ndarray
    modal_cf_increments: np.ndarray


def cross_frequency_transfer(
    rcv: TikhonovReceiver, r_sh: HermitianCovariance
) -> CrossFrequencyTransfer:
    """Transfer the channel-block observation covariance into the anomaly
    domain and quantify what the cross-channel blocks contribute there."""
    if rcv.observation_dim != r_sh.dim:
        raise DomainError("covariance dimension must match the stacked matrix")
    m = r_sh.block_size
    n = r_sh.block_count
    h_blocks = [rcv.h_an[i * m : (i + 1) * m] for i in range(n)]

    k_sh = rcv.h_an.conj().T @ r_sh.entries @ rcv.h_an
    k_diag = np.zeros_like(k_sh)
    for i in range(n):
        k_diag += h_blocks[i].conj().T @ r_sh.block(i + 1, i + 1) @ h_blocks[i]
    k_cf = np.zeros_like(k_sh)
    for i in range(n):
        for j in range(n):
            if i != j:
                k_cf += h_blocks[i].conj().T @ r_sh.block(i + 1, j + 1) @ h_blocks[j]

    def transfer(k: np.ndarray) -> np.ndarray:
        inner = rcv.modal_basis.conj().T @ k @ rcv.modal_basis
        inner = inner * np.outer(rcv._shrink, rcv._shrink)
        return rcv.modal_basis @ inner @ rcv.modal_basis.conj().T

    r_e_full = transfer(k_sh)
    r_e_diag = transfer(k_diag)
    delta_r_cf = transfer(k_cf)

    full_norm = float(np.linalg.norm(r_e_full))
    chi_cf = float(np.linalg.norm(delta_r_cf)) / full_norm if full_norm else 0.0
    eps_diag_shape = (
        float(np.linalg.norm(r_e_full - r_e_diag)) / full_norm if full_norm else 0.0
    )
    tr_full = float(r_e_full.trace().real)
    eps_diag_trace = (
        abs(tr_full - float(r_e_diag.trace().real)) / tr_full if tr_full else 0.0
    )

    shrink_sq = rcv._shrink**2
    modal_variances = (
        np.einsum("ij,jk,ki->i", rcv.modal_basis.conj().T, k_sh, rcv.modal_basis).real
        * shrink_sq
    )
    modal_cf_increments = (
        np.einsum("ij,jk,ki->i", rcv.modal_basis.conj().T, k_cf, rcv.modal_basis).real
        * shrink_sq
    )
    return CrossFrequencyTransfer(
        k_sh=k_sh,
        k_diag=k_diag,
        k_cf=k_cf,
        r_e_full=r_e_full,
        r_e_diag=r_e_diag,
        delta_r_cf=delta_r_cf,
        chi_cf=chi_cf,
        eps_diag_shape=eps_diag_shape,
        eps_diag_trace=eps_diag_trace,
        modal_variances=modal_variances,
        modal_cf_increments=modal_cf_increments,
    )
