"""Second-order statistics of stacked observation responses.

Covariances are complex Hermitian PSD with an optional channel-block
partition (block_size receive elements per coded channel). Eigenvalues are
cached on first use, sorted nonincreasing, with tiny negative values clamped
to zero.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericalError
from .forward import ObservationResponse

_HERMITIAN_TOL = 1e-8
_EIG_CLAMP = 1e-10


class HermitianCovariance:
    """Hermitian PSD matrix with channel-block indexing and cached spectrum."""

    def __init__(self, entries: np.ndarray, block_size: int | None = None):
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DomainError("covariance must be square")
        dim = entries.shape[0]
        norm = np.linalg.norm(entries)
        asym = np.linalg.norm(entries - entries.conj().T)
        if norm > 0 and asym > _HERMITIAN_TOL * norm:
            raise NumericalError("matrix is not Hermitian within tolerance")
        self.entries = 0.5 * (entries + entries.conj().T)
        self.dim = dim
        self.block_size = dim if block_size is None else int(block_size)
        if self.block_size < 1 or dim % self.block_size:
            raise DomainError("block size must divide the dimension")
        self.block_count = dim // self.block_size
        self._eigvals: np.ndarray | None = None
        self._eigvecs: np.ndarray | None = None

    def _decompose(self) -> None:
        if self._eigvals is not None:
            return
        vals, vecs = np.linalg.eigh(self.entries)
        vals, vecs = vals[::-1].copy(), vecs[:, ::-1].copy()  # nonincreasing
        lam_max = max(vals[0], 0.0) if vals.size else 0.0
        if vals.size and vals[-1] < -_EIG_CLAMP * max(lam_max, 1.0):
            raise NumericalError("covariance has a significantly negative eigenvalue")
        self._eigvals = np.clip(vals, 0.0, None)
        self._eigvecs = vecs

    @property
    def eigvals(self) -> np.ndarray:
        self._decompose()
        return self._eigvals

    @property
    def eigvecs(self) -> np.ndarray:
        self._decompose()
        return self._eigvecs

    def trace(self) -> float:
        return float(self.entries.trace().real)

    def block(self, n: int, n2: int) -> np.ndarray:
        """Channel block (1-based indices); block(n2, n) is its adjoint."""
        for idx in (n, n2):
            if not 1 <= idx <= self.block_count:
                raise DomainError(f"channel index {idx} out of range")
        m = self.block_size
        return self.entries[(n - 1) * m : n * m, (n2 - 1) * m : n2 * m]

    def block_diagonal_part(self) -> np.ndarray:
        out = np.zeros_like(self.entries)
        m = self.block_size
        for n in range(self.block_count):
            sl = slice(n * m, (n + 1) * m)
            out[sl, sl] = self.entries[sl, sl]
        return out


def block(r: HermitianCovariance, n: int, n2: int) -> np.ndarray:
    return r.block(n, n2)


def sample_mean_cov(
    samples: Sequence[np.ndarray] | np.ndarray,
    ddof: int = 1,
    block_size: int | None = None,
) -> tuple[np.ndarray, HermitianCovariance]:
    """Sample mean and Hermitian sample covariance of complex vectors.

    ddof = 1 gives the unbiased estimator; ddof = 0 the plug-in form used by
    the mean-square-energy identity.
    """
    data = np.asarray(samples, dtype=complex)
    if data.ndim != 2:
        raise DomainError("samples must form a (L, D) array")
    length = data.shape[0]
    if length < 2:
        raise DomainError("need at least two samples")
    mean = data.mean(axis=0)
    centered = data - mean
    # E[(x-m)(x-m)^H]: entry (i, j) averages x_i * conj(x_j)
    cov = centered.T @ centered.conj() / (length - ddof)
    return mean, HermitianCovariance(cov, block_size=block_size)


def block_coupling_metrics(r: HermitianCovariance) -> tuple[float, float]:
    """Off-block energy ratios (chi_f, eps_blk) of a block-partitioned matrix."""
    blk = r.block_diagonal_part()
    off_sq = float(np.linalg.norm(r.entries - blk) ** 2)
    blk_sq = float(np.linalg.norm(blk) ** 2)
    if off_sq == 0.0:
        return 0.0, 0.0
    if blk_sq == 0.0:
        return math.inf, 1.0
    chi_f = off_sq / blk_sq
    eps_blk = math.sqrt(off_sq / (off_sq + blk_sq))
    return chi_f, eps_blk


@dataclass(frozen=True)
class SpectralSummary:
    """Energy and concentration indicators of a PSD spectrum."""

    trace: float
    r_eff: float
    p_0_9: int
    leading_ratio: float


def spectral_summary(r: HermitianCovariance) -> SpectralSummary:
    vals = r.eigvals
    total = float(vals.sum())
    if total <= 0.0:
        return SpectralSummary(trace=0.0, r_eff=0.0, p_0_9=0, leading_ratio=0.0)
    q = vals / total
    positive = q[q > 0]
    r_eff = float(np.exp(-(positive * np.log(positive)).sum()))
    cumulative = np.cumsum(q)
    p_0_9 = int(np.searchsorted(cumulative, 0.9 - 1e-15) + 1)
    return SpectralSummary(
        trace=total,
        r_eff=r_eff,
        p_0_9=p_0_9,
        leading_ratio=float(q[0]),
    )


def frequency_block_discrepancy(response: ObservationResponse) -> float:
    """Across-channel variation of the per-channel responses, in [0, 1]."""
    blocks = response.per_channel
    energy = float(np.linalg.norm(blocks) ** 2)
    if energy == 0.0:
        raise DomainError("frequency-block discrepancy undefined for zero energy")
    mean = blocks.mean(axis=0)
    return float(np.linalg.norm(blocks - mean) ** 2 / energy)


# ---------------------------------------------------------------------------
# matrix import/export


def write_complex_csv(path, matrix: np.ndarray) -> None:
    """Row-major CSV with one "re,im" pair per cell (quoted by the writer)."""
    matrix = np.asarray(matrix, dtype=complex)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(matrix):
            writer.writerow([f"{v.real:.17g},{v.imag:.17g}" for v in row])


def read_complex_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for record in csv.reader(fh):
            rows.append([complex(*map(float, cell.split(","))) for cell in record])
    return np.array(rows, dtype=complex)


def write_covariance_csv(path, r: HermitianCovariance) -> None:
    write_complex_csv(path, r.entries)


def read_covariance_csv(path, block_size: int | None = None) -> HermitianCovariance:
    return HermitianCovariance(read_complex_csv(path), block_size=block_size)


_BINARY_HEADER = struct.Struct("<II")


def write_covariance_binary(path, r: HermitianCovariance) -> None:
    """Compact container: dim, block_size, then row-major little-endian doubles."""
    with open(path, "wb") as fh:
        fh.write(_BINARY_HEADER.pack(r.dim, r.block_size))
        fh.write(np.ascontiguousarray(r.entries, dtype="<c16").tobytes())


def read_covariance_binary(path) -> HermitianCovariance:
    with open(path, "rb") as fh:
        dim, block_size = _BINARY_HEADER.unpack(fh.read(_BINARY_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != dim * dim:
        raise DomainError("covariance container is truncated")
    return HermitianCovariance(data.reshape(dim, dim), block_size=block_size)
