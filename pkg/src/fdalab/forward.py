"""Reference-state propagation model and residual observation responses.

The propagation kernel is a scalar half-space surrogate: a free-space phase
and attenuation factor exp(-j*k*d)/(4*pi*d) on each side of the interface,
with a normal-incidence transmission factor applied once per crossing. The
straight source-observer segment is split at z = 0; no refraction bending.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .geometry import ArrayGeometry, Grid
from .media import (
    MediumField,
    VACUUM_PERMEABILITY,
    VACUUM_PERMITTIVITY,
    cole_cole_array,
)

PATTERN_TAGS = ("C1", "C2", "C3", "C4")

# fixed published permutation for the permuted-frequency pattern at N = 6
DEFAULT_C4_PERMUTATION = (3, 1, 5, 2, 6, 4)


@dataclass(frozen=True)
class CodedChannel:
    """One transmit-coded channel: index, centered index, frequency, position."""

    n: int
    kappa: float
    omega: float
    tx_pos: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tx_pos", np.asarray(self.tx_pos, dtype=float))


@dataclass(frozen=True)
class CodingPattern:
    """Frequency/transmit-position organization of the coded channels.

    C1 binds frequency and position linearly, C2 keeps one frequency, C3 keeps
    one position, C4 permutes the frequencies over the positions.
    """

    tag: str
    permutation: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.tag not in PATTERN_TAGS:
            raise ConfigError(f"unknown coding pattern: {self.tag!r}")
        if self.permutation is not None:
            object.__setattr__(self, "permutation", tuple(int(i) for i in self.permutation))

    def resolved_permutation(self, n_channels: int) -> tuple[int, ...]:
        perm = self.permutation
        if perm is None:
            if n_channels != len(DEFAULT_C4_PERMUTATION):
                raise ConfigError(
                    "C4 needs an explicit permutation when the channel count "
                    f"is not {len(DEFAULT_C4_PERMUTATION)}"
                )
            perm = DEFAULT_C4_PERMUTATION
        if sorted(perm) != list(range(1, n_channels + 1)):
            raise ConfigError("C4 permutation must be a bijection on 1..N")
        return perm


def centered_index(n: int, n_channels: int) -> float:
    return n - (n_channels + 1) / 2.0


def coding_path(
    pattern: CodingPattern,
    n_channels: int,
    f_c: float,
    delta_f: float,
    s_c: np.ndarray,
    delta_s: np.ndarray,
) -> list[CodedChannel]:
    """Coded channels along the selected space-frequency organization."""
    if n_channels < 1:
        raise ConfigError("need at least one transmit channel")
    if f_c <= 0:
        raise ConfigError("center frequency must be positive")
    s_c = np.asarray(s_c, dtype=float)
    delta_s = np.asarray(delta_s, dtype=float)
    omega_c = 2.0 * np.pi * f_c
    delta_omega = 2.0 * np.pi * delta_f
    perm = pattern.resolved_permutation(n_channels) if pattern.tag == "C4" else None

    channels = []
    for n in range(1, n_channels + 1):
        kappa = centered_index(n, n_channels)
        if pattern.tag == "C2":
            omega = omega_c
        elif pattern.tag == "C4":
            omega = omega_c + centered_index(perm[n - 1], n_channels) * delta_omega
        else:
            omega = omega_c + kappa * delta_omega
        pos = s_c if pattern.tag == "C3" else s_c + kappa * delta_s
        if omega <= 0:
            raise ConfigError(f"channel {n} frequency is not positive")
        channels.append(CodedChannel(n=n, kappa=kappa, omega=omega, tx_pos=pos))
    return channels


def _halfspace_kernel_batch(
    src: np.ndarray,
    obs: np.ndarray,
    omega: float,
    eps_medium: np.ndarray,
    d_floor: float,
) -> np.ndarray:
    """Vectorized scalar kernel; src/obs broadcast as (..., 2) positions."""
    src = np.asarray(src, dtype=float)
    obs = np.asarray(obs, dtype=float)
    diff = obs - src
    d_total = np.sqrt((diff**2).sum(axis=-1))

    z_s, z_o = src[..., 1], obs[..., 1]
    src_air = z_s < 0
    obs_air = z_o < 0
    crossing = src_air != obs_air

    # distance on the air side of the straight segment; whole path counts as
    # air (medium) when both endpoints are above (below) the interface
    with np.errstate(divide="ignore", invalid="ignore"):
        frac_src_side = np.where(crossing, z_s / np.where(z_s == z_o, 1.0, z_s - z_o), 0.0)
    d_src_side = d_total * np.abs(frac_src_side)
    d_air = np.where(
        crossing,
        np.where(src_air, d_src_side, d_total - d_src_side),
        np.where(src_air & obs_air, d_total, 0.0),
    )
    d_med = d_total - d_air

    k_air = omega * np.sqrt(VACUUM_PERMEABILITY * VACUUM_PERMITTIVITY)
    k_med = omega * np.sqrt(VACUUM_PERMEABILITY * (eps_medium + 0j))
    k_med = np.where(k_med.imag > 0, -k_med, k_med)  # decay under e^{j omega t}

    eps_rel = np.sqrt(eps_medium / VACUUM_PERMITTIVITY + 0j)
    transmission = np.where(crossing, 2.0 / (1.0 + eps_rel), 1.0)

    denom = 4.0 * np.pi * np.maximum(d_total, d_floor)
    return transmission * np.exp(-1j * (k_air * d_air + k_med * d_med)) / denom


def halfspace_kernel(
    src,
    obs,
    omega: float,
    eps_medium: complex,
    d_floor: float = 0.0,
) -> complex:
    """Scalar half-space propagation kernel between two points.

    eps_medium is the complex permittivity used on the below-interface part of
    the path. The kernel is reciprocal in (src, obs) for a fixed eps_medium.
    """
    if not (np.isfinite(omega) and omega > 0):
        raise DomainError("omega must be positive and finite")
    value = _halfspace_kernel_batch(
        np.asarray(src, dtype=float),
        np.asarray(obs, dtype=float),
        float(omega),
        np.asarray(eps_medium, dtype=complex),
        float(d_floor),
    )
    return complex(value)


@dataclass(frozen=True)
class PropagationMatrix:
    """Receive-by-voxel response matrix of one coded channel."""

    channel: CodedChannel
    entries: np.ndarray


@dataclass(frozen=True)
class ObservationResponse:
    """Stacked per-channel residual responses, channel-major."""

    per_channel: np.ndarray  # (N, M)

    def __post_init__(self):
        arr = np.asarray(self.per_channel, dtype=complex)
        if arr.ndim != 2:
            raise DomainError("per_channel must be a (N, M) array")
        object.__setattr__(self, "per_channel", arr)

    @property
    def n_channels(self) -> int:
        return self.per_channel.shape[0]

    @property
    def block_size(self) -> int:
        return self.per_channel.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """(N*M,) vector; channel n occupies rows (n-1)*M .. n*M-1."""
        return self.per_channel.reshape(-1)

    def block(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.n_channels:
            raise DomainError(f"channel index {n} out of range")
        return self.per_channel[n - 1]

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, block_size: int) -> "ObservationResponse":
        stacked = np.asarray(stacked, dtype=complex)
        if stacked.size % block_size:
            raise DomainError("stacked length must be a multiple of the block size")
        return cls(stacked.reshape(-1, block_size))


def stacked_response(responses: Sequence[np.ndarray]) -> ObservationResponse:
    """Stack per-channel response vectors of equal length, channel-major."""
    arrays = [np.asarray(r, dtype=complex).reshape(-1) for r in responses]
    if not arrays:
        raise DomainError("need at least one channel response")
    lengths = {a.size for a in arrays}
    if len(lengths) != 1:
        raise DomainError("channel responses must share one length")
    return ObservationResponse(np.vstack(arrays))


def contrast_vector(
    ref_field: MediumField, residual: MediumField, omega: float
) -> np.ndarray:
    """Reference-normalized permittivity increment of the residual at omega.

    Exact (no linearization): entry p is
    [eps(mu_ref_p + delta_p) - eps(mu_ref_p)] / eps(mu_ref_p).
    """
    if residual.grid is not ref_field.grid:
        raise DomainError("fields must share a grid")
    eps_ref = ref_field.permittivity(omega)
    if np.any(eps_ref == 0):
        raise NumericalError("singular reference permittivity")
    eps_perturbed = cole_cole_array(ref_field.values + residual.values, omega)
    return (eps_perturbed - eps_ref) / eps_ref


class ChannelOperator:
    """Cached kernels of one coded channel under a fixed reference field.

    Precomputes the transmit/receive kernels, the propagation matrix and
    (lazily) the voxel-to-voxel kernel used by the first-order feedback term,
    so Monte-Carlo sweeps over residual samples stay cheap.
    """

    def __init__(
        self,
        grid: Grid,
        array: ArrayGeometry,
        channel: CodedChannel,
        ref_field: MediumField,
        kernel_gain: complex = 1.0,
    ):
        if ref_field.grid is not grid:
            raise DomainError("reference field must live on the operator grid")
        self.grid = grid
        self.array = array
        self.channel = channel
        self.ref_field = ref_field
        self.kernel_gain = complex(kernel_gain)

        omega = channel.omega
        centers = grid.voxel_centers
        self.eps_ref = ref_field.permittivity(omega)

        self.g_t = kernel_gain * _halfspace_kernel_batch(
            channel.tx_pos[None, :], centers, omega, self.eps_ref, grid.distance_floor
        )
        self.g_r = kernel_gain * _halfspace_kernel_batch(
            centers[None, :, :],
            array.rx_positions[:, None, :],
            omega,
            self.eps_ref[None, :],
            grid.distance_floor,
        )
        self.entries = self.g_r * self.g_t[None, :] * grid.weights[None, :]

    @property
    def propagation_matrix(self) -> PropagationMatrix:
        return PropagationMatrix(channel=self.channel, entries=self.entries)

    @cached_property
    def _voxel_kernel(self) -> np.ndarray:
        """(P, P) voxel-to-voxel kernel, permittivity of the source voxel,
        self-term excluded."""
        centers = self.grid.voxel_centers
        kernel = self.kernel_gain * _halfspace_kernel_batch(
            centers[None, :, :],
            centers[:, None, :],
            self.channel.omega,
            self.eps_ref[None, :],
            self.grid.distance_floor,
        )
        np.fill_diagonal(kernel, 0.0)
        return kernel

    def contrast(self, residual: MediumField) -> np.ndarray:
        return contrast_vector(self.ref_field, residual, self.channel.omega)

    def feedback(self, xi: np.ndarray) -> np.ndarray:
        """First-order transmit/receive kernel feedback for a contrast vector."""
        xi = np.asarray(xi, dtype=complex)
        if xi.shape != (self.grid.voxel_count,):
            raise DomainError("contrast vector length must match the grid")
        if not xi.any():
            return np.zeros(self.array.m_rx, dtype=complex)
        w = self.grid.weights
        delta_eps = xi * self.eps_ref
        kernel = self._voxel_kernel
        # transmit-side kernel perturbation projected back to the receivers
        through_tx = kernel @ (delta_eps * self.g_t * w)
        term_t = self.g_r @ (xi * w * through_tx)
        # receive-side kernel perturbation, mirrored path
        through_rx = kernel @ (xi * self.g_t * w)
        term_r = self.g_r @ (delta_eps * w * through_rx)
        scale = self.channel.omega**2 * VACUUM_PERMEABILITY
        return scale * (term_t + term_r)

    def respond(self, residual: MediumField, feedback: bool = True) -> np.ndarray:
        xi = self.contrast(residual)
        out = self.entries @ xi
        if feedback:
            out = out + self.feedback(xi)
        return out


def assemble_H(
    grid: Grid,
    array: ArrayGeometry,
    channel: CodedChannel,
    ref_field: MediumField,
    kernel_gain: complex = 1.0,
) -> PropagationMatrix:
    """Main propagation matrix: receive kernel times transmit kernel times area."""
    return ChannelOperator(grid, array, channel, ref_field, kernel_gain).propagation_matrix


def kernel_feedback(
    grid: Grid,
    array: ArrayGeometry,
    channel: CodedChannel,
    ref_field: MediumField,
    xi: np.ndarray,
) -> np.ndarray:
    """First-order kernel feedback q_n for an explicit contrast vector."""
    return ChannelOperator(grid, array, channel, ref_field).feedback(xi)


def channel_response(
    grid: Grid,
    array: ArrayGeometry,
    channel: CodedChannel,
    ref_field: MediumField,
    residual: MediumField,
    feedback: bool = True,
) -> np.ndarray:
    """Residual response of one coded channel (main term plus optional feedback)."""
    return ChannelOperator(grid, array, channel, ref_field).respond(residual, feedback)
