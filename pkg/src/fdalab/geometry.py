"""Voxel grid and transmit/receive array geometry.

Coordinates are 2-D (x, z) in metres. The air/medium interface sits at z = 0;
array elements live on the air side (z < 0) and voxels below it (z > 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid:
    """Discretized measurement region plus the anomaly candidate selection.

    voxel_centers: (P, 2) positions, weights: (P,) cell areas in m^2,
    anomaly_selection: ordered unique indices of the candidate voxels.
    distance_floor keeps propagation kernels finite for coincident points;
    builders set it to half the smallest voxel edge.
    """

    voxel_centers: np.ndarray
    weights: np.ndarray
    anomaly_selection: np.ndarray
    distance_floor: float = 0.0

    def __post_init__(self):
        centers = np.asarray(self.voxel_centers, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        selection = np.asarray(self.anomaly_selection, dtype=int)
        if centers.ndim != 2 or centers.shape[1] != 2:
            raise ConfigError("voxel_centers must have shape (P, 2)")
        if weights.shape != (centers.shape[0],):
            raise ConfigError("weights length must match voxel count")
        if np.any(weights <= 0):
            raise ConfigError("voxel weights must be positive")
        if selection.ndim != 1 or len(np.unique(selection)) != selection.size:
            raise ConfigError("anomaly_selection indices must be unique")
        if selection.size and (selection.min() < 0 or selection.max() >= centers.shape[0]):
            raise ConfigError("anomaly_selection index out of range")
        object.__setattr__(self, "voxel_centers", centers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "anomaly_selection", selection)

    @property
    def voxel_count(self) -> int:
        return self.voxel_centers.shape[0]

    @property
    def anomaly_count(self) -> int:
        return self.anomaly_selection.size

    def anomaly_positions(self) -> np.ndarray:
        """(P_an, 2) positions of the candidate-region degrees of freedom."""
        return self.voxel_centers[self.anomaly_selection]


def build_grid(
    nx: int = 12,
    nz: int = 12,
    x_extent: tuple[float, float] = (-1.5, 1.5),
    z_extent: tuple[float, float] = (0.2, 2.0),
    anomaly_x: tuple[float, float] = (-0.5, 0.5),
    anomaly_z: tuple[float, float] = (0.6, 1.4),
) -> Grid:
    """Regular cell-centered grid with a rectangular anomaly candidate region.

    The default arguments give a 12x12 grid (P = 144) whose candidate region
    contains 20 voxels. Voxels are ordered depth-major: index p = iz*nx + ix.
    """
    if nx < 1 or nz < 1:
        raise ConfigError("grid must have at least one cell per axis")
    dx = (x_extent[1] - x_extent[0]) / nx
    dz = (z_extent[1] - z_extent[0]) / nz
    if dx <= 0 or dz <= 0:
        raise ConfigError("grid extents must be increasing intervals")
    xs = x_extent[0] + dx * (np.arange(nx) + 0.5)
    zs = z_extent[0] + dz * (np.arange(nz) + 0.5)
    zz, xx = np.meshgrid(zs, xs, indexing="ij")
    centers = np.column_stack([xx.ravel(), zz.ravel()])
    weights = np.full(centers.shape[0], dx * dz)
    inside = (
        (centers[:, 0] >= anomaly_x[0])
        & (centers[:, 0] <= anomaly_x[1])
        & (centers[:, 1] >= anomaly_z[0])
        & (centers[:, 1] <= anomaly_z[1])
    )
    selection = np.flatnonzero(inside)
    return Grid(centers, weights, selection, distance_floor=0.5 * min(dx, dz))


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmit and receive element positions, all strictly above z = 0."""

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    tx_step: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        tx = np.atleast_2d(np.asarray(self.tx_positions, dtype=float))
        rx = np.atleast_2d(np.asarray(self.rx_positions, dtype=float))
        if np.any(tx[:, 1] >= 0) or np.any(rx[:, 1] >= 0):
            raise ConfigError("array elements must lie above the interface (z < 0)")
        step = self.tx_step
        if step is None:
            step = tx[1] - tx[0] if tx.shape[0] > 1 else np.zeros(2)
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "tx_step", np.asarray(step, dtype=float))

    @property
    def n_tx(self) -> int:
        return self.tx_positions.shape[0]

    @property
    def m_rx(self) -> int:
        return self.rx_positions.shape[0]

    @property
    def tx_center(self) -> np.ndarray:
        """Geometric center of the transmit line (the coding-path origin)."""
        return self.tx_positions.mean(axis=0)


def build_array(
    n_tx: int = 6,
    m_rx: int = 8,
    spacing: float = 0.1,
    height: float = -0.1,
) -> ArrayGeometry:
    """Uniform colinear arrays centered on x = 0 at the given height."""
    if height >= 0:
        raise ConfigError("array height must be negative (air side)")
    if spacing <= 0:
        raise ConfigError("array spacing must be positive")
    tx_x = spacing * (np.arange(1, n_tx + 1) - (n_tx + 1) / 2.0)
    rx_x = spacing * (np.arange(1, m_rx + 1) - (m_rx + 1) / 2.0)
    tx = np.column_stack([tx_x, np.full(n_tx, height)])
    rx = np.column_stack([rx_x, np.full(m_rx, height)])
    return ArrayGeometry(tx, rx, tx_step=np.array([spacing, 0.0]))
