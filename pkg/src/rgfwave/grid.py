"""Spherical observation grid and surface quadrature."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre (polar) x trapezoid (azimuth) grid on a sphere.

    Nodes are stored flattened in (j, k) order, polar index outermost,
    so node ``j * n_azimuth + k`` sits at ``(mu[j], phi[k])``.
    """

    radius: float
    n_polar: int
    n_azimuth: int
    mu: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    points: np.ndarray
    normals: np.ndarray

    @property
    def n_nodes(self):
        return self.n_polar * self.n_azimuth

    @property
    def weights(self):
        """Full quadrature weight of every node, so that the integral is ``weights @ f``."""
        w = self.radius**2 * (2.0 * np.pi / self.n_azimuth) * self.w
        return np.repeat(w, self.n_azimuth)

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]

    @property
    def z(self):
        return self.points[:, 2]


def build_grid(R, J, K):
    """Build the grid of radius ``R`` with ``J`` polar and ``K`` azimuthal nodes.

    Examples
    --------
    >>> build_grid(2.0, 18, 36).n_nodes
    648
    """
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    if int(J) != J or J < 1 or int(K) != K or K < 1:
        raise ValueError(f"J and K must be positive integers, got J={J}, K={K}")
    J, K = int(J), int(K)
    mu, w = np.polynomial.legendre.leggauss(J)
    phi = 2.0 * np.pi * np.arange(K) / K
    sin_t = np.sqrt(1.0 - mu**2)
    normals = np.empty((J, K, 3))
    normals[..., 0] = sin_t[:, None] * np.cos(phi)[None, :]
    normals[..., 1] = sin_t[:, None] * np.sin(phi)[None, :]
    normals[..., 2] = mu[:, None]
    normals = normals.reshape(J * K, 3)
    # renormalize so |r| = R holds to round-off
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    for a in (mu, w, phi, normals):
        a.setflags(write=False)
    points = R * normals
    points.setflags(write=False)
    return SphereGrid(float(R), J, K, mu, w, phi, points, normals)


def surface_integral(grid, samples):
    """Integrate node samples over the sphere.

    ``samples`` may have shape ``(n_nodes,)``, ``(J, K)`` or ``(..., n_nodes)``;
    the last axis (or the last two) are contracted.
    """
    samples = np.asarray(samples)
    if samples.shape[-2:] == (grid.n_polar, grid.n_azimuth) and samples.shape[-1:] != (grid.n_nodes,):
        samples = samples.reshape(samples.shape[:-2] + (grid.n_nodes,))
    if samples.ndim == 0 or samples.shape[-1] != grid.n_nodes:
        raise ValueError(f"samples shape {samples.shape} does not match grid with {grid.n_nodes} nodes")
    return samples @ grid.weights
