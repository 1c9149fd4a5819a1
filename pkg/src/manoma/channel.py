"""Field-response channel model for movable antennas.

Geometry between the BS region origin and each user's region origin is fixed
(distances, departure/arrival angles, per-path gains); moving an antenna only
changes per-path phase shifts through its path-difference projections.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

TWO_PI = 2.0 * np.pi

# absolute tolerance for "position inside region" checks, in meters
REGION_TOL_M = 1e-9


@dataclass(frozen=True)
class UserGeometry:
    """Propagation geometry of one BS-user link (immutable after sampling).

    All angle vectors have one entry per path; ``prm_diag`` holds the diagonal
    of the path-response matrix under the one-to-one (geometric) path model.
    """

    distance_m: float
    aod_elevation: np.ndarray
    aod_azimuth: np.ndarray
    aoa_elevation: np.ndarray
    aoa_azimuth: np.ndarray
    prm_diag: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.prm_diag.shape[0]


@dataclass(frozen=True)
class LayoutState:
    """Antenna positions in meters: BS rows (M, 2), user rows (N, 2)."""

    bs_positions: np.ndarray
    user_positions: np.ndarray

    def replace_bs(self, positions: np.ndarray) -> "LayoutState":
        return LayoutState(np.array(positions, dtype=float), self.user_positions)

    def replace_users(self, positions: np.ndarray) -> "LayoutState":
        return LayoutState(self.bs_positions, np.array(positions, dtype=float))


def sample_geometry(config: SystemConfig, rng: np.random.Generator) -> list[UserGeometry]:
    """Draw one channel realization: N user geometries in SIC order.

    Distances are uniform in [d_min, d_max], elevations uniform in [0, pi/2],
    azimuths uniform in [0, 2*pi), and each path gain is circularly-symmetric
    complex Gaussian with variance c0 * d^-a0 / L.  Users are then indexed by
    descending distance (farthest first); ties keep draw order.
    """
    L = config.num_paths
    raw = []
    for _ in range(config.num_users):
        d = rng.uniform(config.distance_min_m, config.distance_max_m)
        theta_t = rng.uniform(0.0, np.pi / 2.0, size=L)
        phi_t = rng.uniform(0.0, TWO_PI, size=L)
        theta_r = rng.uniform(0.0, np.pi / 2.0, size=L)
        phi_r = rng.uniform(0.0, TWO_PI, size=L)
        var = config.reference_gain * d ** (-config.pathloss_exponent) / L
        prm = np.sqrt(var / 2.0) * (
            rng.standard_normal(L) + 1j * rng.standard_normal(L)
        )
        raw.append(UserGeometry(d, theta_t, phi_t, theta_r, phi_r, prm))
    order = sic_order([g.distance_m for g in raw])
    return [raw[i] for i in order]


def sic_order(distances) -> np.ndarray:
    """Decoding order: descending distance, ties broken by original index."""
    d = np.asarray(distances, dtype=float)
    return np.argsort(-d, kind="stable")


def path_differences(position, elevation, azimuth) -> np.ndarray:
    """Per-path propagation-length offset of an antenna at ``position``.

    rho_i = x*cos(theta_i)*cos(phi_i) + y*cos(theta_i)*sin(phi_i).
    """
    elevation = np.asarray(elevation, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    if elevation.shape != azimuth.shape:
        raise ValueError(
            f"angle vectors differ in length: {elevation.shape} vs {azimuth.shape}"
        )
    x, y = float(position[0]), float(position[1])
    ct = np.cos(elevation)
    return x * ct * np.cos(azimuth) + y * ct * np.sin(azimuth)


def field_response_vector(rho, wavelength: float) -> np.ndarray:
    """Unit-modulus per-path phase factors exp(j*2*pi*rho/wavelength)."""
    return np.exp(1j * TWO_PI * np.asarray(rho, dtype=float) / wavelength)


def transmit_field_matrix(geom: UserGeometry, bs_positions, wavelength: float) -> np.ndarray:
    """Stacked transmit field-response vectors, shape (L, M)."""
    pos = np.asarray(bs_positions, dtype=float)
    ct = np.cos(geom.aod_elevation)
    ax = ct * np.cos(geom.aod_azimuth)   # per-path direction cosines
    ay = ct * np.sin(geom.aod_azimuth)
    rho = np.outer(ax, pos[:, 0]) + np.outer(ay, pos[:, 1])  # (L, M)
    return np.exp(1j * TWO_PI * rho / wavelength)


def receive_field_vector(geom: UserGeometry, user_position, wavelength: float) -> np.ndarray:
    """Receive field-response vector of one user's antenna, shape (L,)."""
    rho = path_differences(user_position, geom.aoa_elevation, geom.aoa_azimuth)
    return field_response_vector(rho, wavelength)


def channel_vector(
    geom: UserGeometry,
    bs_positions,
    user_position,
    wavelength: float,
    prm_full: np.ndarray | None = None,
) -> np.ndarray:
    """Channel row h between the BS array and one user, shape (M,).

    h = f^T Sigma G with the diagonal path-response model; pass ``prm_full``
    (an L x L matrix) to evaluate a general dense path-response coupling
    instead (used only for cross-checks).
    """
    G = transmit_field_matrix(geom, bs_positions, wavelength)
    f = receive_field_vector(geom, user_position, wavelength)
    if prm_full is None:
        return (f * geom.prm_diag) @ G
    return (f @ prm_full) @ G


def channel_matrix(
    geometries: list[UserGeometry], layout: LayoutState, wavelength: float
) -> np.ndarray:
    """Stacked channel rows for all users, shape (N, M)."""
    rows = [
        channel_vector(g, layout.bs_positions, layout.user_positions[n], wavelength)
        for n, g in enumerate(geometries)
    ]
    return np.array(rows)


def uniform_grid(count: int, side: float, inset: float = 0.0) -> np.ndarray:
    """First ``count`` row-major points of a square lattice spanning the region.

    The lattice has ceil(sqrt(count)) points per axis over
    [-side/2 + inset, side/2 - inset]; a single point sits at the origin.
    """
    per_axis = int(np.ceil(np.sqrt(count)))
    if per_axis <= 1:
        coords = np.array([0.0])
    else:
        half = side / 2.0 - inset
        coords = np.linspace(-half, half, per_axis)
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    points = np.column_stack([xx.ravel(), yy.ravel()])
    return points[:count]


def min_pairwise_distance(points) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 2:
        return np.inf
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    iu = np.triu_indices(pts.shape[0], k=1)
    return float(dist[iu].min())


def layout_violations(layout: LayoutState, config: SystemConfig) -> list[str]:
    """Human-readable list of region/spacing violations (empty when valid)."""
    problems = []
    half_t = config.bs_region_m / 2.0 + REGION_TOL_M
    if np.any(np.abs(layout.bs_positions) > half_t):
        problems.append("BS antenna outside its placement region")
    half_r = config.user_region_m / 2.0 + REGION_TOL_M
    if np.any(np.abs(layout.user_positions) > half_r):
        problems.append("user antenna outside its placement region")
    spacing = min_pairwise_distance(layout.bs_positions)
    if spacing < config.wavelength_m / 2.0 - 1e-7:
        problems.append(
            f"BS antenna spacing {spacing:.3e} m below half-wavelength"
        )
    return problems


def geometry_digest(geometries: list[UserGeometry]) -> str:
    """Stable hex digest of a channel realization (for matched-seed checks)."""
    import hashlib

    h = hashlib.sha256()
    for g in geometries:
        h.update(np.float64(g.distance_m).tobytes())
        for arr in (g.aod_elevation, g.aod_azimuth, g.aoa_elevation, g.aoa_azimuth):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(g.prm_diag, dtype=np.complex128).tobytes())
    return h.hexdigest()
