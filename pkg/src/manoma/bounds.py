"""Surrogate bounds and constants used by the convex subproblems.

Three families of machinery live here:

* real-stacked beamforming constants (channel gram matrices and the tangent
  bounds of products/quadratics used by the beamforming subproblem),
* position-domain quadratic-form evaluators and their curvature-bounded
  Taylor upper bounds (user-side and BS-side antenna moves),
* per-antenna channel factorizations isolating one BS antenna's contribution.

Every ``*_upper`` function is a global upper bound of the quantity it
replaces, tight at its expansion point; ``quadratic_lower`` and
``min_distance_linearized`` are global lower bounds.  Diagonal terms of the
quadratic-form expansions use Re(q_ii), which is exact for any Hermitian
matrix (an absolute value there would only be correct for PSD inputs).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (
    TWO_PI,
    UserGeometry,
    receive_field_vector,
    transmit_field_matrix,
)

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class AuxState:
    """Auxiliary optimizer variables: rate factors and interference caps.

    ``r[n]`` is 1 + the claimed worst-case SINR of stream n; ``nu[k, n]`` caps
    the interference-plus-noise power seen by user k while decoding stream n
    and is defined for k >= n (NaN above the diagonal).
    """

    r: np.ndarray
    nu: np.ndarray

    @property
    def num_users(self) -> int:
        return self.r.shape[0]


def aux_pairs(num_users: int):
    """Deterministic (k, n) ordering of the defined interference-cap entries."""
    for n in range(num_users):
        for k in range(n, num_users):
            yield k, n


# ---------------------------------------------------------------------------
# real-stacked beamforming constants


def stack_design(v: np.ndarray) -> np.ndarray:
    """Real stack [Re(v); Im(v)] of one beamforming column."""
    return np.concatenate([np.real(v), np.imag(v)])


def unstack_design(beta: np.ndarray) -> np.ndarray:
    half = beta.shape[0] // 2
    return beta[:half] + 1j * beta[half:]


@dataclass(frozen=True)
class ChannelGram:
    """Real-stacked constants of one user's channel row.

    ``rows`` maps a stacked beam to (Re(h v), Im(h v)); ``gram`` is the PSD
    matrix with beta^T gram beta = |h v|^2.  Its two nonzero eigenvalues both
    equal ||h||^2, so the largest eigenvalue is available in closed form.
    """

    rows: np.ndarray      # (2, 2M)
    gram: np.ndarray      # (2M, 2M)
    norm_sq: float        # ||h||^2 = largest eigenvalue of gram


def channel_gram(h: np.ndarray) -> ChannelGram:
    re, im = np.real(h), np.imag(h)
    rows = np.vstack([np.concatenate([re, -im]), np.concatenate([im, re])])
    return ChannelGram(rows, rows.T @ rows, float(np.sum(np.abs(h) ** 2)))


def bilinear_upper(r: float, nu: float, r_j: float, nu_j: float) -> float:
    """Convex upper bound of (r - 1) * nu, tight at the expansion point.

    The product splits into a convex square minus a concave square; the
    concave part is replaced by its tangent at (r_j, nu_j).
    """
    tangent = (r_j - nu_j) ** 2 + 2.0 * (r_j - nu_j) * (r - r_j - nu + nu_j)
    return 0.25 * (r + nu) ** 2 - nu - 0.25 * tangent


def bilinear_upper_coeffs(r_j: float, nu_j: float):
    """(Q, q, c) with bilinear_upper = [r nu] Q [r nu]^T + q.[r nu] + c."""
    Q = np.full((2, 2), 0.25)
    diff = r_j - nu_j
    q = np.array([-0.5 * diff, -1.0 + 0.5 * diff])
    c = 0.25 * diff**2
    return Q, q, c


def quadratic_lower(beta: np.ndarray, beta_j: np.ndarray, A: np.ndarray) -> float:
    """Tangent lower bound of the convex quadratic beta^T A beta (A PSD)."""
    sym = 0.5 * (A + A.T)
    if np.linalg.eigvalsh(sym).min() < -HERMITIAN_TOL * max(1.0, np.abs(A).max()):
        raise ValueError("quadratic_lower requires a PSD matrix")
    Abj = A @ beta_j
    return float(beta_j @ Abj + 2.0 * Abj @ (beta - beta_j))


@dataclass(frozen=True)
class InterferenceCone:
    """Second-order-cone encoding of an interference cap.

    Membership of (nu, B) means nu >= sum over later streams of |h v_j|^2
    plus sigma^2; the noise amplitude appears as an explicit cone entry so
    the encoding is valid for any noise power.
    """

    rows: np.ndarray          # (2, 2M) real stack of the user's channel
    streams: tuple            # later-decoded stream indices
    sigma: float

    def stacked_terms(self, B_stacked: np.ndarray) -> np.ndarray:
        """[rows @ beta_j for each later stream j] followed by sigma."""
        terms = [self.rows @ B_stacked[:, j] for j in self.streams]
        flat = np.concatenate(terms) if terms else np.zeros(0)
        return np.concatenate([flat, [self.sigma]])

    def contains(self, nu: float, B_stacked: np.ndarray, tol: float = 0.0) -> bool:
        lhs = 0.5 * (1.0 + nu)
        vec = np.concatenate([self.stacked_terms(B_stacked), [0.5 * (1.0 - nu)]])
        return lhs + tol >= float(np.linalg.norm(vec))

    def direct_inequality(self, nu: float, B_stacked: np.ndarray, tol: float = 0.0) -> bool:
        total = float(np.sum(self.stacked_terms(B_stacked) ** 2))
        return nu + tol >= total


def interference_soc_terms(k: int, n: int, grams: list[ChannelGram], sigma2: float) -> InterferenceCone:
    """Cone data of user k's interference cap while decoding stream n."""
    num_users = len(grams)
    if not 0 <= n < num_users - 1:
        raise IndexError("interference cone only defined for non-final streams")
    return InterferenceCone(grams[k].rows, tuple(range(n + 1, num_users)), float(np.sqrt(sigma2)))


def ordering_upper_fk(
    beta_n: np.ndarray,
    beta_np1: np.ndarray,
    beta_n_j: np.ndarray,
    beta_np1_j: np.ndarray,
    A: np.ndarray,
    alpha: float,
    gram_max_eig: float | None = None,
) -> float:
    """Convex upper bound of alpha*b2^T A b2 - b1^T A b1 over stacked beams.

    Second-order Taylor expansion whose curvature is clamped at the largest
    Hessian eigenvalue 2*alpha*lambda_max(A); for channel gram matrices that
    eigenvalue is ||h||^2 and may be passed in to skip the eigensolve.
    """
    if gram_max_eig is None:
        gram_max_eig = float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())
    lam = 2.0 * alpha * gram_max_eig
    z = np.concatenate([beta_n, beta_np1])
    zj = np.concatenate([beta_n_j, beta_np1_j])
    val_j = float(alpha * beta_np1_j @ A @ beta_np1_j - beta_n_j @ A @ beta_n_j)
    grad = np.concatenate([-2.0 * A @ beta_n_j, 2.0 * alpha * A @ beta_np1_j])
    diff = z - zj
    return val_j + float(grad @ diff) + 0.5 * lam * float(diff @ diff)


# ---------------------------------------------------------------------------
# user-side position domain: P(u, Q) = f(u)^T Q f(u)^* and its Taylor bound


def _check_hermitian(Q: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.abs(Q).max()))
    if np.abs(Q - Q.conj().T).max() > HERMITIAN_TOL * scale:
        raise ValueError(f"{what} requires a Hermitian matrix")


def _direction_cosines(elevation: np.ndarray, azimuth: np.ndarray):
    ct = np.cos(elevation)
    return ct * np.cos(azimuth), ct * np.sin(azimuth)


def _triu_pairs(L: int):
    pairs = _TRIU_CACHE.get(L)
    if pairs is None:
        pairs = np.triu_indices(L, k=1)
        _TRIU_CACHE[L] = pairs
    return pairs


_TRIU_CACHE: dict = {}


def _pair_data(Q: np.ndarray):
    i, j = _triu_pairs(Q.shape[0])
    q = Q[i, j]
    return i, j, np.abs(q), np.angle(q)


def receive_quadform_eval(u, Q: np.ndarray, geom: UserGeometry, wavelength: float) -> float:
    """Interference/signal power seen at user position u through matrix Q."""
    _check_hermitian(Q, "receive_quadform_eval")
    ax, ay = _direction_cosines(geom.aoa_elevation, geom.aoa_azimuth)
    i, j, absq, angq = _pair_data(Q)
    rho = u[0] * ax + u[1] * ay
    phase = TWO_PI / wavelength * (rho[i] - rho[j]) + angq
    return float(np.sum(np.real(np.diag(Q))) + 2.0 * np.sum(absq * np.cos(phase)))


def receive_quadform_gradient(u, Q, geom: UserGeometry, wavelength: float) -> np.ndarray:
    _check_hermitian(Q, "receive_quadform_gradient")
    ax, ay = _direction_cosines(geom.aoa_elevation, geom.aoa_azimuth)
    i, j, absq, angq = _pair_data(Q)
    rho = u[0] * ax + u[1] * ay
    phase = TWO_PI / wavelength * (rho[i] - rho[j]) + angq
    w = -2.0 * TWO_PI / wavelength * absq * np.sin(phase)
    return np.array([np.sum(w * (ax[i] - ax[j])), np.sum(w * (ay[i] - ay[j]))])


def receive_curvature_bound(Q, geom: UserGeometry, wavelength: float) -> float:
    """Scalar delta with delta*I dominating the Hessian of the quadform.

    Frobenius bound assembled from per-pair second-derivative caps; it is 0
    for diagonal Q, whose quadform is position-independent.
    """
    _check_hermitian(Q, "receive_curvature_bound")
    ax, ay = _direction_cosines(geom.aoa_elevation, geom.aoa_azimuth)
    i, j, absq, _ = _pair_data(Q)
    scale = 8.0 * np.pi**2 / wavelength**2
    dx = ax[i] - ax[j]
    dy = ay[i] - ay[j]
    z1 = scale * np.sum(absq * dx**2)
    z2 = scale * np.sum(absq * dy**2)
    z3 = scale * np.sum(absq * np.abs(dx) * np.abs(dy))
    return float(np.sqrt(z1**2 + z2**2 + 2.0 * z3**2))


def receive_taylor_upper(u, u_j, Q, geom: UserGeometry, wavelength: float) -> float:
    """Convex quadratic upper bound of the receive quadform, tight at u_j."""
    du = np.asarray(u, dtype=float) - np.asarray(u_j, dtype=float)
    val = receive_quadform_eval(u_j, Q, geom, wavelength)
    grad = receive_quadform_gradient(u_j, Q, geom, wavelength)
    delta = receive_curvature_bound(Q, geom, wavelength)
    return val + float(grad @ du) + 0.5 * delta * float(du @ du)


# ---------------------------------------------------------------------------
# BS-side position domain: T(u, O, tau, l) = g(u)^H O g(u) + 2Re(tau g(u)) + l


def transmit_quadform_eval(u, O, tau, const: float, geom: UserGeometry, wavelength: float) -> float:
    _check_hermitian(O, "transmit_quadform_eval")
    ax, ay = _direction_cosines(geom.aod_elevation, geom.aod_azimuth)
    i, j, abso, ango = _pair_data(O)
    rho = u[0] * ax + u[1] * ay
    arg = TWO_PI / wavelength * rho
    phase = (arg[j] - arg[i]) + ango
    quad = float(np.sum(np.real(np.diag(O))) + 2.0 * np.sum(abso * np.cos(phase)))
    lin = 2.0 * float(np.sum(np.real(tau) * np.cos(arg) - np.imag(tau) * np.sin(arg)))
    return quad + lin + float(const)


def transmit_quadform_gradient(u, O, tau, geom: UserGeometry, wavelength: float) -> np.ndarray:
    _check_hermitian(O, "transmit_quadform_gradient")
    ax, ay = _direction_cosines(geom.aod_elevation, geom.aod_azimuth)
    i, j, abso, ango = _pair_data(O)
    k0 = TWO_PI / wavelength
    rho = u[0] * ax + u[1] * ay
    arg = k0 * rho
    phase = (arg[j] - arg[i]) + ango
    wpair = -2.0 * k0 * abso * np.sin(phase)
    gpair = np.array([np.sum(wpair * (ax[j] - ax[i])), np.sum(wpair * (ay[j] - ay[i]))])
    wlin = -2.0 * k0 * (np.real(tau) * np.sin(arg) + np.imag(tau) * np.cos(arg))
    glin = np.array([np.sum(wlin * ax), np.sum(wlin * ay)])
    return gpair + glin


def transmit_curvature_bound(O, tau, geom: UserGeometry, wavelength: float) -> float:
    """Scalar xi with xi*I dominating the Hessian of the transmit quadform."""
    _check_hermitian(O, "transmit_curvature_bound")
    ax, ay = _direction_cosines(geom.aod_elevation, geom.aod_azimuth)
    i, j, abso, _ = _pair_data(O)
    scale = 8.0 * np.pi**2 / wavelength**2
    dx = ax[j] - ax[i]
    dy = ay[j] - ay[i]
    tmag = np.abs(np.real(tau)) + np.abs(np.imag(tau))
    s1 = scale * (np.sum(abso * dx**2) + np.sum(tmag * ax**2))
    s2 = scale * (np.sum(abso * dy**2) + np.sum(tmag * ay**2))
    s3 = scale * (
        np.sum(abso * np.abs(dx) * np.abs(dy)) + np.sum(tmag * np.abs(ax) * np.abs(ay))
    )
    return float(np.sqrt(s1**2 + s2**2 + 2.0 * s3**2))


def transmit_taylor_upper(u, u_j, O, tau, const, geom: UserGeometry, wavelength: float) -> float:
    """Convex quadratic upper bound of the transmit quadform, tight at u_j."""
    du = np.asarray(u, dtype=float) - np.asarray(u_j, dtype=float)
    val = transmit_quadform_eval(u_j, O, tau, const, geom, wavelength)
    grad = transmit_quadform_gradient(u_j, O, tau, geom, wavelength)
    xi = transmit_curvature_bound(O, tau, geom, wavelength)
    return val + float(grad @ du) + 0.5 * xi * float(du @ du)


def min_distance_linearized(u_m, u_m_j, u_l) -> float:
    """Linear lower bound of ||u_m - u_l|| around the reference point u_m_j."""
    u_m = np.asarray(u_m, dtype=float)
    ref = np.asarray(u_m_j, dtype=float) - np.asarray(u_l, dtype=float)
    norm = float(np.linalg.norm(ref))
    if norm < 1e-15:
        raise ValueError("reference antenna position coincides with a neighbor")
    return float(ref @ (u_m - np.asarray(u_l, dtype=float))) / norm


# ---------------------------------------------------------------------------
# quadratic-form constants realized from a (layout, design) pair


def beam_path_response(geom: UserGeometry, bs_positions, wavelength: float, v: np.ndarray) -> np.ndarray:
    """Per-path complex response of one beam: diag(prm) @ G @ v, shape (L,)."""
    G = transmit_field_matrix(geom, bs_positions, wavelength)
    return geom.prm_diag * (G @ v)


def signal_quadform(geom, bs_positions, wavelength, v) -> np.ndarray:
    """Hermitian L x L matrix with f^T C f^* = |h v|^2 (rank one, PSD)."""
    c = beam_path_response(geom, bs_positions, wavelength, v)
    return np.outer(c, np.conj(c))


def interference_quadform(geom, bs_positions, wavelength, V, n: int) -> np.ndarray:
    """Hermitian matrix with f^T D f^* = sum of later-stream powers."""
    N = V.shape[1]
    D = np.zeros((geom.num_paths, geom.num_paths), dtype=complex)
    for j in range(n + 1, N):
        D += signal_quadform(geom, bs_positions, wavelength, V[:, j])
    return D


def ordering_gap_quadform(geom, bs_positions, wavelength, V, n: int, alpha: float) -> np.ndarray:
    """Hermitian matrix with f^T E f^* = alpha|h v_{n+1}|^2 - |h v_n|^2."""
    return alpha * signal_quadform(
        geom, bs_positions, wavelength, V[:, n + 1]
    ) - signal_quadform(geom, bs_positions, wavelength, V[:, n])


# ---------------------------------------------------------------------------
# per-BS-antenna factorization: h_k v_n = w * eta g_m + fixed


@dataclass(frozen=True)
class AntennaViewpoint:
    """One user's channel with a single BS antenna's contribution isolated.

    For every stream n:  h v_n = weights[n] * (eta @ frv) + fixed[n], where
    ``frv`` is the transmit field-response vector of the isolated antenna.
    """

    eta: np.ndarray      # receive-weighted path row f^T diag(prm), (L,)
    rank1: np.ndarray    # eta^H eta, Hermitian PSD, (L, L)
    frv: np.ndarray      # transmit FRV of the isolated antenna, (L,)
    weights: np.ndarray  # beam weights of the isolated antenna, (N,)
    fixed: np.ndarray    # per-stream contribution of the other antennas, (N,)

    def cross_row(self, n: int) -> np.ndarray:
        """Row of the cross term 2Re(row @ g) in |h v_n|^2."""
        return self.weights[n] * np.conj(self.fixed[n]) * self.eta


def antenna_viewpoint(
    geom: UserGeometry,
    bs_positions,
    user_position,
    wavelength: float,
    V: np.ndarray,
    m: int,
) -> AntennaViewpoint:
    f = receive_field_vector(geom, user_position, wavelength)
    eta = f * geom.prm_diag
    G = transmit_field_matrix(geom, bs_positions, wavelength)
    h = eta @ G
    full = h @ V                      # h v_n for every stream
    weights = V[m, :].copy()
    fixed = full - weights * (eta @ G[:, m])
    return AntennaViewpoint(eta, np.outer(np.conj(eta), eta), G[:, m].copy(), weights, fixed)


@dataclass(frozen=True)
class TransmitConstants:
    """Quadform parameter triples for one (user, stream) pair seen from one
    BS antenna; feeding each triple to the transmit quadform reconstructs the
    named quantity exactly."""

    neg_signal: tuple        # (quad, lin, const): -|h v_n|^2
    interference: tuple      # sum over later streams of |h v_j|^2
    ordering_gap: tuple | None  # alpha|h v_{n+1}|^2 - |h v_n|^2 (None for last stream)


def bs_constraint_constants(view: AntennaViewpoint, n: int, alpha: float) -> TransmitConstants:
    N = view.weights.shape[0]
    wmag2 = np.abs(view.weights) ** 2
    fmag2 = np.abs(view.fixed) ** 2
    rows = [view.cross_row(j) for j in range(N)]

    neg = (-wmag2[n] * view.rank1, -rows[n], -fmag2[n])
    later = range(n + 1, N)
    interf = (
        sum(wmag2[j] for j in later) * view.rank1,
        sum((rows[j] for j in later), np.zeros_like(view.eta)),
        float(sum(fmag2[j] for j in later)),
    )
    ordering = None
    if n + 1 < N:
        ordering = (
            (alpha * wmag2[n + 1] - wmag2[n]) * view.rank1,
            alpha * rows[n + 1] - rows[n],
            float(alpha * fmag2[n + 1] - fmag2[n]),
        )
    return TransmitConstants(neg, interf, ordering)


def build_bs_constants(
    m: int,
    k: int,
    n: int,
    V: np.ndarray,
    geometries: list[UserGeometry],
    bs_positions,
    user_positions,
    wavelength: float,
    alpha: float,
) -> tuple[AntennaViewpoint, TransmitConstants]:
    """Factorize user k's channel around BS antenna m for stream pair n."""
    view = antenna_viewpoint(
        geometries[k], bs_positions, user_positions[k], wavelength, V, m
    )
    return view, bs_constraint_constants(view, n, alpha)
