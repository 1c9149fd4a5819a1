"""SINRs, achievable rates, throughput and ordering-constraint margins.

Users are indexed in SIC order: user 0 is decoded first everywhere (farthest
from the BS), user N-1 last.  All functions are pure and operate on the
combined beamforming matrix V whose column n is sqrt(p_n) * w_n.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LayoutState, UserGeometry, channel_matrix, layout_violations
from .config import SystemConfig

# absolute constraint tolerance in watts (see mrt_satisfied)
MARGIN_TOL_W = 1e-7


@dataclass(frozen=True)
class TransmitDesign:
    """Combined beamforming/power matrix V (M x N complex)."""

    V: np.ndarray

    @property
    def powers(self) -> np.ndarray:
        """Per-user transmit power p_n = ||v_n||^2."""
        return np.sum(np.abs(self.V) ** 2, axis=0)

    @property
    def beamformers(self) -> np.ndarray:
        """Unit-norm beamformers; an all-zero column stays zero."""
        norms = np.sqrt(self.powers)
        W = np.zeros_like(self.V)
        nz = norms > 0
        W[:, nz] = self.V[:, nz] / norms[nz]
        return W

    @property
    def total_power(self) -> float:
        return float(self.powers.sum())


@dataclass(frozen=True)
class RateReport:
    """Per-user SINRs/rates plus ordering margins for one (layout, design)."""

    sinr_table: np.ndarray        # (N, N); entry (k, l) defined for l <= k
    per_user_rates: np.ndarray    # bits/s/Hz
    throughput_bpshz: float
    mrt_margins: list             # (k, n, margin) triples, watts


def received_powers(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """|h_k v_n|^2 for every user k and stream n, shape (N, N)."""
    return np.abs(H @ V) ** 2


def sinr(k: int, l: int, H: np.ndarray, V: np.ndarray, sigma2: float) -> float:
    """SINR of stream l while being decoded at user k (requires l <= k).

    Streams decoded later (index > l) are interference; for the last stream
    the denominator is the noise power alone.
    """
    N = H.shape[0]
    if not (0 <= l <= k < N):
        raise IndexError(f"need 0 <= l <= k < {N}, got (k={k}, l={l})")
    p = np.abs(H[k] @ V) ** 2
    return float(p[l] / (p[l + 1 :].sum() + sigma2))


def user_rate(k: int, H: np.ndarray, V: np.ndarray, sigma2: float) -> float:
    """Achievable rate of user k: its stream must survive decoding at every
    later user, so the governing SINR is the minimum over decoders k..N-1."""
    N = H.shape[0]
    worst = min(sinr(dec, k, H, V, sigma2) for dec in range(k, N))
    return float(np.log2(1.0 + worst))


def throughput(H: np.ndarray, V: np.ndarray, sigma2: float) -> float:
    """System throughput: sum of per-user achievable rates, bits/s/Hz."""
    return float(sum(user_rate(k, H, V, sigma2) for k in range(H.shape[0])))


def rate_product_form(H: np.ndarray, V: np.ndarray, sigma2: float) -> float:
    """Geometric mean of r_k = 1 + min-SINR; N*log2 of it equals throughput."""
    N = H.shape[0]
    r = np.array(
        [1.0 + min(sinr(dec, k, H, V, sigma2) for dec in range(k, N)) for k in range(N)]
    )
    return float(np.prod(r) ** (1.0 / N))


def mrt_margins(H: np.ndarray, V: np.ndarray, alpha: float) -> list:
    """Pairwise margins |h_k v_n|^2 - alpha*|h_k v_{n+1}|^2, in watts.

    One triple (k, n, margin) per user k >= 1 and stream n < k; the chained
    rate-floor constraint holds iff every margin is >= -tol.
    """
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    N = H.shape[0]
    p = received_powers(H, V)
    out = []
    for k in range(1, N):
        for n in range(k):
            out.append((k, n, float(p[k, n] - alpha * p[k, n + 1])))
    return out


def mrt_satisfied(H, V, alpha, tol: float = MARGIN_TOL_W) -> bool:
    return all(m >= -tol for _, _, m in mrt_margins(H, V, alpha))


def rate_report(H: np.ndarray, V: np.ndarray, sigma2: float, alpha: float) -> RateReport:
    N = H.shape[0]
    table = np.full((N, N), np.nan)
    for k in range(N):
        for l in range(k + 1):
            table[k, l] = sinr(k, l, H, V, sigma2)
    rates = np.array([user_rate(k, H, V, sigma2) for k in range(N)])
    return RateReport(table, rates, float(rates.sum()), mrt_margins(H, V, alpha))


@dataclass(frozen=True)
class FeasibilityReport:
    """Independent constraint audit of a (layout, design) pair."""

    power_slack_w: float          # P_t - total transmit power
    layout_problems: list
    worst_mrt_margin: float       # min margin, normalized by the noise power
    aux_rate_slack: float         # min over (k,n) of SINR - (r_n - 1), NaN if no aux
    aux_interference_slack: float  # min of nu - (interference + sigma2), in noise units

    @property
    def ok(self) -> bool:
        aux_ok = (
            (np.isnan(self.aux_rate_slack) or self.aux_rate_slack >= -1e-6)
            and (np.isnan(self.aux_interference_slack)
                 or self.aux_interference_slack >= -1e-6)
        )
        return (
            self.power_slack_w >= -MARGIN_TOL_W
            and not self.layout_problems
            and self.worst_mrt_margin >= -MARGIN_TOL_W
            and aux_ok
        )


def feasibility_report(
    config: SystemConfig,
    geometries: list[UserGeometry],
    layout: LayoutState,
    design: TransmitDesign,
    aux=None,
) -> FeasibilityReport:
    """Re-evaluate every original-problem constraint from scratch.

    Deliberately independent of the optimizer: channels are rebuilt from the
    geometry, and margins are checked in noise-normalized units so tolerances
    are meaningful at any pathloss scale.
    """
    H = channel_matrix(geometries, layout, config.wavelength_m)
    sigma2 = config.noise_power_w
    power_slack = config.power_budget_w - design.total_power
    problems = layout_violations(layout, config)
    margins = mrt_margins(H, design.V, config.mrt_coefficient)
    worst = min((m / sigma2 for _, _, m in margins), default=np.inf)

    rate_slack = np.nan
    interf_slack = np.nan
    if aux is not None:
        p = received_powers(H, design.V)
        N = config.num_users
        rate_slacks, int_slacks = [], []
        for n in range(N):
            for k in range(n, N):
                interference = p[k, n + 1 :].sum() + sigma2
                rate_slacks.append(p[k, n] / interference - (aux.r[n] - 1.0))
                int_slacks.append((aux.nu[k, n] - interference) / sigma2)
        rate_slack = float(min(rate_slacks))
        interf_slack = float(min(int_slacks))
    return FeasibilityReport(power_slack, problems, float(worst), rate_slack, interf_slack)
