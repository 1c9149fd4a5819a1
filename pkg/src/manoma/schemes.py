"""Comparison multiple-access schemes evaluated on shared channel draws.

NOMA variants reuse the joint optimizer with position blocks selectively
frozen.  SDMA uses zero-forcing beams with water-filled powers; TDMA serves
one user per equal slot at full power with maximum-ratio transmission.  The
movable variants of SDMA/TDMA improve antenna positions by a deterministic
per-element coordinate search on a quarter-wavelength lattice (the current
position is always a candidate, so a search round never loses rate).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .channel import (
    LayoutState,
    UserGeometry,
    channel_matrix,
    min_pairwise_distance,
    receive_field_vector,
    transmit_field_matrix,
    uniform_grid,
)
from .config import SystemConfig
from .metrics import TransmitDesign, user_rate
from .optimizer import optimize

SCHEME_IDS = (
    "NOMA-MA",
    "NOMA-MA-UE",
    "NOMA-FPA",
    "SDMA-MA",
    "SDMA-FPA",
    "TDMA-MA",
    "TDMA-FPA",
)

ZF_DAMPING = 1e-9
SEARCH_ROUNDS = 12
SEARCH_REL_TOL = 1e-12


@dataclass
class SchemeResult:
    scheme: str
    throughput_bpshz: float
    per_user_rates: np.ndarray
    layout: LayoutState
    wall_time_s: float
    outer_iters: int
    objective_trace: list | None = None
    design: TransmitDesign | None = None


def run_scheme(scheme: str, config: SystemConfig, geometries) -> SchemeResult:
    if scheme not in SCHEME_IDS:
        raise ValueError(f"unknown scheme '{scheme}'; expected one of {SCHEME_IDS}")
    t0 = time.perf_counter()
    if scheme == "NOMA-MA":
        out = _run_noma(config, geometries, move_bs=True, move_users=True)
    elif scheme == "NOMA-MA-UE":
        out = run_noma_ma_ue(config, geometries)
    elif scheme == "NOMA-FPA":
        out = run_noma_fpa(config, geometries)
    elif scheme == "SDMA-MA":
        out = run_sdma(config, geometries, movable=True)
    elif scheme == "SDMA-FPA":
        out = run_sdma(config, geometries, movable=False)
    elif scheme == "TDMA-MA":
        out = run_tdma(config, geometries, movable=True)
    else:
        out = run_tdma(config, geometries, movable=False)
    out.wall_time_s = time.perf_counter() - t0
    return out


# ---------------------------------------------------------------------------
# NOMA family


def _run_noma(config, geometries, move_bs: bool, move_users: bool) -> SchemeResult:
    res = optimize(config, geometries, move_bs=move_bs, move_users=move_users)
    H = channel_matrix(geometries, res.layout, config.wavelength_m)
    sigma2 = config.noise_power_w
    rates = np.array(
        [user_rate(k, H, res.design.V, sigma2) for k in range(config.num_users)]
    )
    label = "NOMA-MA" if move_bs else ("NOMA-MA-UE" if move_users else "NOMA-FPA")
    return SchemeResult(
        scheme=label,
        throughput_bpshz=float(rates.sum()),
        per_user_rates=rates,
        layout=res.layout,
        wall_time_s=res.wall_time_s,
        outer_iters=res.outer_iter,
        objective_trace=list(res.objective_trace),
        design=res.design,
    )


def run_noma_fpa(config, geometries) -> SchemeResult:
    """NOMA with the static uniform array and users at their region origins."""
    return _run_noma(config, geometries, move_bs=False, move_users=False)


def run_noma_ma_ue(config, geometries) -> SchemeResult:
    """NOMA with a static BS array but movable user antennas."""
    return _run_noma(config, geometries, move_bs=False, move_users=True)


# ---------------------------------------------------------------------------
# coordinate search machinery shared by SDMA-MA and TDMA-MA


def _axis_lattice(side: float, wavelength: float) -> np.ndarray:
    if side <= 0.0:
        return np.zeros(1)
    spacing = wavelength / 4.0
    half = side / 2.0
    count = int(np.floor(side / spacing)) + 1
    return -half + spacing * np.arange(count)


def _position_candidates(side: float, wavelength: float, current) -> np.ndarray:
    axis = _axis_lattice(side, wavelength)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    cands = np.column_stack([xx.ravel(), yy.ravel()])
    return np.vstack([cands, np.asarray(current, dtype=float)[None, :]])


def _bs_column_candidates(geom: UserGeometry, cands: np.ndarray, wavelength: float,
                          user_position) -> np.ndarray:
    """Channel entry of one BS antenna for every candidate position, (C,)."""
    f = receive_field_vector(geom, user_position, wavelength)
    eta = f * geom.prm_diag
    ct = np.cos(geom.aod_elevation)
    rho = np.outer(cands[:, 0], ct * np.cos(geom.aod_azimuth)) + np.outer(
        cands[:, 1], ct * np.sin(geom.aod_azimuth)
    )
    return np.exp(2j * np.pi * rho / wavelength) @ eta


def _user_row_candidates(geom: UserGeometry, cands: np.ndarray, wavelength: float,
                         bs_positions) -> np.ndarray:
    """Channel row of one user for every candidate position, (C, M)."""
    G = transmit_field_matrix(geom, bs_positions, wavelength)
    ct = np.cos(geom.aoa_elevation)
    rho = np.outer(cands[:, 0], ct * np.cos(geom.aoa_azimuth)) + np.outer(
        cands[:, 1], ct * np.sin(geom.aoa_azimuth)
    )
    return (np.exp(2j * np.pi * rho / wavelength) * geom.prm_diag) @ G


def _spacing_ok(cands: np.ndarray, others: np.ndarray, min_dist: float) -> np.ndarray:
    if others.size == 0:
        return np.ones(cands.shape[0], dtype=bool)
    d2 = ((cands[:, None, :] - others[None, :, :]) ** 2).sum(axis=-1)
    return d2.min(axis=1) >= min_dist**2


# ---------------------------------------------------------------------------
# SDMA


def zf_beamformers(H: np.ndarray) -> np.ndarray:
    """Unit-norm zero-forcing columns from the channel pseudo-inverse."""
    try:
        W = np.linalg.pinv(H)
    except np.linalg.LinAlgError:
        gram = H @ H.conj().T
        W = H.conj().T @ np.linalg.inv(gram + ZF_DAMPING * np.trace(gram).real * np.eye(H.shape[0]))
    norms = np.linalg.norm(W, axis=0)
    nz = norms > 0
    W[:, nz] /= norms[nz]
    return W


def waterfill(gains: np.ndarray, sigma2: float, budget: float) -> np.ndarray:
    """Classic water-filling over parallel channels with gains ``gains``."""
    return waterfill_batch(np.asarray(gains, dtype=float)[None, :], sigma2, budget)[0]


def waterfill_batch(gains: np.ndarray, sigma2: float, budget: float) -> np.ndarray:
    """Water-filling applied along the last axis of a gain stack."""
    g = np.asarray(gains, dtype=float)
    n = g.shape[-1]
    floors = np.where(g > 0, sigma2 / np.maximum(g, 1e-300), np.inf)
    s = np.sort(floors, axis=-1)
    csum = np.cumsum(np.where(np.isfinite(s), s, 0.0), axis=-1)
    counts = np.arange(1, n + 1, dtype=float)
    levels = (budget + csum) / counts
    ok = np.isfinite(s) & (levels > s)
    any_ok = ok.any(axis=-1)
    k_active = np.where(any_ok, n - 1 - np.argmax(ok[..., ::-1], axis=-1), 0)
    level = np.take_along_axis(levels, k_active[..., None], axis=-1)
    p = np.maximum(level - floors, 0.0)
    p[~any_ok] = 0.0
    return p


def _zf_batch(H_stack: np.ndarray) -> np.ndarray:
    """Unit-norm ZF columns for a stack of channel matrices, (C, M, N)."""
    gram = np.einsum("cnm,ckm->cnk", H_stack, H_stack.conj())
    eye = np.eye(H_stack.shape[1])
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        damp = ZF_DAMPING * np.einsum("cnn->c", gram).real
        inv = np.linalg.inv(gram + damp[:, None, None] * eye)
    W = np.einsum("cnm,cnk->cmk", H_stack.conj(), inv)
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    return W / np.maximum(norms, 1e-300)


def _sdma_sum_rates_batch(H_stack: np.ndarray, sigma2: float, budget: float) -> np.ndarray:
    """ZF + water-filling sum rate for every channel matrix in the stack."""
    W = _zf_batch(H_stack)
    cross = np.abs(np.einsum("ckm,cmj->ckj", H_stack, W)) ** 2
    diag = np.einsum("ckk->ck", cross)
    p = waterfill_batch(diag, sigma2, budget)
    signal = p * diag
    interference = np.einsum("ckj,cj->ck", cross, p) - signal
    rates = np.log2(1.0 + signal / (interference + sigma2))
    return rates.sum(axis=-1)


def _sdma_rates(H: np.ndarray, sigma2: float, budget: float) -> np.ndarray:
    W = zf_beamformers(H)
    cross = np.abs(H @ W) ** 2          # (k, j): user k hit by beam j, unit power
    p = waterfill(np.diag(cross).copy(), sigma2, budget)
    signal = p * np.diag(cross)
    interference = cross @ p - signal
    return np.log2(1.0 + signal / (interference + sigma2))


def run_sdma(config: SystemConfig, geometries, movable: bool) -> SchemeResult:
    if config.num_bs_antennas < config.num_users:
        raise ValueError("zero-forcing needs at least as many BS antennas as users")
    sigma2 = config.noise_power_w
    budget = config.power_budget_w
    wl = config.wavelength_m
    bs = uniform_grid(config.num_bs_antennas, config.bs_region_m)
    users = np.zeros((config.num_users, 2))
    rounds = 0

    def sum_rate(H):
        return float(_sdma_rates(H, sigma2, budget).sum())

    H = channel_matrix(geometries, LayoutState(bs, users), wl)
    if movable:
        best = sum_rate(H)
        for rounds in range(1, SEARCH_ROUNDS + 1):
            improved = best
            for m in range(config.num_bs_antennas):
                cands = _position_candidates(config.bs_region_m, wl, bs[m])
                ok = _spacing_ok(cands, np.delete(bs, m, axis=0), wl / 2.0)
                cands = cands[ok]
                cols = np.stack(
                    [
                        _bs_column_candidates(g, cands, wl, users[k])
                        for k, g in enumerate(geometries)
                    ],
                    axis=1,
                )  # (C, N)
                H_stack = np.repeat(H[None, :, :], cands.shape[0], axis=0)
                H_stack[:, :, m] = cols
                vals = _sdma_sum_rates_batch(H_stack, sigma2, budget)
                pick = int(np.argmax(vals))
                if vals[pick] > best:
                    best = float(vals[pick])
                    bs[m] = cands[pick]
                    H[:, m] = cols[pick]
            for k, g in enumerate(geometries):
                cands = _position_candidates(config.user_region_m, wl, users[k])
                rows = _user_row_candidates(g, cands, wl, bs)
                H_stack = np.repeat(H[None, :, :], cands.shape[0], axis=0)
                H_stack[:, k, :] = rows
                vals = _sdma_sum_rates_batch(H_stack, sigma2, budget)
                pick = int(np.argmax(vals))
                if vals[pick] > best:
                    best = float(vals[pick])
                    users[k] = cands[pick]
                    H[k] = rows[pick]
            if best - improved <= SEARCH_REL_TOL * max(1.0, abs(best)):
                break

    rates = _sdma_rates(H, sigma2, budget)
    W = zf_beamformers(H)
    p = waterfill(np.diag(np.abs(H @ W) ** 2), sigma2, budget)
    return SchemeResult(
        scheme="SDMA-MA" if movable else "SDMA-FPA",
        throughput_bpshz=float(rates.sum()),
        per_user_rates=rates,
        layout=LayoutState(bs, users),
        wall_time_s=0.0,
        outer_iters=rounds,
        design=TransmitDesign(W * np.sqrt(p)),
    )


# ---------------------------------------------------------------------------
# TDMA


def _slot_fractions(n: int) -> np.ndarray:
    # last slot absorbs rounding so the fractions sum to 1 exactly
    tau = np.full(n, 1.0 / n)
    tau[-1] = 1.0 - tau[:-1].sum()
    return tau


def run_tdma(config: SystemConfig, geometries, movable: bool) -> SchemeResult:
    """One user per slot at full power with an MRT beam.

    Equal slot fractions realize the proportional-fair split; the movable
    variant re-positions the BS array and the active user's antenna each slot
    to maximize that user's channel gain.
    """
    sigma2 = config.noise_power_w
    budget = config.power_budget_w
    wl = config.wavelength_m
    N = config.num_users
    tau = _slot_fractions(N)
    base_bs = uniform_grid(config.num_bs_antennas, config.bs_region_m)
    rates = np.zeros(N)
    rounds_total = 0
    last_layout = LayoutState(base_bs.copy(), np.zeros((N, 2)))

    for k, geom in enumerate(geometries):
        bs = base_bs.copy()
        upos = np.zeros(2)

        def gain(h):
            return float(np.sum(np.abs(h) ** 2))

        h = (receive_field_vector(geom, upos, wl) * geom.prm_diag) @ transmit_field_matrix(
            geom, bs, wl
        )
        if movable:
            best = gain(h)
            for _ in range(SEARCH_ROUNDS):
                rounds_total += 1
                improved = best
                for m in range(config.num_bs_antennas):
                    cands = _position_candidates(config.bs_region_m, wl, bs[m])
                    ok = _spacing_ok(cands, np.delete(bs, m, axis=0), wl / 2.0)
                    cands = cands[ok]
                    cols = _bs_column_candidates(geom, cands, wl, upos)
                    vals = best - np.abs(h[m]) ** 2 + np.abs(cols) ** 2
                    pick = int(np.argmax(vals))
                    if vals[pick] > best:
                        best = vals[pick]
                        bs[m] = cands[pick]
                        h[m] = cols[pick]
                cands = _position_candidates(config.user_region_m, wl, upos)
                rows = _user_row_candidates(geom, cands, wl, bs)
                vals = np.sum(np.abs(rows) ** 2, axis=1)
                pick = int(np.argmax(vals))
                if vals[pick] > best:
                    best = vals[pick]
                    upos = cands[pick]
                    h = rows[pick]
                if best - improved <= SEARCH_REL_TOL * max(1.0, abs(best)):
                    break
        rates[k] = tau[k] * np.log2(1.0 + budget * gain(h) / sigma2)
        if movable:
            layout_users = np.zeros((N, 2))
            layout_users[k] = upos
            last_layout = LayoutState(bs.copy(), layout_users)

    return SchemeResult(
        scheme="TDMA-MA" if movable else "TDMA-FPA",
        throughput_bpshz=float(rates.sum()),
        per_user_rates=rates,
        layout=last_layout,
        wall_time_s=0.0,
        outer_iters=rounds_total,
    )
