"""Alternating optimizer: beamforming/power, user moves, per-antenna BS moves.

Each subproblem is convexified around the current iterate with the bounds
from :mod:`manoma.bounds` and solved by the barrier method; the expansion
point is always feasible for the surrogate program, so every accepted step
keeps the full original constraint set satisfied and the objective
non-decreasing.  Internally everything runs in noise-normalized units (path
gains divided by the noise amplitude, noise power 1), which keeps all program
quantities O(1)-O(1e3) regardless of the pathloss scale; states returned to
callers are converted back to watts.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (
    AuxState,
    antenna_viewpoint,
    aux_pairs,
    bilinear_upper_coeffs,
    bs_constraint_constants,
    channel_gram,
    receive_curvature_bound,
    receive_quadform_eval,
    receive_quadform_gradient,
    stack_design,
    transmit_curvature_bound,
    transmit_quadform_eval,
    transmit_quadform_gradient,
    unstack_design,
)
from .channel import (
    LayoutState,
    REGION_TOL_M,
    min_pairwise_distance,
    receive_field_vector,
    transmit_field_matrix,
    uniform_grid,
)
from .config import SystemConfig
from .convex import ConvexProgram, solve
from .metrics import TransmitDesign

LOG2 = np.log(2.0)

# absolute constraint slack for the rebuild-and-retry path when floating-point
# rounding leaves the expansion point exactly on a surrogate boundary
RETRY_SLACKS = (1e-12, 1e-9)


class OptimizerError(RuntimeError):
    pass


@dataclass
class TraceRecord:
    """One accepted subproblem block: objective and rates after the block."""

    outer_iter: int
    subproblem: str
    objective_bpshz: float
    throughput_bpshz: float
    per_user_rates: tuple


@dataclass
class OptimizerState:
    """Snapshot of a run: layout, design, auxiliaries, and run diagnostics."""

    layout: LayoutState
    design: TransmitDesign
    aux: AuxState
    outer_iter: int = 0
    objective_trace: list = field(default_factory=list)
    throughput_trace: list = field(default_factory=list)
    records: list = field(default_factory=list)
    subproblem_solves: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    solver_retries: int = 0

    @property
    def throughput_bpshz(self) -> float:
        return self.throughput_trace[-1] if self.throughput_trace else np.nan


class _Workspace:
    """Mutable noise-normalized optimization state."""

    def __init__(self, config: SystemConfig, geometries, move_bs=True, move_users=True):
        self.cfg = config
        self.move_bs = move_bs
        self.move_users = move_users
        sigma = np.sqrt(config.noise_power_w)
        self.geoms = [replace(g, prm_diag=g.prm_diag / sigma) for g in geometries]
        self.wl = config.wavelength_m
        self.alpha = config.mrt_coefficient
        self.power = config.power_budget_w
        self.N = config.num_users
        self.M = config.num_bs_antennas
        self.pairs = list(aux_pairs(self.N))
        self.pair_pos = {pair: i for i, pair in enumerate(self.pairs)}
        self.bs_pos = None
        self.user_pos = None
        self.V = None
        self.r = None
        self.nu = None   # (N, N), noise units
        self.H = None
        self.retries = 0

    # -- state plumbing ------------------------------------------------------

    def refresh_channels(self):
        self.H = np.array(
            [
                (receive_field_vector(g, self.user_pos[n], self.wl) * g.prm_diag)
                @ transmit_field_matrix(g, self.bs_pos, self.wl)
                for n, g in enumerate(self.geoms)
            ]
        )

    def objective_bits(self) -> float:
        return float(np.sum(np.log2(self.r)))

    def received_powers(self) -> np.ndarray:
        return np.abs(self.H @ self.V) ** 2

    def per_user_rates(self) -> np.ndarray:
        p = self.received_powers()
        rates = np.zeros(self.N)
        for n in range(self.N):
            worst = min(
                p[k, n] / (p[k, n + 1 :].sum() + 1.0) for k in range(n, self.N)
            )
            rates[n] = np.log2(1.0 + worst)
        return rates

    def to_state(self) -> OptimizerState:
        sigma2 = self.cfg.noise_power_w
        nu = self.nu.copy()
        mask = np.isnan(nu)
        nu[~mask] *= sigma2
        return OptimizerState(
            layout=LayoutState(self.bs_pos.copy(), self.user_pos.copy()),
            design=TransmitDesign(self.V.copy()),
            aux=AuxState(self.r.copy(), nu),
        )

    @classmethod
    def from_state(cls, config, geometries, state, move_bs=True, move_users=True):
        ws = cls(config, geometries, move_bs, move_users)
        ws.bs_pos = np.array(state.layout.bs_positions, dtype=float)
        ws.user_pos = np.array(state.layout.user_positions, dtype=float)
        ws.V = np.array(state.design.V, dtype=complex)
        ws.r = np.array(state.aux.r, dtype=float)
        nu = np.array(state.aux.nu, dtype=float)
        mask = ~np.isnan(nu)
        nu[mask] /= config.noise_power_w
        ws.nu = nu
        ws.refresh_channels()
        return ws

    # -- initialization ------------------------------------------------------

    def initialize(self):
        cfg = self.cfg
        grid = uniform_grid(self.M, cfg.bs_region_m, inset=REGION_TOL_M)
        if self.M > 1 and min_pairwise_distance(grid) < self.wl / 2.0 - 1e-9:
            raise OptimizerError(
                "bs_region_m too small for a half-wavelength initialization grid"
            )
        self.bs_pos = grid
        self.user_pos = np.zeros((self.N, 2))
        self.refresh_channels()
        W = np.conj(self.H.T)
        W /= np.linalg.norm(W, axis=0, keepdims=True)
        powers = self._feasible_power_profile(W)
        self.V = W * np.sqrt(powers)
        self._init_aux()

    def _feasible_power_profile(self, W) -> np.ndarray:
        """Descending power split satisfying the ordering chain strictly."""
        budget = self.power * (1.0 - 1e-9)   # strict interior of the power ball
        N = self.N
        if N == 1:
            return np.array([budget])

        def chain_margin(p):
            V = W * np.sqrt(p)
            rec = np.abs(self.H @ V) ** 2
            worst = np.inf
            for k in range(1, N):
                for n in range(k):
                    worst = min(worst, rec[k, n] - self.alpha * rec[k, n + 1])
            return worst

        t = 0.5
        for _ in range(30):
            p = budget * (1.0 - t) * t ** np.arange(N) / (1.0 - t**N)
            if chain_margin(p) >= 1e-9:
                return p
            t *= 0.5
        eps = 1e-2
        for _ in range(30):
            p = np.full(N, eps * budget / (N - 1))
            p[0] = (1.0 - eps) * budget
            if chain_margin(p) >= 1e-9:
                return p
            eps *= 0.5
        raise OptimizerError("could not find a power split satisfying the ordering chain")

    def _init_aux(self):
        p = self.received_powers()
        N = self.N
        self.r = np.zeros(N)
        self.nu = np.full((N, N), np.nan)
        for n in range(N):
            sinrs = [p[k, n] / (p[k, n + 1 :].sum() + 1.0) for k in range(n, N)]
            self.r[n] = 1.0 + 0.9 * min(sinrs)
            if self.r[n] <= 1.0:
                raise OptimizerError(f"stream {n} has zero SINR at initialization")
            for k in range(n, N):
                self.nu[k, n] = 1.1 * (p[k, n + 1 :].sum() + 1.0)

    # -- shared program pieces ------------------------------------------------

    def _add_aux_variables(self, prog, slack):
        r_idx = prog.add_variable("r", self.N, lower=1.0 - slack)
        nu_idx = prog.add_variable("nu", len(self.pairs), lower=1.0 - slack)
        return r_idx, nu_idx

    def _aux_start(self):
        return np.concatenate(
            [self.r, np.array([self.nu[k, n] for k, n in self.pairs])]
        )

    def _apply_aux(self, sol):
        self.r = sol["r"].copy()
        nu = np.full((self.N, self.N), np.nan)
        vals = sol["nu"]
        for i, (k, n) in enumerate(self.pairs):
            nu[k, n] = vals[i]
        self.nu = nu

    # -- subproblem: beamforming and power ------------------------------------

    def build_beam_program(self, slack: float = 0.0):
        N, M = self.N, self.M
        prog = ConvexProgram()
        r_idx, nu_idx = self._add_aux_variables(prog, slack)
        beta_idx = prog.add_variable("beta", 2 * M * N)
        blocks = [beta_idx[2 * M * n : 2 * M * (n + 1)] for n in range(N)]
        grams = [channel_gram(h) for h in self.H]
        beta_j = [stack_design(self.V[:, n]) for n in range(N)]

        for i, (k, n) in enumerate(self.pairs):
            gram = grams[k]
            Qh, qh, ch = bilinear_upper_coeffs(self.r[n], self.nu[k, n])
            # tangent lower bound of |h_k v_n|^2 moves to the linear part
            grad_g = 2.0 * gram.gram @ beta_j[n]
            dim = 2 + 2 * M
            Q = np.zeros((dim, dim))
            Q[:2, :2] = Qh
            q = np.concatenate([qh, -grad_g])
            c = ch + float(beta_j[n] @ gram.gram @ beta_j[n]) - slack
            idx = np.concatenate([[r_idx[n], nu_idx[i]], blocks[n]])
            prog.add_quadratic(idx, Q, q, c)

            if n < N - 1:
                nlater = N - 1 - n
                sub = np.concatenate([beta_idx[2 * M * (n + 1) :], [nu_idx[i]]])
                A = np.zeros((2 * nlater + 2, sub.size))
                for jj in range(nlater):
                    A[2 * jj : 2 * jj + 2, 2 * M * jj : 2 * M * (jj + 1)] = gram.rows
                b = np.zeros(2 * nlater + 2)
                b[2 * nlater] = 1.0          # noise amplitude in noise units
                A[2 * nlater + 1, -1] = -0.5
                b[2 * nlater + 1] = 0.5
                cvec = np.zeros(sub.size)
                cvec[-1] = 0.5
                prog.add_soc(sub, A, b, cvec, 0.5 + slack)

        for k in range(1, N):
            gram = grams[k]
            lam = 2.0 * self.alpha * gram.norm_sq
            for n in range(k):
                zj = np.concatenate([beta_j[n], beta_j[n + 1]])
                grad = np.concatenate(
                    [-2.0 * gram.gram @ beta_j[n], 2.0 * self.alpha * gram.gram @ beta_j[n + 1]]
                )
                mj = float(
                    self.alpha * beta_j[n + 1] @ gram.gram @ beta_j[n + 1]
                    - beta_j[n] @ gram.gram @ beta_j[n]
                )
                Q = 0.5 * lam * np.eye(4 * M)
                q = grad - lam * zj
                c = mj - float(grad @ zj) + 0.5 * lam * float(zj @ zj) - slack
                prog.add_quadratic(np.concatenate([blocks[n], blocks[n + 1]]), Q, q, c)

        prog.add_quadratic(
            beta_idx, np.eye(2 * M * N), np.zeros(2 * M * N), -self.power - slack
        )
        prog.maximize_log(r_idx)
        start = np.concatenate([self._aux_start(), np.concatenate(beta_j)])
        return prog, start

    def apply_beam_solution(self, sol):
        self._apply_aux(sol)
        beta = sol["beta"]
        M = self.M
        for n in range(self.N):
            self.V[:, n] = unstack_design(beta[2 * M * n : 2 * M * (n + 1)])

    # -- subproblem: user antenna moves ---------------------------------------

    def _user_stream_responses(self, k: int) -> np.ndarray:
        """Per-path response of every beam at user k, columns indexed by stream."""
        g = self.geoms[k]
        G = transmit_field_matrix(g, self.bs_pos, self.wl)
        return g.prm_diag[:, None] * (G @ self.V)

    def build_user_program(self, slack: float = 0.0):
        N = self.N
        prog = ConvexProgram()
        r_idx, nu_idx = self._add_aux_variables(prog, slack)
        half_w = self.cfg.user_region_m / 2.0 / self.wl

        responses = [self._user_stream_responses(k) for k in range(N)]

        def quadform(k, n, kind):
            c = responses[k]
            if kind == "neg_signal":
                return -np.outer(c[:, n], np.conj(c[:, n]))
            if kind == "interference":
                later = c[:, n + 1 :]
                return later @ later.conj().T
            return self.alpha * np.outer(c[:, n + 1], np.conj(c[:, n + 1])) - np.outer(
                c[:, n], np.conj(c[:, n])
            )

        # a user's position matters only if some off-diagonal quadform mass
        # survives (single-path users and region-less configs stay put)
        movable = {}
        for k in range(N):
            if not self.move_users or half_w <= 0.0:
                continue
            mass = 0.0
            for n in range(N):
                Qm = quadform(k, n, "neg_signal")
                mass += receive_curvature_bound(Qm, self.geoms[k], self.wl)
            if mass > 0.0:
                movable[k] = prog.add_variable(f"u{k}", 2, lower=-half_w, upper=half_w)

        def add_position_constraint(k, n, kind, extra_idx, extra_Q, extra_q, extra_c):
            """Surrogate of quadform(k,n,kind) plus an affine aux part <= 0."""
            Qm = quadform(k, n, kind)
            geom = self.geoms[k]
            uj = self.user_pos[k]
            val = receive_quadform_eval(uj, Qm, geom, self.wl)
            if k in movable:
                grad = receive_quadform_gradient(uj, Qm, geom, self.wl) * self.wl
                kappa = receive_curvature_bound(Qm, geom, self.wl) * self.wl**2
                ujw = uj / self.wl
                dim = len(extra_idx) + 2
                Q = np.zeros((dim, dim))
                Q[: len(extra_idx), : len(extra_idx)] = extra_Q
                Q[len(extra_idx) :, len(extra_idx) :] = 0.5 * kappa * np.eye(2)
                q = np.concatenate([extra_q, grad - kappa * ujw])
                c = (
                    extra_c
                    + val
                    - float(grad @ ujw)
                    + 0.5 * kappa * float(ujw @ ujw)
                    - slack
                )
                prog.add_quadratic(np.concatenate([extra_idx, movable[k]]), Q, q, c)
            elif len(extra_idx):
                prog.add_quadratic(
                    np.asarray(extra_idx), extra_Q, extra_q, extra_c + val - slack
                )
            elif val > slack:
                raise OptimizerError(
                    "constant ordering constraint violated at a fixed user position"
                )

        for i, (k, n) in enumerate(self.pairs):
            Qh, qh, ch = bilinear_upper_coeffs(self.r[n], self.nu[k, n])
            add_position_constraint(
                k, n, "neg_signal", [r_idx[n], nu_idx[i]], Qh, qh, ch
            )
            if n < N - 1:
                add_position_constraint(
                    k,
                    n,
                    "interference",
                    [nu_idx[i]],
                    np.zeros((1, 1)),
                    np.array([-1.0]),
                    1.0,  # noise power in noise units
                )

        for k in range(1, N):
            for n in range(k):
                add_position_constraint(
                    k, n, "ordering", np.zeros(0, dtype=int), np.zeros((0, 0)), np.zeros(0), 0.0
                )

        prog.maximize_log(r_idx)
        start = [self._aux_start()]
        for k in movable:
            start.append(self.user_pos[k] / self.wl)
        self._movable_users = list(movable)
        return prog, np.concatenate(start)

    def apply_user_solution(self, sol):
        self._apply_aux(sol)
        for k in self._movable_users:
            self.user_pos[k] = sol[f"u{k}"] * self.wl
        self.refresh_channels()

    # -- subproblem: one BS antenna move --------------------------------------

    def build_bs_program(self, m: int, slack: float = 0.0):
        N = self.N
        prog = ConvexProgram()
        r_idx, nu_idx = self._add_aux_variables(prog, slack)
        half_w = self.cfg.bs_region_m / 2.0 / self.wl

        views = [
            antenna_viewpoint(self.geoms[k], self.bs_pos, self.user_pos[k], self.wl, self.V, m)
            for k in range(N)
        ]
        consts = [
            [bs_constraint_constants(views[k], n, self.alpha) for n in range(N)]
            for k in range(N)
        ]

        # the antenna only matters if it carries beam weight
        movable = self.move_bs and float(np.sum(np.abs(self.V[m, :]) ** 2)) > 0.0
        if movable:
            u_idx = prog.add_variable("u", 2, lower=-half_w, upper=half_w)
            ujw = self.bs_pos[m] / self.wl
            for l in range(self.M):
                if l == m:
                    continue
                direction = (self.bs_pos[m] - self.bs_pos[l]) / self.wl
                norm = float(np.linalg.norm(direction))
                if norm < 1e-12:
                    raise OptimizerError("coincident BS antennas in reference layout")
                a = direction / norm
                other = self.bs_pos[l] / self.wl
                # a @ (u - other) >= 1/2  ->  -a @ u <= -(1/2 + a @ other)
                prog.add_linear(u_idx, -a, -(0.5 + float(a @ other)) + slack)

        def add_constraint(k, triple, extra_idx, extra_Q, extra_q, extra_c):
            quad, lin, const = triple
            geom = self.geoms[k]
            uj = self.bs_pos[m]
            val = transmit_quadform_eval(uj, quad, lin, const, geom, self.wl)
            if movable:
                grad = transmit_quadform_gradient(uj, quad, lin, geom, self.wl) * self.wl
                kappa = transmit_curvature_bound(quad, lin, geom, self.wl) * self.wl**2
                ujw_ = uj / self.wl
                dim = len(extra_idx) + 2
                Q = np.zeros((dim, dim))
                Q[: len(extra_idx), : len(extra_idx)] = extra_Q
                Q[len(extra_idx) :, len(extra_idx) :] = 0.5 * kappa * np.eye(2)
                q = np.concatenate([extra_q, grad - kappa * ujw_])
                c = (
                    extra_c
                    + val
                    - float(grad @ ujw_)
                    + 0.5 * kappa * float(ujw_ @ ujw_)
                    - slack
                )
                prog.add_quadratic(np.concatenate([extra_idx, u_idx]), Q, q, c)
            elif len(extra_idx):
                prog.add_quadratic(
                    np.asarray(extra_idx), extra_Q, extra_q, extra_c + val - slack
                )
            elif val > slack:
                raise OptimizerError(
                    "constant ordering constraint violated at a fixed BS antenna"
                )

        for i, (k, n) in enumerate(self.pairs):
            Qh, qh, ch = bilinear_upper_coeffs(self.r[n], self.nu[k, n])
            add_constraint(k, consts[k][n].neg_signal, [r_idx[n], nu_idx[i]], Qh, qh, ch)
            if n < N - 1:
                add_constraint(
                    k,
                    consts[k][n].interference,
                    [nu_idx[i]],
                    np.zeros((1, 1)),
                    np.array([-1.0]),
                    1.0,
                )
        for k in range(1, N):
            for n in range(k):
                add_constraint(
                    k,
                    consts[k][n].ordering_gap,
                    np.zeros(0, dtype=int),
                    np.zeros((0, 0)),
                    np.zeros(0),
                    0.0,
                )

        prog.maximize_log(r_idx)
        start = [self._aux_start()]
        if movable:
            start.append(self.bs_pos[m] / self.wl)
        self._bs_movable = movable
        return prog, np.concatenate(start)

    def apply_bs_solution(self, sol, m: int):
        self._apply_aux(sol)
        if self._bs_movable:
            self.bs_pos[m] = sol["u"] * self.wl
            self.refresh_channels()

    # -- SCA driver ------------------------------------------------------------

    def _snapshot(self):
        return (
            self.r.copy(),
            self.nu.copy(),
            self.V.copy(),
            self.bs_pos.copy(),
            self.user_pos.copy(),
            self.H.copy(),
        )

    def _restore(self, snap):
        self.r, self.nu, self.V, self.bs_pos, self.user_pos, self.H = (
            snap[0].copy(),
            snap[1].copy(),
            snap[2].copy(),
            snap[3].copy(),
            snap[4].copy(),
            snap[5].copy(),
        )

    def run_block(self, build, apply_fn, max_iters: int) -> int:
        """Iterate one surrogate family until its objective stalls.

        Returns the number of accepted solves.  A solve whose objective would
        regress (possible only within solver tolerance) is discarded and the
        block stops; monotonicity of the outer objective is therefore exact.
        """
        solves = 0
        current = self.objective_bits()
        for it in range(max_iters):
            # the expansion point is near-optimal on re-solves, so later
            # iterations start the barrier path closer to its end
            sol = self._solve_with_retry(build, t0=1.0 if it == 0 else 1e3)
            snap = self._snapshot()
            apply_fn(sol)
            new = self.objective_bits()
            if new < current:
                self._restore(snap)
                break
            solves += 1
            gain = new - current
            current = new
            if gain < self.cfg.convergence_tol_inner * max(1.0, abs(current)):
                break
        return solves

    def _solve_with_retry(self, build, t0: float = 1.0):
        prog, start = build(0.0)
        sol = solve(prog, start, t0=t0)
        if sol.status != "infeasible":
            return sol
        for slack in RETRY_SLACKS:
            self.retries += 1
            prog, start = build(slack)
            sol = solve(prog, start, t0=t0)
            if sol.status != "infeasible":
                return sol
        raise OptimizerError(
            "surrogate program rejected its own expansion point; this is a bug"
        )


# ---------------------------------------------------------------------------
# public operations


def initialize_feasible(config: SystemConfig, geometries) -> OptimizerState:
    ws = _Workspace(config, geometries)
    ws.initialize()
    return ws.to_state()


def solve_p2(config, geometries, state: OptimizerState) -> OptimizerState:
    """One beamforming/power block (inner SCA loop) from the given state."""
    ws = _Workspace.from_state(config, geometries, state)
    ws.run_block(ws.build_beam_program, ws.apply_beam_solution, config.inner_iters_beam)
    return ws.to_state()


def solve_p3(config, geometries, state: OptimizerState) -> OptimizerState:
    """One user-position block from the given state."""
    ws = _Workspace.from_state(config, geometries, state)
    ws.run_block(ws.build_user_program, ws.apply_user_solution, config.inner_iters_user)
    return ws.to_state()


def solve_p4m(config, geometries, state: OptimizerState, m: int) -> OptimizerState:
    """One BS-antenna block for antenna m from the given state."""
    ws = _Workspace.from_state(config, geometries, state)
    ws.run_block(
        lambda slack=0.0: ws.build_bs_program(m, slack),
        lambda sol: ws.apply_bs_solution(sol, m),
        config.inner_iters_bs,
    )
    return ws.to_state()


def optimize(
    config: SystemConfig,
    geometries,
    move_bs: bool = True,
    move_users: bool = True,
) -> OptimizerState:
    """Full nested-loop run to a stationary design.

    The outer loop alternates the three blocks until the auxiliary objective
    improves by less than ``convergence_tol_outer`` bits/s/Hz (or the
    iteration cap); the returned state carries the per-outer-iteration trace
    and per-block solve counts.
    """
    t0 = time.perf_counter()
    ws = _Workspace(config, geometries, move_bs=move_bs, move_users=move_users)
    ws.initialize()

    records = []
    solves = {"beam": 0, "user": 0, "bs": 0}
    trace = [ws.objective_bits()]
    thr_trace = [float(ws.per_user_rates().sum())]

    def record(outer, label):
        rates = ws.per_user_rates()
        records.append(
            TraceRecord(outer, label, ws.objective_bits(), float(rates.sum()), tuple(rates))
        )

    outer = 0
    for outer in range(1, config.outer_iters + 1):
        solves["beam"] += ws.run_block(
            ws.build_beam_program, ws.apply_beam_solution, config.inner_iters_beam
        )
        record(outer, "beam")
        if move_users:
            solves["user"] += ws.run_block(
                ws.build_user_program, ws.apply_user_solution, config.inner_iters_user
            )
            record(outer, "user")
        if move_bs:
            for m in range(config.num_bs_antennas):
                solves["bs"] += ws.run_block(
                    lambda slack=0.0: ws.build_bs_program(m, slack),
                    lambda sol, m=m: ws.apply_bs_solution(sol, m),
                    config.inner_iters_bs,
                )
            record(outer, "bs")
        trace.append(ws.objective_bits())
        thr_trace.append(float(ws.per_user_rates().sum()))
        if trace[-1] - trace[-2] < config.convergence_tol_outer:
            break

    state = ws.to_state()
    state.outer_iter = outer
    state.objective_trace = trace
    state.throughput_trace = thr_trace
    state.records = records
    state.subproblem_solves = solves
    state.solver_retries = ws.retries
    state.wall_time_s = time.perf_counter() - t0
    return state
