"""Deterministic validation battery for the bound library and the solver.

Each check draws its own seeded samples, compares the implementation under
test against a direct/brute-force evaluation, and reports the worst deviation
observed.  Used by the ``check`` CLI command and by the acceptance suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import (
    bilinear_upper,
    channel_gram,
    interference_quadform,
    min_distance_linearized,
    ordering_upper_fk,
    quadratic_lower,
    receive_curvature_bound,
    receive_quadform_eval,
    receive_taylor_upper,
    signal_quadform,
    ordering_gap_quadform,
    antenna_viewpoint,
    bs_constraint_constants,
    stack_design,
    transmit_curvature_bound,
    transmit_quadform_eval,
    transmit_taylor_upper,
)
from .channel import UserGeometry, channel_vector, receive_field_vector
from .convex import ConvexProgram, solve

BOUND_TOL = 1e-9
HESSIAN_TOL = 1e-6
IDENTITY_RTOL = 1e-9
WAVELENGTH = 0.01


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


def _geometry(rng, L):
    return UserGeometry(
        distance_m=float(rng.uniform(50, 200)),
        aod_elevation=rng.uniform(0, np.pi / 2, L),
        aod_azimuth=rng.uniform(0, 2 * np.pi, L),
        aoa_elevation=rng.uniform(0, np.pi / 2, L),
        aoa_azimuth=rng.uniform(0, 2 * np.pi, L),
        prm_diag=rng.standard_normal(L) + 1j * rng.standard_normal(L),
    )


def _hermitian(rng, L):
    X = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
    return 0.5 * (X + X.conj().T)


def check_bound_dominance(samples: int = 1000, seed: int = 0) -> CheckResult:
    """Every surrogate dominates its target and is tight at the expansion."""
    rng = np.random.default_rng(seed)
    worst_gap = np.inf   # most negative dominance margin
    worst_tight = 0.0    # largest expansion-point mismatch

    for _ in range(samples):
        r, nu, rj, nuj = rng.uniform(1.0, 10.0, 4)
        worst_gap = min(worst_gap, bilinear_upper(r, nu, rj, nuj) - (r - 1) * nu)
        worst_tight = max(
            worst_tight, abs(bilinear_upper(rj, nuj, rj, nuj) - (rj - 1) * nuj)
        )

    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    gram = channel_gram(h)
    for _ in range(samples):
        b, bj = rng.standard_normal((2, 8))
        worst_gap = min(worst_gap, float(b @ gram.gram @ b) - quadratic_lower(b, bj, gram.gram))
        worst_tight = max(
            worst_tight,
            abs(quadratic_lower(bj, bj, gram.gram) - float(bj @ gram.gram @ bj)),
        )
        alpha = float(rng.uniform(1, 3))
        b2, b2j = rng.standard_normal((2, 8))
        f = ordering_upper_fk(b, b2, bj, b2j, gram.gram, alpha, gram.norm_sq)
        m = alpha * float(b2 @ gram.gram @ b2) - float(b @ gram.gram @ b)
        worst_gap = min(worst_gap, f - m)
        f0 = ordering_upper_fk(bj, b2j, bj, b2j, gram.gram, alpha, gram.norm_sq)
        m0 = alpha * float(b2j @ gram.gram @ b2j) - float(bj @ gram.gram @ bj)
        worst_tight = max(worst_tight, abs(f0 - m0))

    geom = _geometry(rng, 5)
    Q = _hermitian(rng, 5)
    O = _hermitian(rng, 5)
    tau = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    for _ in range(samples):
        u = rng.uniform(-0.02, 0.02, 2)
        uj = rng.uniform(-0.02, 0.02, 2)
        worst_gap = min(
            worst_gap,
            receive_taylor_upper(u, uj, Q, geom, WAVELENGTH)
            - receive_quadform_eval(u, Q, geom, WAVELENGTH),
        )
        worst_tight = max(
            worst_tight,
            abs(
                receive_taylor_upper(uj, uj, Q, geom, WAVELENGTH)
                - receive_quadform_eval(uj, Q, geom, WAVELENGTH)
            ),
        )
        ut = rng.uniform(-0.1, 0.1, 2)
        utj = rng.uniform(-0.1, 0.1, 2)
        worst_gap = min(
            worst_gap,
            transmit_taylor_upper(ut, utj, O, tau, 0.0, geom, WAVELENGTH)
            - transmit_quadform_eval(ut, O, tau, 0.0, geom, WAVELENGTH),
        )
        worst_tight = max(
            worst_tight,
            abs(
                transmit_taylor_upper(utj, utj, O, tau, 0.0, geom, WAVELENGTH)
                - transmit_quadform_eval(utj, O, tau, 0.0, geom, WAVELENGTH)
            ),
        )
        um, umj, ul = rng.standard_normal((3, 2))
        worst_gap = min(
            worst_gap,
            float(np.linalg.norm(um - ul)) - min_distance_linearized(um, umj, ul),
        )
        worst_tight = max(
            worst_tight,
            abs(min_distance_linearized(umj, umj, ul) - float(np.linalg.norm(umj - ul))),
        )

    passed = worst_gap >= -BOUND_TOL and worst_tight <= BOUND_TOL
    return CheckResult(
        "bound-dominance",
        passed,
        f"min dominance margin {worst_gap:.2e}, worst expansion mismatch {worst_tight:.2e} "
        f"over {samples} samples per surrogate",
    )


def _fd_hessian(func, u, step):
    H = np.zeros((2, 2))
    e = np.eye(2)
    for a in range(2):
        for b in range(2):
            H[a, b] = (
                func(u + step * e[a] + step * e[b])
                - func(u + step * e[a] - step * e[b])
                - func(u - step * e[a] + step * e[b])
                + func(u - step * e[a] - step * e[b])
            ) / (4 * step**2)
    return H


def check_hessian_domination(points: int = 50, instances: int = 4, seed: int = 1) -> CheckResult:
    """Curvature scalars dominate finite-difference Hessians."""
    rng = np.random.default_rng(seed)
    step = 1e-6 * WAVELENGTH
    worst = -np.inf
    for _ in range(instances):
        L = int(rng.integers(3, 7))
        geom = _geometry(rng, L)
        Q = _hermitian(rng, L)
        delta = receive_curvature_bound(Q, geom, WAVELENGTH)
        for _ in range(points):
            u = rng.uniform(-0.02, 0.02, 2)
            H = _fd_hessian(lambda uu: receive_quadform_eval(uu, Q, geom, WAVELENGTH), u, step)
            top = float(np.linalg.eigvalsh(0.5 * (H + H.T)).max())
            worst = max(worst, (top - delta) / max(1.0, delta))
        O = _hermitian(rng, L)
        tau = rng.standard_normal(L) + 1j * rng.standard_normal(L)
        xi = transmit_curvature_bound(O, tau, geom, WAVELENGTH)
        for _ in range(points):
            u = rng.uniform(-0.1, 0.1, 2)
            H = _fd_hessian(
                lambda uu: transmit_quadform_eval(uu, O, tau, 0.0, geom, WAVELENGTH), u, step
            )
            top = float(np.linalg.eigvalsh(0.5 * (H + H.T)).max())
            worst = max(worst, (top - xi) / max(1.0, xi))
    return CheckResult(
        "hessian-domination",
        worst <= HESSIAN_TOL,
        f"max relative eigenvalue excess {worst:.2e} at {points} points x {instances} instances",
    )


def check_identity_reconstruction(instances: int = 100, seed: int = 2) -> CheckResult:
    """Realized constants reproduce direct channel computations."""
    rng = np.random.default_rng(seed)
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(1e-30, abs(b))

    for _ in range(instances):
        M, N, L = 3, 3, 4
        geom = _geometry(rng, L)
        pos = rng.uniform(-0.05, 0.05, (M, 2))
        up = rng.uniform(-0.02, 0.02, 2)
        V = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
        sigma2 = float(rng.uniform(0.1, 2.0))
        alpha = float(rng.uniform(1.0, 2.0))
        h = channel_vector(geom, pos, up, WAVELENGTH)
        p = np.abs(h @ V) ** 2

        gram = channel_gram(h)
        beta = stack_design(V[:, 0])
        worst = max(worst, rel(float(beta @ gram.gram @ beta), p[0]))

        C = signal_quadform(geom, pos, WAVELENGTH, V[:, 0])
        worst = max(worst, rel(receive_quadform_eval(up, -C, geom, WAVELENGTH), -p[0]))
        D = interference_quadform(geom, pos, WAVELENGTH, V, 0)
        worst = max(
            worst,
            rel(receive_quadform_eval(up, D, geom, WAVELENGTH) + sigma2, p[1] + p[2] + sigma2),
        )
        E = ordering_gap_quadform(geom, pos, WAVELENGTH, V, 0, alpha)
        worst = max(
            worst, rel(receive_quadform_eval(up, E, geom, WAVELENGTH), alpha * p[1] - p[0])
        )

        m = int(rng.integers(M))
        view = antenna_viewpoint(geom, pos, up, WAVELENGTH, V, m)
        consts = bs_constraint_constants(view, 0, alpha)
        worst = max(
            worst,
            rel(transmit_quadform_eval(pos[m], *consts.neg_signal, geom, WAVELENGTH), -p[0]),
        )
        worst = max(
            worst,
            rel(
                transmit_quadform_eval(pos[m], *consts.interference, geom, WAVELENGTH),
                p[1] + p[2],
            ),
        )
        worst = max(
            worst,
            rel(
                transmit_quadform_eval(pos[m], *consts.ordering_gap, geom, WAVELENGTH),
                alpha * p[1] - p[0],
            ),
        )
    return CheckResult(
        "identity-reconstruction",
        worst <= IDENTITY_RTOL,
        f"max relative error {worst:.2e} over {instances} instances",
    )


def check_solver_contract(seed: int = 3) -> CheckResult:
    """Spot-checks of the convex solver on problems with known answers."""
    prog = ConvexProgram()
    x = prog.add_variable("x", 1, lower=1.0, upper=4.0)
    prog.maximize_log(x)
    sol = solve(prog, np.array([2.0]))
    err = abs(sol["x"][0] - 4.0)

    prog2 = ConvexProgram()
    r = prog2.add_variable("r", 1, lower=1.0)
    prog2.add_linear(r, [1.0], 4.0)   # (r - 1) * sigma2 <= 3 with sigma2 = 1
    prog2.maximize_log(r)
    sol2 = solve(prog2, np.array([2.0]))
    err = max(err, abs(sol2["r"][0] - 4.0))

    ok = (
        sol.status == "optimal"
        and sol2.status == "optimal"
        and err <= 1e-6
        and sol.kkt_residual <= 1e-6
        and sol2.kkt_residual <= 1e-6
    )
    return CheckResult("solver-contract", ok, f"max solution error {err:.2e}")


ALL_CHECKS = (
    check_bound_dominance,
    check_hessian_domination,
    check_identity_reconstruction,
    check_solver_contract,
)


def run_all(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, fn in enumerate(ALL_CHECKS):
        results.append(fn(seed=seed + i))
    return results
