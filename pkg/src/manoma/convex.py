"""Small convex-programming layer: named variables, linear/convex-quadratic/
second-order-cone constraints, and a maximize-sum-of-logs (or linear)
objective, solved by a deterministic log-barrier interior-point method.

The solver contract: given a strictly feasible start, it returns a point
satisfying every constraint with positive slack whose objective is within the
requested duality gap of the optimum.  Construction certifies every quadratic
constraint matrix as PSD; an indefinite matrix is a caller bug and is
rejected immediately.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSD_TOL = 1e-10


class ProgramError(ValueError):
    """Malformed program: duplicate names, bad shapes, or non-PSD quadratics."""


@dataclass
class Solution:
    x: np.ndarray
    values: dict
    objective: float              # value of the maximized objective
    status: str                   # "optimal" | "infeasible" | "max_iter"
    kkt_residual: float
    newton_steps: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


def _certify_psd(Q: np.ndarray) -> None:
    sym = 0.5 * (Q + Q.T)
    if np.abs(Q - sym).max() > PSD_TOL * max(1.0, np.abs(Q).max()):
        raise ProgramError("quadratic matrix must be symmetric")
    off = sym.copy()
    np.fill_diagonal(off, 0.0)
    jitter = PSD_TOL * max(1.0, float(np.abs(sym).max()))
    if not off.any():
        if np.diag(sym).min() < -jitter:
            raise ProgramError("quadratic matrix is not PSD")
        return
    try:
        np.linalg.cholesky(sym + jitter * np.eye(sym.shape[0]))
    except np.linalg.LinAlgError:
        raise ProgramError("quadratic matrix is not PSD") from None


class ConvexProgram:
    """Builder for one convex program over a flat real variable vector."""

    def __init__(self):
        self._vars: dict[str, np.ndarray] = {}
        self.size = 0
        self._lb: list[float] = []
        self._ub: list[float] = []
        self.linear: list[tuple] = []      # (idx, a, ub)
        self.quadratic: list[tuple] = []   # (idx, Q, q, c)
        self.soc: list[tuple] = []         # (idx, A, b, cvec, d)
        self._log_idx = np.zeros(0, dtype=int)
        self._log_w = np.zeros(0)
        self._lin_obj = None               # (idx, coeffs)

    # -- variables ---------------------------------------------------------

    def add_variable(self, name: str, size: int = 1, lower=None, upper=None) -> np.ndarray:
        if name in self._vars:
            raise ProgramError(f"duplicate variable name '{name}'")
        idx = np.arange(self.size, self.size + size)
        self._vars[name] = idx
        self.size += size
        lo = -np.inf if lower is None else lower
        hi = np.inf if upper is None else upper
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (size,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (size,))
        self._lb.extend(lo.tolist())
        self._ub.extend(hi.tolist())
        return idx

    def index(self, name: str) -> np.ndarray:
        return self._vars[name]

    # -- constraints -------------------------------------------------------

    def add_linear(self, idx, a, ub: float) -> None:
        """a @ x[idx] <= ub."""
        idx = np.asarray(idx, dtype=int)
        a = np.asarray(a, dtype=float)
        if a.shape != idx.shape:
            raise ProgramError("linear coefficient/index shape mismatch")
        self.linear.append((idx, a, float(ub)))

    def add_quadratic(self, idx, Q, q, c: float) -> None:
        """x[idx]^T Q x[idx] + q @ x[idx] + c <= 0 with Q PSD."""
        idx = np.asarray(idx, dtype=int)
        Q = np.asarray(Q, dtype=float)
        q = np.asarray(q, dtype=float)
        if Q.shape != (idx.size, idx.size) or q.shape != idx.shape:
            raise ProgramError("quadratic term shape mismatch")
        _certify_psd(Q)
        self.quadratic.append((idx, Q, q, float(c)))

    def add_soc(self, idx, A, b, cvec, d: float) -> None:
        """||A x[idx] + b|| <= cvec @ x[idx] + d."""
        idx = np.asarray(idx, dtype=int)
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        cvec = np.asarray(cvec, dtype=float)
        if A.shape[1] != idx.size or b.shape != (A.shape[0],) or cvec.shape != idx.shape:
            raise ProgramError("second-order-cone term shape mismatch")
        self.soc.append((idx, A, b, cvec, float(d)))

    # -- objective ----------------------------------------------------------

    def maximize_log(self, idx, weights=None) -> None:
        """Maximize sum of weights * log(x[idx]) (plus any linear part)."""
        idx = np.asarray(idx, dtype=int)
        w = np.ones(idx.size) if weights is None else np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ProgramError("log objective weights must be positive")
        self._log_idx = idx
        self._log_w = w

    def maximize_linear(self, idx, coeffs) -> None:
        idx = np.asarray(idx, dtype=int)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != idx.shape:
            raise ProgramError("linear objective shape mismatch")
        self._lin_obj = (idx, coeffs)

    # -- reporting -----------------------------------------------------------

    @property
    def lb(self) -> np.ndarray:
        return np.asarray(self._lb)

    @property
    def ub(self) -> np.ndarray:
        return np.asarray(self._ub)

    def barrier_parameter(self) -> float:
        """Total barrier parameter: 1 per scalar inequality, 2 per cone."""
        m = int(np.isfinite(self.lb).sum() + np.isfinite(self.ub).sum())
        m += len(self.linear) + len(self.quadratic)
        m += 2 * len(self.soc)
        return float(m)

    def objective_value(self, x: np.ndarray) -> float:
        val = 0.0
        if self._log_idx.size:
            val += float(self._log_w @ np.log(x[self._log_idx]))
        if self._lin_obj is not None:
            idx, coeffs = self._lin_obj
            val += float(coeffs @ x[idx])
        return val

    def constraint_violation(self, x: np.ndarray) -> float:
        """Largest positive violation over all constraints (0 if feasible)."""
        worst = 0.0
        lb, ub = self.lb, self.ub
        fin = np.isfinite(lb)
        if fin.any():
            worst = max(worst, float((lb[fin] - x[fin]).max(initial=0.0)))
        fin = np.isfinite(ub)
        if fin.any():
            worst = max(worst, float((x[fin] - ub[fin]).max(initial=0.0)))
        for idx, a, bub in self.linear:
            worst = max(worst, float(a @ x[idx] - bub))
        for idx, Q, q, c in self.quadratic:
            xs = x[idx]
            worst = max(worst, float(xs @ Q @ xs + q @ xs + c))
        for idx, A, b, cvec, d in self.soc:
            xs = x[idx]
            worst = max(worst, float(np.linalg.norm(A @ xs + b) - (cvec @ xs + d)))
        return worst

    def dump(self) -> str:
        """Deterministic one-constraint-per-line textual form (debugging aid)."""
        lines = []
        for name in self._vars:
            idx = self._vars[name]
            lines.append(
                f"var {name}[{idx.size}] in "
                f"[{np.array2string(self.lb[idx])}, {np.array2string(self.ub[idx])}]"
            )
        for i, (idx, a, bub) in enumerate(self.linear):
            lines.append(f"lin[{i}]: a@x{idx.tolist()} <= {bub!r}, a={a.tolist()!r}")
        for i, (idx, Q, q, c) in enumerate(self.quadratic):
            lines.append(
                f"quad[{i}]: x'Qx+q'x+c <= 0 over x{idx.tolist()}, "
                f"c={c!r}, trQ={np.trace(Q)!r}"
            )
        for i, (idx, A, b, cvec, d) in enumerate(self.soc):
            lines.append(
                f"soc[{i}]: ||Ax+b|| <= c'x+d over x{idx.tolist()}, "
                f"d={d!r}, rows={A.shape[0]}"
            )
        if self._log_idx.size:
            lines.append(f"maximize sum w*log(x{self._log_idx.tolist()}), w={self._log_w.tolist()!r}")
        if self._lin_obj is not None:
            idx, coeffs = self._lin_obj
            lines.append(f"maximize {coeffs.tolist()!r} @ x{idx.tolist()}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# log-barrier path following


class _QuadGroup:
    """Same-arity quadratic constraints stacked for vectorized evaluation."""

    def __init__(self, items, n):
        self.idx = np.stack([it[0] for it in items])          # (G, s)
        self.Q = np.stack([it[1] for it in items])            # (G, s, s)
        self.twoQ = 2.0 * self.Q
        self.q = np.stack([it[2] for it in items])            # (G, s)
        self.c = np.array([it[3] for it in items])            # (G,)
        self.flat = (self.idx[:, :, None] * n + self.idx[:, None, :]).ravel()

    def slacks(self, x):
        xs = x[self.idx]
        quad = np.einsum("gi,gij,gj->g", xs, self.Q, xs)
        return -(quad + np.einsum("gi,gi->g", self.q, xs) + self.c)


class _LinGroup:
    """Same-arity linear constraints stacked for vectorized evaluation."""

    def __init__(self, items, n):
        self.idx = np.stack([it[0] for it in items])          # (G, s)
        self.a = np.stack([it[1] for it in items])            # (G, s)
        self.b = np.array([it[2] for it in items])            # (G,)
        self.flat = (self.idx[:, :, None] * n + self.idx[:, None, :]).ravel()
        self.aa = self.a[:, :, None] * self.a[:, None, :]     # (G, s, s)

    def slacks(self, x):
        return self.b - np.einsum("gi,gi->g", self.a, x[self.idx])


class _Prepared:
    """Constraint data grouped by arity for vectorized barrier evaluation."""

    def __init__(self, prog: ConvexProgram):
        self.n = prog.size
        lb, ub = prog.lb, prog.ub
        self.lb_idx = np.where(np.isfinite(lb))[0]
        self.lb_val = lb[self.lb_idx]
        self.ub_idx = np.where(np.isfinite(ub))[0]
        self.ub_val = ub[self.ub_idx]

        by_size = {}
        for item in prog.linear:
            by_size.setdefault(item[0].size, []).append(item)
        self.lin_groups = [_LinGroup(items, self.n) for items in by_size.values()]
        by_size = {}
        for item in prog.quadratic:
            by_size.setdefault(item[0].size, []).append(item)
        self.quad_groups = [_QuadGroup(items, self.n) for items in by_size.values()]
        self.soc = [
            (idx, A, b, cvec, d, np.ix_(idx, idx), 2.0 * (A.T @ A - np.outer(cvec, cvec)))
            for idx, A, b, cvec, d in prog.soc
        ]
        self.log_idx = prog._log_idx
        self.log_w = prog._log_w
        self.lin_obj = prog._lin_obj

    # barrier value (inf outside the domain), in units of f0 + Phi/t
    def value(self, x: np.ndarray, t: float) -> float:
        val = 0.0
        if self.log_idx.size:
            xs = x[self.log_idx]
            if np.any(xs <= 0.0):
                return np.inf
            val -= float(self.log_w @ np.log(xs))
        if self.lin_obj is not None:
            idx, coeffs = self.lin_obj
            val -= float(coeffs @ x[idx])
        bar = 0.0
        s = x[self.lb_idx] - self.lb_val
        if np.any(s <= 0.0):
            return np.inf
        bar -= float(np.log(s).sum()) if s.size else 0.0
        s = self.ub_val - x[self.ub_idx]
        if np.any(s <= 0.0):
            return np.inf
        bar -= float(np.log(s).sum()) if s.size else 0.0
        for group in self.lin_groups:
            s = group.slacks(x)
            if np.any(s <= 0.0):
                return np.inf
            bar -= float(np.log(s).sum())
        for group in self.quad_groups:
            s = group.slacks(x)
            if np.any(s <= 0.0):
                return np.inf
            bar -= float(np.log(s).sum())
        for idx, A, b, cvec, d, _, _ in self.soc:
            xs = x[idx]
            u = float(cvec @ xs) + d
            if u <= 0.0:
                return np.inf
            v = A @ xs + b
            slack = u * u - float(v @ v)
            if slack <= 0.0:
                return np.inf
            bar -= np.log(slack)
        return val + bar / t

    def value_grad_hess(self, x: np.ndarray, t: float):
        n = self.n
        g = np.zeros(n)
        H = np.zeros((n, n))
        diag = np.zeros(n)
        val = 0.0
        if self.log_idx.size:
            xs = x[self.log_idx]
            val -= float(self.log_w @ np.log(xs))
            g[self.log_idx] -= self.log_w / xs
            diag[self.log_idx] += self.log_w / xs**2
        if self.lin_obj is not None:
            idx, coeffs = self.lin_obj
            val -= float(coeffs @ x[idx])
            g[idx] -= coeffs
        inv_t = 1.0 / t
        bar = 0.0
        s = x[self.lb_idx] - self.lb_val
        if s.size:
            bar -= float(np.log(s).sum())
            g[self.lb_idx] -= inv_t / s
            diag[self.lb_idx] += inv_t / s**2
        s = self.ub_val - x[self.ub_idx]
        if s.size:
            bar -= float(np.log(s).sum())
            g[self.ub_idx] += inv_t / s
            diag[self.ub_idx] += inv_t / s**2
        for group in self.lin_groups:
            s = group.slacks(x)
            bar -= float(np.log(s).sum())
            np.add.at(g, group.idx.ravel(), (group.a * (inv_t / s)[:, None]).ravel())
            blocks = group.aa * (inv_t / s**2)[:, None, None]
            H.ravel()[:] += np.bincount(group.flat, weights=blocks.ravel(), minlength=n * n)
        for group in self.quad_groups:
            xs = x[group.idx]
            s = group.slacks(x)
            bar -= float(np.log(s).sum())
            gq = np.einsum("gij,gj->gi", group.twoQ, xs) + group.q
            np.add.at(g, group.idx.ravel(), (gq * (inv_t / s)[:, None]).ravel())
            blocks = gq[:, :, None] * gq[:, None, :] * (inv_t / s**2)[:, None, None]
            blocks += group.twoQ * (inv_t / s)[:, None, None]
            H.ravel()[:] += np.bincount(group.flat, weights=blocks.ravel(), minlength=n * n)
        for idx, A, b, cvec, d, ix, curv in self.soc:
            xs = x[idx]
            u = float(cvec @ xs) + d
            v = A @ xs + b
            slack = u * u - float(v @ v)
            bar -= np.log(slack)
            gs = 2.0 * u * cvec - 2.0 * (A.T @ v)
            g[idx] -= inv_t * gs / slack
            H[ix] += inv_t * (np.outer(gs, gs) / slack**2 + curv / slack)
        H[np.arange(n), np.arange(n)] += diag
        return val + bar * inv_t, g, H


def solve(
    program: ConvexProgram,
    start: np.ndarray,
    gap_tol: float = 1e-8,
    mu: float = 25.0,
    center_tol: float = 1e-14,
    max_stage_newton: int = 60,
    t0: float = 1.0,
) -> Solution:
    """Path-following solve from a strictly feasible start.

    The returned objective is within ``gap_tol`` of the optimum (barrier
    duality gap); a start violating any constraint yields status
    ``infeasible`` without iterating, which in this codebase always signals a
    bug in surrogate construction upstream.  The reported KKT residual is the
    final self-concordant Newton decrement plus the duality gap, both
    scale-free measures.
    """
    x = np.array(start, dtype=float)
    if x.shape != (program.size,):
        raise ProgramError(f"start has shape {x.shape}, expected ({program.size},)")
    prep = _Prepared(program)
    if not np.isfinite(prep.value(x, 1.0)):
        return Solution(x, _values(program, x), -np.inf, "infeasible", np.inf)

    m_eff = max(program.barrier_parameter(), 1.0)
    t_final = m_eff / gap_tol
    t = min(max(t0, 1.0), t_final)
    status = "optimal"
    total_newton = 0
    lam2 = 0.0
    while True:
        last_stage = t >= t_final
        # moderate centering along the path, tight only at the end where the
        # decrement doubles as the reported stationarity residual
        ctol = center_tol if last_stage else 1e-9
        converged = False
        for _ in range(max_stage_newton):
            val, g, H = prep.value_grad_hess(x, t)
            step = _newton_direction(H, g)
            lam2 = float(-g @ step)
            if lam2 <= ctol:
                converged = True
                break
            alpha = 1.0
            gd = float(g @ step)
            for _ in range(80):
                cand = x + alpha * step
                cval = prep.value(cand, t)
                if np.isfinite(cval) and cval <= val + 1e-4 * alpha * gd:
                    break
                alpha *= 0.5
            else:
                converged = True  # improvements below float resolution
                break
            x = x + alpha * step
            total_newton += 1
        if not converged:
            status = "max_iter"
        if last_stage:
            break
        t = min(t * mu, t_final)

    # decrement of f0 + Phi/t is the stationarity residual of the KKT system
    # with multipliers 1/(t * slack); add the barrier duality gap
    kkt = float(np.sqrt(max(lam2, 0.0))) + m_eff / t
    if status == "optimal" and kkt > 1e-6:
        status = "max_iter"
    return Solution(x, _values(program, x), program.objective_value(x), status, kkt, total_newton)


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    jitter = 0.0
    scale = max(1.0, float(np.abs(H).max()))
    for _ in range(12):
        try:
            c = np.linalg.cholesky(H + jitter * np.eye(H.shape[0]))
            y = np.linalg.solve(c, -g)
            return np.linalg.solve(c.T, y)
        except np.linalg.LinAlgError:
            jitter = max(2.0 * jitter, 1e-14 * scale)
    raise np.linalg.LinAlgError("barrier Hessian factorization failed")


def _values(program: ConvexProgram, x: np.ndarray) -> dict:
    return {name: x[idx].copy() for name, idx in program._vars.items()}
