import numpy as np
import pytest

from manoma.convex import ConvexProgram, ProgramError, solve


def grid_refine_oracle(objective, feasible, lo, hi, levels=9, points=13, beam=4):
    """Nested grid search with a small beam: evaluate a lattice, keep the top
    feasible cells, and zoom each of them.  Works directly on the constraint
    predicates, entirely independent of the barrier solver.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    boxes = [(lo, hi)]
    best_x, best_val = None, -np.inf
    for _ in range(levels):
        found = []
        for blo, bhi in boxes:
            axes = [np.linspace(blo[d], bhi[d], points) for d in range(lo.size)]
            mesh = np.meshgrid(*axes, indexing="ij")
            X = np.column_stack([m.ravel() for m in mesh])
            ok = feasible(X)
            if not ok.any():
                continue
            Xok = X[ok]
            vals = objective(Xok)
            top = np.argsort(vals)[-beam:]
            span = (bhi - blo) / (points - 1)
            for i in top:
                found.append((float(vals[i]), Xok[i], span))
        if not found:
            return None, -np.inf
        found.sort(key=lambda item: item[0], reverse=True)
        if found[0][0] > best_val:
            best_val, best_x = found[0][0], found[0][1]
        boxes = [
            (np.maximum(lo, x - span), np.minimum(hi, x + span))
            for _, x, span in found[:beam]
        ]
    return best_x, best_val


class TestBuilder:
    def test_box_variable_and_linear_objective(self):
        prog = ConvexProgram()
        x = prog.add_variable("x", 1, lower=0.0, upper=1.0)
        prog.maximize_linear(x, [1.0])
        sol = solve(prog, np.array([0.5]))
        assert sol.status == "optimal"
        assert sol["x"][0] == pytest.approx(1.0, abs=1e-6)

    def test_duplicate_name_rejected(self):
        prog = ConvexProgram()
        prog.add_variable("x", 1)
        with pytest.raises(ProgramError):
            prog.add_variable("x", 2)

    def test_negative_definite_quadratic_rejected(self):
        prog = ConvexProgram()
        x = prog.add_variable("x", 2)
        with pytest.raises(ProgramError):
            prog.add_quadratic(x, -np.eye(2), np.zeros(2), -1.0)

    def test_unit_disk_soc_accepted(self):
        prog = ConvexProgram()
        x = prog.add_variable("x", 2, lower=-2.0, upper=2.0)
        prog.add_soc(x, np.eye(2), np.zeros(2), np.zeros(2), 1.0)
        prog.maximize_linear(x, [1.0, 0.0])
        sol = solve(prog, np.zeros(2))
        assert sol.status == "optimal"
        assert sol["x"][0] == pytest.approx(1.0, abs=1e-5)
        assert abs(sol["x"][1]) < 1e-4

    def test_dump_is_deterministic(self):
        def build():
            prog = ConvexProgram()
            x = prog.add_variable("x", 2, lower=0.0)
            prog.add_linear(x, [1.0, 1.0], 3.0)
            prog.add_quadratic(x, np.eye(2), np.zeros(2), -4.0)
            prog.maximize_log(x)
            return prog

        assert build().dump() == build().dump()
        assert "lin[0]" in build().dump()


class TestSolveContract:
    def test_log_objective_hits_upper_bound(self):
        prog = ConvexProgram()
        x = prog.add_variable("x", 1, lower=1.0, upper=4.0)
        prog.maximize_log(x)
        sol = solve(prog, np.array([2.0]))
        assert sol.status == "optimal"
        assert sol["x"][0] == pytest.approx(4.0, abs=1e-6)
        assert sol.objective == pytest.approx(np.log(4.0), abs=1e-6)

    def test_single_user_rate_kernel(self):
        # maximize log(r) subject to (r - 1) * sigma2 <= g
        sigma2, g = 1.0, 3.0
        prog = ConvexProgram()
        r = prog.add_variable("r", 1, lower=1.0)
        prog.add_linear(r, [sigma2], g + sigma2)
        prog.maximize_log(r)
        sol = solve(prog, np.array([2.0]))
        assert sol["r"][0] == pytest.approx(4.0, rel=1e-6)

    def test_infeasible_start_flagged(self):
        prog = ConvexProgram()
        x = prog.add_variable("x", 1, lower=0.0, upper=1.0)
        prog.maximize_linear(x, [1.0])
        sol = solve(prog, np.array([2.0]))
        assert sol.status == "infeasible"

    def test_returned_point_is_feasible(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            prog = ConvexProgram()
            x = prog.add_variable("x", 3, lower=-1.0, upper=1.0)
            a = rng.standard_normal(3)
            prog.add_linear(x, a, 0.5)
            X = rng.standard_normal((3, 3))
            prog.add_quadratic(x, X.T @ X, rng.standard_normal(3) * 0.1, -1.0)
            prog.maximize_linear(x, rng.standard_normal(3))
            sol = solve(prog, np.zeros(3))
            assert sol.status == "optimal"
            assert prog.constraint_violation(sol.x) <= 1e-7

    def test_determinism(self):
        def run():
            prog = ConvexProgram()
            x = prog.add_variable("x", 4, lower=0.1)
            prog.add_quadratic(x, np.eye(4), np.zeros(4), -9.0)
            prog.maximize_log(x)
            return solve(prog, np.full(4, 0.5))

        a, b = run(), run()
        np.testing.assert_array_equal(a.x, b.x)
        assert a.objective == b.objective

    def test_warm_start_does_not_regress(self):
        prog_build = lambda: self._random_socp(np.random.default_rng(7))
        prog = prog_build()
        first = solve(prog, np.full(prog.size, 0.05))
        assert first.status == "optimal"
        prog2 = prog_build()
        second = solve(prog2, first.x)
        assert second.status == "optimal"
        assert second.objective >= first.objective - 1e-8

    @staticmethod
    def _random_socp(rng, n=5):
        prog = ConvexProgram()
        x = prog.add_variable("x", n, lower=-1.0, upper=1.0)
        for _ in range(2):
            A = rng.standard_normal((3, n)) * 0.6
            c = rng.standard_normal(n) * 0.1
            # keep the origin strictly feasible: d > ||b||
            b = rng.standard_normal(3) * 0.2
            d = float(np.linalg.norm(b) + rng.uniform(0.5, 1.5))
            prog.add_soc(x, A, b, c, d)
        prog.maximize_linear(x, rng.standard_normal(n))
        return prog

    def test_random_socp_matches_grid_oracle(self):
        rng = np.random.default_rng(12)
        for trial in range(3):
            seed_rng = np.random.default_rng(100 + trial)
            prog = self._random_socp(seed_rng)
            sol = solve(prog, np.zeros(prog.size))
            assert sol.status == "optimal"

            # rebuild identical constraint data for the oracle predicates
            check = self._random_socp(np.random.default_rng(100 + trial))
            cobj = check._lin_obj[1]

            def feasible(X):
                ok = np.all((X >= -1.0) & (X <= 1.0), axis=1)
                for idx, A, b, cvec, d in check.soc:
                    lhs = np.linalg.norm(X @ A.T + b, axis=1)
                    ok &= lhs <= X @ cvec + d
                return ok

            def objective(X):
                return X @ cobj

            _, oracle_val = grid_refine_oracle(objective, feasible, -np.ones(5), np.ones(5))
            # grid points are feasible, so the oracle can only undershoot
            assert sol.objective >= oracle_val - 1e-9
            assert sol.objective <= oracle_val + 1e-4 * max(1.0, abs(oracle_val))

    def test_log_sum_matches_geometric_mean_argmax(self):
        # maximize sum log r subject to r1 + 2 r2 <= 5, r >= 1
        prog = ConvexProgram()
        r = prog.add_variable("r", 2, lower=1.0)
        prog.add_linear(r, [1.0, 2.0], 5.0)
        prog.maximize_log(r)
        sol = solve(prog, np.array([1.5, 1.1]))

        # the geometric-mean maximizer lies on the active budget line; locate
        # it by dense 1-D search, independent of any log transform
        r1 = np.linspace(1.0, 3.0, 4_000_001)
        r2 = (5.0 - r1) / 2.0
        geomean = np.sqrt(r1 * r2)
        best = int(np.argmax(geomean))
        argmax = np.array([r1[best], r2[best]])
        np.testing.assert_allclose(sol["r"], argmax, atol=1e-4)

    def test_kkt_residual_small(self):
        prog = ConvexProgram()
        x = prog.add_variable("x", 2, lower=0.5)
        prog.add_linear(x, [1.0, 1.0], 4.0)
        prog.maximize_log(x)
        sol = solve(prog, np.array([1.0, 1.0]))
        assert sol.kkt_residual <= 1e-6
