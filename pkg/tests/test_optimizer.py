import numpy as np
import pytest

from manoma.channel import channel_matrix, min_pairwise_distance, sample_geometry
from manoma.config import SystemConfig
from manoma.metrics import feasibility_report, throughput
from manoma.optimizer import (
    OptimizerError,
    initialize_feasible,
    optimize,
    solve_p2,
    solve_p3,
    solve_p4m,
)

SMALL = SystemConfig(
    num_bs_antennas=4, num_users=2, num_paths=4, outer_iters=5, rng_seed=0
)


def small_instance(seed=0, **overrides):
    cfg = SMALL.with_updates(**overrides) if overrides else SMALL
    return cfg, sample_geometry(cfg, np.random.default_rng(seed))


def aux_objective(state):
    return float(np.sum(np.log2(state.aux.r)))


class TestInitialization:
    def test_two_by_two_grid(self):
        cfg, geoms = small_instance()
        state = initialize_feasible(cfg, geoms)
        pos = state.layout.bs_positions
        assert pos.shape == (4, 2)
        # full-span lattice: one region side per axis step
        assert min_pairwise_distance(pos) == pytest.approx(cfg.bs_region_m, rel=1e-6)
        assert min_pairwise_distance(pos) >= cfg.wavelength_m / 2

    def test_single_user_trivially_ordered(self):
        cfg, geoms = small_instance(num_users=1)
        state = initialize_feasible(cfg, geoms)
        assert state.design.total_power == pytest.approx(cfg.power_budget_w, rel=1e-6)

    def test_default_config_independent_feasibility(self):
        cfg = SystemConfig()
        geoms = sample_geometry(cfg, np.random.default_rng(0))
        state = initialize_feasible(cfg, geoms)
        rep = feasibility_report(cfg, geoms, state.layout, state.design, state.aux)
        assert rep.ok
        assert rep.power_slack_w > 0
        assert rep.worst_mrt_margin > 0
        assert rep.aux_rate_slack > 0
        assert rep.aux_interference_slack > 0

    def test_users_start_at_region_centers(self):
        cfg, geoms = small_instance()
        state = initialize_feasible(cfg, geoms)
        np.testing.assert_array_equal(state.layout.user_positions, 0.0)


class TestBeamBlock:
    def test_single_user_reaches_mrt_capacity(self):
        cfg, geoms = small_instance(num_users=1)
        state = initialize_feasible(cfg, geoms)
        H = channel_matrix(geoms, state.layout, cfg.wavelength_m)
        expect = 1.0 + cfg.power_budget_w * np.linalg.norm(H[0]) ** 2 / cfg.noise_power_w
        out = solve_p2(cfg, geoms, state)
        assert out.aux.r[0] == pytest.approx(expect, rel=1e-6)

    def test_fixed_point_leaves_objective_unchanged(self):
        cfg, geoms = small_instance(num_users=1)
        state = initialize_feasible(cfg, geoms)
        state = solve_p2(cfg, geoms, state)
        before = aux_objective(state)
        again = solve_p2(cfg, geoms, state)
        assert abs(aux_objective(again) - before) < 1e-8
        assert aux_objective(again) >= before - 1e-12

    def test_blocks_never_decrease_objective(self):
        cfg, geoms = small_instance()
        state = initialize_feasible(cfg, geoms)
        obj = aux_objective(state)
        for _ in range(3):
            state = solve_p2(cfg, geoms, state)
            new = aux_objective(state)
            assert new >= obj - 1e-12
            obj = new

    def test_keeps_full_feasibility(self):
        cfg, geoms = small_instance(seed=3)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        rep = feasibility_report(cfg, geoms, state.layout, state.design, state.aux)
        assert rep.ok


class TestUserBlock:
    def test_single_path_objective_unchanged(self):
        cfg, geoms = small_instance(num_paths=1)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        before = aux_objective(state)
        out = solve_p3(cfg, geoms, state)
        # position has no effect with one path, so only solver-gap noise in
        # the auxiliary re-solve can move the objective
        assert aux_objective(out) == pytest.approx(before, abs=1e-6)
        np.testing.assert_array_equal(out.layout.user_positions, state.layout.user_positions)

    def test_zero_region_pins_positions(self):
        cfg, geoms = small_instance(user_region_m=0.0)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        out = solve_p3(cfg, geoms, state)
        np.testing.assert_array_equal(out.layout.user_positions, 0.0)

    def test_positions_stay_inside_region_and_objective_grows(self):
        cfg, geoms = small_instance(seed=5)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        before = aux_objective(state)
        out = solve_p3(cfg, geoms, state)
        assert aux_objective(out) >= before - 1e-12
        assert np.all(np.abs(out.layout.user_positions) <= cfg.user_region_m / 2 + 1e-9)
        rep = feasibility_report(cfg, geoms, out.layout, out.design, out.aux)
        assert rep.ok


class TestBsBlock:
    def test_single_antenna_moves_without_distance_constraints(self):
        cfg, geoms = small_instance(num_bs_antennas=1, seed=7)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        out = solve_p4m(cfg, geoms, state, 0)
        assert aux_objective(out) >= aux_objective(state) - 1e-12
        assert np.all(np.abs(out.layout.bs_positions) <= cfg.bs_region_m / 2 + 1e-9)

    def test_weightless_antenna_stays_put(self):
        cfg, geoms = small_instance(seed=9)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        # zero one antenna's beam weights and rebuild consistent auxiliaries
        V = state.design.V.copy()
        V[2, :] = 0.0
        H = channel_matrix(geoms, state.layout, cfg.wavelength_m)
        p = np.abs(H @ V) ** 2
        sigma2 = cfg.noise_power_w
        N = cfg.num_users
        r = np.zeros(N)
        nu = np.full((N, N), np.nan)
        for n in range(N):
            r[n] = 1.0 + 0.9 * min(
                p[k, n] / (p[k, n + 1 :].sum() + sigma2) for k in range(n, N)
            )
            for k in range(n, N):
                nu[k, n] = 1.1 * (p[k, n + 1 :].sum() + sigma2)
        state.design = type(state.design)(V)
        state.aux = type(state.aux)(r, nu)
        out = solve_p4m(cfg, geoms, state, 2)
        np.testing.assert_array_equal(
            out.layout.bs_positions[2], state.layout.bs_positions[2]
        )

    def test_spacing_preserved(self):
        cfg, geoms = small_instance(seed=11)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        for m in range(cfg.num_bs_antennas):
            state = solve_p4m(cfg, geoms, state, m)
        spacing = min_pairwise_distance(state.layout.bs_positions)
        assert spacing >= cfg.wavelength_m / 2 - 1e-7
        rep = feasibility_report(cfg, geoms, state.layout, state.design, state.aux)
        assert rep.ok


class TestOptimize:
    def test_trace_monotone_and_converges(self):
        cfg, geoms = small_instance(seed=13)
        res = optimize(cfg, geoms)
        diffs = np.diff(res.objective_trace)
        assert np.all(diffs >= -1e-8)
        assert res.outer_iter <= cfg.outer_iters
        assert res.records and res.subproblem_solves["beam"] > 0

    def test_determinism(self):
        cfg, geoms = small_instance(seed=17)
        a = optimize(cfg, geoms)
        b = optimize(cfg, geoms)
        np.testing.assert_array_equal(a.objective_trace, b.objective_trace)
        np.testing.assert_array_equal(a.design.V, b.design.V)
        np.testing.assert_array_equal(a.layout.bs_positions, b.layout.bs_positions)

    def test_aux_objective_lower_bounds_throughput(self):
        cfg, geoms = small_instance(seed=19)
        res = optimize(cfg, geoms)
        H = channel_matrix(geoms, res.layout, cfg.wavelength_m)
        thr = throughput(H, res.design.V, cfg.noise_power_w)
        assert aux_objective(res) <= thr + 1e-6

    def test_single_user_single_path_closed_form(self):
        cfg, geoms = small_instance(
            num_users=1, num_bs_antennas=1, num_paths=1, outer_iters=4
        )
        res = optimize(cfg, geoms)
        gain = np.abs(geoms[0].prm_diag[0]) ** 2
        expect = np.log2(1.0 + cfg.power_budget_w * gain / cfg.noise_power_w)
        assert res.throughput_trace[-1] == pytest.approx(expect, abs=1e-6)

    def test_feasible_after_every_block(self):
        cfg, geoms = small_instance(seed=23, outer_iters=2)
        state = initialize_feasible(cfg, geoms)
        for _ in range(2):
            for step in (
                lambda s: solve_p2(cfg, geoms, s),
                lambda s: solve_p3(cfg, geoms, s),
                lambda s: solve_p4m(cfg, geoms, s, 0),
                lambda s: solve_p4m(cfg, geoms, s, 1),
            ):
                state = step(state)
                rep = feasibility_report(cfg, geoms, state.layout, state.design, state.aux)
                assert rep.ok

    def test_surrogate_programs_tight_at_expansion(self):
        # every surrogate program must reproduce the true constraint values
        # at its own expansion point: feasible start with zero violation
        from manoma.optimizer import _Workspace

        cfg, geoms = small_instance(seed=31)
        state = solve_p2(cfg, geoms, initialize_feasible(cfg, geoms))
        ws = _Workspace.from_state(cfg, geoms, state)
        for build in (
            ws.build_beam_program,
            ws.build_user_program,
            lambda slack=0.0: ws.build_bs_program(0, slack),
        ):
            prog, start = build(0.0)
            assert prog.constraint_violation(start) <= 0.0

        # spot-check one ordering surrogate against the true power gap
        prog, start = ws.build_bs_program(0, 0.0)
        p = ws.received_powers()
        idx, Q, q, c = prog.quadratic[-1]   # last ordering constraint (k=N-1)
        xs = start[idx]
        val = float(xs @ Q @ xs + q @ xs + c)
        k, n = cfg.num_users - 1, cfg.num_users - 2
        true_gap = cfg.mrt_coefficient * p[k, n + 1] - p[k, n]
        assert val == pytest.approx(true_gap, rel=1e-9, abs=1e-12)

    def test_frozen_variants(self):
        cfg, geoms = small_instance(seed=29, outer_iters=3)
        fpa = optimize(cfg, geoms, move_bs=False, move_users=False)
        np.testing.assert_array_equal(fpa.layout.user_positions, 0.0)
        ue = optimize(cfg, geoms, move_bs=False, move_users=True)
        np.testing.assert_array_equal(
            ue.layout.bs_positions, fpa.layout.bs_positions
        )
        assert ue.objective_trace[-1] >= fpa.objective_trace[-1] - 1e-6
        # both remain fully feasible
        for res in (fpa, ue):
            rep = feasibility_report(cfg, geoms, res.layout, res.design, res.aux)
            assert rep.ok
