import numpy as np
import pytest

from manoma.channel import LayoutState, channel_matrix, sample_geometry, uniform_grid
from manoma.config import SystemConfig
from manoma.metrics import mrt_satisfied
from manoma.schemes import (
    SCHEME_IDS,
    run_noma_fpa,
    run_noma_ma_ue,
    run_scheme,
    run_sdma,
    run_tdma,
    waterfill,
    zf_beamformers,
    _slot_fractions,
)

SMALL = SystemConfig(num_bs_antennas=4, num_users=2, num_paths=4, outer_iters=4)


def fixed_layout_capacity(cfg, geoms, k):
    layout = LayoutState(uniform_grid(cfg.num_bs_antennas, cfg.bs_region_m),
                         np.zeros((cfg.num_users, 2)))
    H = channel_matrix(geoms, layout, cfg.wavelength_m)
    return np.log2(1 + cfg.power_budget_w * np.linalg.norm(H[k]) ** 2 / cfg.noise_power_w)


class TestWaterfill:
    def test_equal_gains_split_evenly(self):
        p = waterfill(np.array([1.0, 1.0]), 1.0, 2.0)
        np.testing.assert_allclose(p, [1.0, 1.0])

    def test_weak_channel_shut_off(self):
        p = waterfill(np.array([10.0, 1e-6]), 1.0, 1.0)
        assert p[1] == 0.0
        assert p[0] == pytest.approx(1.0)

    def test_budget_exhausted(self):
        rng = np.random.default_rng(0)
        g = rng.uniform(0.1, 5.0, 6)
        p = waterfill(g, 0.7, 3.0)
        assert p.sum() == pytest.approx(3.0, rel=1e-12)
        assert np.all(p >= 0)

    def test_zero_gain_ignored(self):
        p = waterfill(np.array([2.0, 0.0]), 1.0, 1.0)
        assert p[1] == 0.0 and p[0] == pytest.approx(1.0)


class TestZeroForcing:
    def test_orthogonal_rows_reduce_to_mrt(self):
        H = np.array([[1.0 + 1j, 0.0, 0.0], [0.0, 2.0 - 1j, 0.0]])
        W = zf_beamformers(H)
        for k in range(2):
            mrt = np.conj(H[k]) / np.linalg.norm(H[k])
            phase = W[:, k] @ np.conj(mrt)
            np.testing.assert_allclose(np.abs(phase), 1.0, atol=1e-10)
            np.testing.assert_allclose(W[:, k], phase * mrt, atol=1e-10)

    def test_nulling_residual(self):
        rng = np.random.default_rng(1)
        H = rng.standard_normal((3, 6)) + 1j * rng.standard_normal((3, 6))
        W = zf_beamformers(H)
        cross = np.abs(H @ W)
        for k in range(3):
            for j in range(3):
                if j != k:
                    assert cross[k, j] <= 1e-8 * np.linalg.norm(H[k])


class TestSdma:
    def test_requires_enough_antennas(self):
        cfg = SMALL.with_updates(num_bs_antennas=1)
        geoms = sample_geometry(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            run_sdma(cfg, geoms, movable=False)

    def test_movable_never_worse_than_fixed(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(2))
        fixed = run_sdma(SMALL, geoms, movable=False)
        moved = run_sdma(SMALL, geoms, movable=True)
        assert moved.throughput_bpshz >= fixed.throughput_bpshz - 1e-12
        assert moved.scheme == "SDMA-MA" and fixed.scheme == "SDMA-FPA"

    def test_throughput_is_sum_of_rates(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(3))
        res = run_sdma(SMALL, geoms, movable=False)
        assert res.throughput_bpshz == pytest.approx(res.per_user_rates.sum())

    def test_moved_layout_respects_spacing(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(4))
        res = run_sdma(SMALL, geoms, movable=True)
        from manoma.channel import min_pairwise_distance

        assert min_pairwise_distance(res.layout.bs_positions) >= SMALL.wavelength_m / 2 - 1e-12
        assert np.all(np.abs(res.layout.user_positions) <= SMALL.user_region_m / 2 + 1e-12)


class TestTdma:
    def test_single_user_full_time_capacity(self):
        cfg = SMALL.with_updates(num_users=1)
        geoms = sample_geometry(cfg, np.random.default_rng(5))
        res = run_tdma(cfg, geoms, movable=False)
        assert res.throughput_bpshz == pytest.approx(
            fixed_layout_capacity(cfg, geoms, 0), rel=1e-12
        )

    def test_fixed_variant_closed_form(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(6))
        res = run_tdma(SMALL, geoms, movable=False)
        expect = np.mean(
            [fixed_layout_capacity(SMALL, geoms, k) for k in range(SMALL.num_users)]
        )
        assert res.throughput_bpshz == pytest.approx(expect, rel=1e-12)

    def test_single_path_movable_matches_fixed(self):
        cfg = SMALL.with_updates(num_paths=1)
        geoms = sample_geometry(cfg, np.random.default_rng(7))
        fixed = run_tdma(cfg, geoms, movable=False)
        moved = run_tdma(cfg, geoms, movable=True)
        assert moved.throughput_bpshz == pytest.approx(fixed.throughput_bpshz, rel=1e-10)

    def test_movable_never_worse(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(8))
        fixed = run_tdma(SMALL, geoms, movable=False)
        moved = run_tdma(SMALL, geoms, movable=True)
        assert moved.throughput_bpshz >= fixed.throughput_bpshz - 1e-12

    def test_slot_fractions_sum_exactly_one(self):
        for n in (1, 2, 3, 4, 7):
            assert _slot_fractions(n).sum() == 1.0


class TestNomaVariants:
    def test_fpa_single_user_closed_form(self):
        cfg = SMALL.with_updates(num_users=1, convergence_tol_outer=1e-5)
        geoms = sample_geometry(cfg, np.random.default_rng(9))
        res = run_noma_fpa(cfg, geoms)
        assert res.throughput_bpshz == pytest.approx(
            fixed_layout_capacity(cfg, geoms, 0), abs=1e-4
        )

    def test_fpa_output_satisfies_constraints(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(10))
        res = run_noma_fpa(SMALL, geoms)
        assert res.design.total_power <= SMALL.power_budget_w + 1e-7
        layout = res.layout
        H = channel_matrix(geoms, layout, SMALL.wavelength_m)
        assert mrt_satisfied(H, res.design.V, SMALL.mrt_coefficient,
                             tol=1e-7 * SMALL.noise_power_w)

    def test_ue_with_zero_region_matches_fpa(self):
        cfg = SMALL.with_updates(user_region_m=0.0)
        geoms = sample_geometry(cfg, np.random.default_rng(11))
        fpa = run_noma_fpa(cfg, geoms)
        ue = run_noma_ma_ue(cfg, geoms)
        assert ue.throughput_bpshz == pytest.approx(fpa.throughput_bpshz, rel=1e-6)
        np.testing.assert_array_equal(ue.layout.user_positions, 0.0)

    def test_ue_keeps_bs_frozen(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(12))
        ue = run_noma_ma_ue(SMALL, geoms)
        np.testing.assert_allclose(
            ue.layout.bs_positions,
            uniform_grid(SMALL.num_bs_antennas, SMALL.bs_region_m, inset=1e-9),
        )

    def test_single_seed_nesting(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(13))
        fpa = run_scheme("NOMA-FPA", SMALL, geoms)
        ue = run_scheme("NOMA-MA-UE", SMALL, geoms)
        ma = run_scheme("NOMA-MA", SMALL, geoms)
        assert fpa.throughput_bpshz <= ue.throughput_bpshz + 1e-6
        assert ue.throughput_bpshz <= ma.throughput_bpshz + 1e-6

    def test_dispatcher_rejects_unknown(self):
        geoms = sample_geometry(SMALL, np.random.default_rng(14))
        with pytest.raises(ValueError):
            run_scheme("OFDMA", SMALL, geoms)

    def test_all_scheme_ids_runnable(self):
        cfg = SMALL.with_updates(outer_iters=2)
        geoms = sample_geometry(cfg, np.random.default_rng(15))
        for scheme in SCHEME_IDS:
            res = run_scheme(scheme, cfg, geoms)
            assert res.scheme == scheme
            assert res.throughput_bpshz == pytest.approx(res.per_user_rates.sum(), rel=1e-9)
            assert res.wall_time_s >= 0.0
