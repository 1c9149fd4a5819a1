import numpy as np
import pytest

from manoma.metrics import (
    TransmitDesign,
    mrt_margins,
    mrt_satisfied,
    rate_product_form,
    rate_report,
    sinr,
    throughput,
    user_rate,
)


def random_instance(rng, M, N, scale=1.0):
    H = scale * (rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M)))
    V = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    return H, V


def oracle_rates(H, V, sigma2):
    """Independent nested-loop evaluation of the per-user rate chain."""
    N = H.shape[0]
    p = np.abs(H @ V) ** 2
    rates = []
    for k in range(N):
        worst = np.inf
        for dec in range(k, N):
            g = p[dec, k] / (p[dec, k + 1 :].sum() + sigma2)
            worst = min(worst, g)
        rates.append(np.log2(1 + worst))
    return np.array(rates)


def oracle_chain_holds(H, V, alpha, k):
    """Literal evaluation of the chained ordering inequality for user k."""
    p = np.abs(H[k] @ V) ** 2
    terms = [alpha**n * p[n] for n in range(k + 1)]
    return all(terms[n] >= terms[n + 1] for n in range(k))


class TestSinr:
    def test_direct_arithmetic(self):
        H = np.array([[1.0 + 0j]])
        V = np.array([[2.0 + 0j, 1.0 + 0j]])
        # stream 0 at user 0 with one later stream: 4 / (1 + 1)
        assert sinr(0, 0, np.array([[1.0 + 0j]]), V, 1.0) == pytest.approx(2.0)

    def test_single_user_formula(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        v = 3.0 * np.conj(h)[:, None] / np.linalg.norm(h)
        H = h[None, :]
        expect = 9.0 * np.linalg.norm(h) ** 2 / 0.5
        assert sinr(0, 0, H, v, 0.5) == pytest.approx(expect, rel=1e-12)

    def test_zero_design_gives_zero(self):
        H = np.ones((2, 3), dtype=complex)
        V = np.zeros((3, 2), dtype=complex)
        assert sinr(1, 0, H, V, 1e-3) == 0.0
        assert sinr(1, 1, H, V, 1e-3) == 0.0

    def test_index_validation(self):
        H = np.ones((2, 2), dtype=complex)
        V = np.ones((2, 2), dtype=complex)
        with pytest.raises(IndexError):
            sinr(0, 1, H, V, 1.0)

    def test_last_stream_noise_only_denominator(self):
        rng = np.random.default_rng(1)
        H, V = random_instance(rng, 3, 2)
        p = np.abs(H[1] @ V) ** 2
        assert sinr(1, 1, H, V, 0.2) == pytest.approx(p[1] / 0.2, rel=1e-12)


class TestUserRate:
    def test_min_of_equal_sinrs(self):
        # one user: min over a single decoder
        H = np.array([[1.0 + 0j]])
        V = np.array([[3.0 + 0j]])
        assert user_rate(0, H, V, 1.0) == pytest.approx(np.log2(10.0))

    def test_crafted_min_across_decoders(self):
        # choose channels so stream 0 sees SINR 3 at its owner and 1 downstream
        sigma2 = 1.0
        H = np.array([[1.0 + 0j], [np.sqrt(0.2) + 0j]])
        V = np.array([[np.sqrt(6.0) + 0j, 1.0 + 0j]])
        assert sinr(0, 0, H, V, sigma2) == pytest.approx(3.0, rel=1e-12)
        assert sinr(1, 0, H, V, sigma2) == pytest.approx(1.0, rel=1e-12)
        assert user_rate(0, H, V, sigma2) == pytest.approx(1.0, rel=1e-12)

    def test_matches_exhaustive_three_user_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            H, V = random_instance(rng, 4, 3)
            sigma2 = float(rng.uniform(0.1, 2.0))
            got = np.array([user_rate(k, H, V, sigma2) for k in range(3)])
            np.testing.assert_allclose(got, oracle_rates(H, V, sigma2), rtol=1e-12)


class TestThroughput:
    def test_point_to_point_capacity(self):
        rng = np.random.default_rng(3)
        h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        P, sigma2 = 2.0, 0.3
        v = np.sqrt(P) * np.conj(h)[:, None] / np.linalg.norm(h)
        expect = np.log2(1 + P * np.linalg.norm(h) ** 2 / sigma2)
        assert throughput(h[None, :], v, sigma2) == pytest.approx(expect, rel=1e-12)

    def test_zero_design(self):
        assert throughput(np.ones((2, 2), dtype=complex), np.zeros((2, 2)), 1.0) == 0.0

    def test_product_form_identity(self):
        rng = np.random.default_rng(4)
        H, V = random_instance(rng, 4, 3)
        sigma2 = 0.7
        gm = rate_product_form(H, V, sigma2)
        assert 3 * np.log2(gm) == pytest.approx(throughput(H, V, sigma2), rel=1e-12)


class TestMrtMargins:
    def test_decreasing_powers_alpha_one(self):
        # orthogonal streams with strictly decreasing received powers
        H = np.array([[1.0 + 0j, 0.0], [1.0, 0.0]])
        V = np.array([[2.0 + 0j, 1.0 + 0j], [0.0, 0.0]])
        margins = mrt_margins(H, V, 1.0)
        assert all(m > 0 for _, _, m in margins)
        assert mrt_satisfied(H, V, 1.0)

    def test_zero_next_stream(self):
        H = np.array([[1.0 + 0j], [1.0 + 0j]])
        V = np.array([[1.0 + 0j, 0.0 + 0j]])
        (k, n, m), = mrt_margins(H, V, 1.5)
        assert (k, n) == (1, 0)
        assert m == pytest.approx(1.0)

    def test_margins_match_chain_oracle(self):
        rng = np.random.default_rng(5)
        agree = 0
        for _ in range(200):
            H, V = random_instance(rng, 3, 3)
            alpha = float(rng.uniform(1.0, 2.5))
            margins = mrt_margins(H, V, alpha)
            pairwise_ok = all(m >= 0 for _, _, m in margins)
            chain_ok = all(oracle_chain_holds(H, V, alpha, k) for k in range(3))
            assert pairwise_ok == chain_ok
            agree += chain_ok
        assert 0 < agree < 200  # sampled both outcomes

    def test_alpha_below_one_rejected(self):
        with pytest.raises(ValueError):
            mrt_margins(np.ones((2, 2), dtype=complex), np.ones((2, 2)), 0.5)


class TestInvariances:
    def test_scale_consistency(self):
        rng = np.random.default_rng(6)
        H, V = random_instance(rng, 4, 3)
        sigma2 = 0.9
        c = 3.7
        for k in range(3):
            for l in range(k + 1):
                a = sinr(k, l, H, V, sigma2)
                b = sinr(k, l, H, c * V, c**2 * sigma2)
                assert a == pytest.approx(b, rel=1e-12)

    def test_noise_monotonicity(self):
        rng = np.random.default_rng(7)
        H, V = random_instance(rng, 4, 3)
        for k in range(3):
            lo = user_rate(k, H, V, 0.5)
            hi = user_rate(k, H, V, 1.5)
            assert hi <= lo + 1e-15

    def test_design_properties(self):
        rng = np.random.default_rng(8)
        V = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
        V[:, 1] = 0.0
        d = TransmitDesign(V)
        np.testing.assert_allclose(d.powers, np.sum(np.abs(V) ** 2, axis=0))
        W = d.beamformers
        np.testing.assert_allclose(np.linalg.norm(W[:, [0, 2]], axis=0), 1.0, atol=1e-12)
        assert np.all(W[:, 1] == 0.0)

    def test_rate_report_consistency(self):
        rng = np.random.default_rng(9)
        H, V = random_instance(rng, 4, 3)
        rep = rate_report(H, V, 0.4, 1.0)
        assert rep.throughput_bpshz == pytest.approx(rep.per_user_rates.sum())
        assert np.all(rep.per_user_rates >= 0)
        assert np.isnan(rep.sinr_table[0, 1]) and np.isnan(rep.sinr_table[0, 2])
        assert np.nanmin(rep.sinr_table) >= 0
