import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg
from scipy.special import i0e, i1e

from oracles import fd_derivatives, fd_points
from rssprivacy.crlb import (
    TRUSTED,
    UNTRUSTED,
    FisherConfig,
    SingularFisher,
    arrow_matrix,
    crlb_curve,
    crlb_gain_variance,
    curve_by_view,
    d2_loglik_dh2,
    d2_loglik_dhdx,
    d2_loglik_dx2,
    energy_constrained_crlb,
    fisher_matrix,
)
from rssprivacy.power_policy import PowerLevelSet, solve_max_entropy
from rssprivacy.signal_model import ChannelParams, pdf_received_power, sigma2_for_snr

POINTS = fd_points()


class TestClosedForms:
    def test_matches_finite_differences(self):
        for z, h, x, s2 in POINTS:
            dhh, dxx, x_then_h, h_then_x = fd_derivatives(z, h, x, s2)
            assert d2_loglik_dh2(z, h, x, s2) == pytest.approx(dhh, rel=1e-4)
            assert d2_loglik_dx2(z, h, x, s2) == pytest.approx(dxx, rel=1e-4)
            # one closed form serves both orders of differentiation
            assert d2_loglik_dhdx(z, h, x, s2) == pytest.approx(x_then_h, rel=1e-4)
            assert d2_loglik_dhdx(z, h, x, s2) == pytest.approx(h_then_x, rel=1e-4)

    def test_gain_power_symmetry(self):
        z, h, x, s2 = POINTS[0]
        assert d2_loglik_dh2(z, h, x, s2) == pytest.approx(d2_loglik_dx2(z, x, h, s2), rel=1e-14)
        assert d2_loglik_dh2(z, h, x, s2) * h * h == pytest.approx(d2_loglik_dx2(z, h, x, s2) * x * x, rel=1e-13)

    def test_zero_received_power(self):
        for f in (d2_loglik_dh2, d2_loglik_dx2, d2_loglik_dhdx):
            assert np.isfinite(f(0.0, 0.01, 0.5, 1e-3))
        assert d2_loglik_dh2(0.0, 0.01, 0.5, 1e-3) == 0.0

    def test_large_argument(self):
        # sqrt(z h x)/s2 ~ 1e6: asymptotic regime of the Bessel ratio
        v = d2_loglik_dh2(1.0, 1.0, 1.0, 1e-6)
        assert np.isfinite(v) and v < 0

    def test_concave_in_gain(self):
        for z, h, x, s2 in POINTS:
            assert d2_loglik_dh2(z, h, x, s2) <= 0


class TestArrow:
    def test_zero_structure(self):
        m = 8
        cfg = FisherConfig(0.01, tuple(np.linspace(0.1, 1.0, m)), 1e-4, mc_samples=2000)
        f = fisher_matrix(cfg, UNTRUSTED).entries
        off = ~np.eye(m + 1, dtype=bool)
        off[0, :] = off[:, 0] = False
        assert np.count_nonzero(off) == m * (m - 1)
        assert np.all(f[off] == 0.0)
        assert np.all(f == f.T)

    def test_positive_diagonal(self):
        cfg = FisherConfig(0.01, (0.1, 0.5, 1.0), 1e-4, mc_samples=2000)
        fm = fisher_matrix(cfg, UNTRUSTED)
        assert fm.f_hh > 0 and np.all(fm.f_xx > 0)
        t = fisher_matrix(cfg, TRUSTED)
        assert t.dim == 1 and t.f_hh == pytest.approx(fm.f_hh, rel=1e-14)

    def test_schur_equals_dense_inverse(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m = 8
            d = rng.uniform(0.5, 5.0, m)
            b = rng.normal(size=m)
            f_hh = float(np.sum(b * b / d)) + rng.uniform(0.1, 2.0)
            f = arrow_matrix(f_hh, b, d)
            dense = np.linalg.inv(f)[0, 0]
            assert crlb_gain_variance(f) == pytest.approx(dense, rel=1e-10)

    def test_energy_constrained_equals_projected_inverse(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = 8
            d = rng.uniform(0.5, 5.0, m)
            b = rng.normal(size=m)
            f = arrow_matrix(float(np.sum(b * b / d)) + rng.uniform(0.0, 2.0), b, d)
            # tangent space of sum(x) = const, with h free
            g = np.concatenate([[0.0], np.ones(m)])[None, :]
            u = linalg.null_space(g)
            bound = u @ np.linalg.inv(u.T @ f @ u) @ u.T
            assert energy_constrained_crlb(f) == pytest.approx(bound[0, 0], rel=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(
        d=st.lists(st.floats(0.01, 100.0), min_size=1, max_size=12),
        seed=st.integers(0, 2**32 - 1),
        extra=st.floats(0.0, 10.0),
    )
    def test_constrained_never_below_trusted(self, d, seed, extra):
        d = np.asarray(d)
        b = np.random.default_rng(seed).normal(size=d.size)
        f_hh = float(np.sum(b * b / d)) + extra
        if f_hh <= 1e-6:
            return
        f = arrow_matrix(f_hh, b, d)
        try:
            v = energy_constrained_crlb(f)
        except SingularFisher:
            return
        assert v >= (1.0 / f_hh) * (1 - 1e-9)

    def test_singular_rejected(self):
        with pytest.raises(SingularFisher):
            crlb_gain_variance(arrow_matrix(1.0, [1.0], [1.0]))
        with pytest.raises(SingularFisher):
            crlb_gain_variance(arrow_matrix(1.0, [0.1], [0.0]))
        with pytest.raises(SingularFisher):
            crlb_gain_variance(np.array([[0.0]]))


def exact_product_information(a, s2):
    """E[(d/da log f)^2] for one frame, by quadrature in z."""

    def integrand(z):
        t = np.sqrt(z * a) / s2
        r = i1e(t) / i0e(t) if t > 0 else 0.0
        score = -1 / (2 * s2) + (r / t if t > 0 else 0.5) * z / (2 * s2 * s2)
        return score**2 * pdf_received_power(z, 1.0, a, ChannelParams(s2))

    hi = a + 2 * s2 + 40 * np.sqrt(s2 * s2 + s2 * a)
    return integrate.quad(integrand, 0, hi, points=[a], epsabs=0, epsrel=1e-11, limit=400)[0]


class TestSingularity:
    h, s2 = 0.01, sigma2_for_snr(16.0, 0.01, 10 ** (-0.3))
    x = np.array([0.1, 0.251188643, 0.501187234, 1.0, 0.501187234])

    def exact_fisher(self):
        """Expected negative Hessian per frame, by quadrature of the closed forms."""
        f_hx, f_xx, f_hh = [], [], 0.0
        for xi in self.x:
            a = self.h * xi
            hi = a + 2 * self.s2 + 40 * np.sqrt(self.s2**2 + self.s2 * a)

            def expect(fn):
                g = lambda z: -fn(z, self.h, xi, self.s2) * pdf_received_power(z, self.h, xi, ChannelParams(self.s2))
                return integrate.quad(g, 0, hi, points=[a], epsabs=0, epsrel=1e-11, limit=400)[0]

            f_hh += expect(d2_loglik_dh2)
            f_hx.append(expect(d2_loglik_dhdx))
            f_xx.append(expect(d2_loglik_dx2))
        j = np.array([exact_product_information(self.h * xi, self.s2) for xi in self.x])
        return arrow_matrix(f_hh, f_hx, f_xx), j

    def test_null_direction(self):
        f, _ = self.exact_fisher()
        v = np.concatenate([[self.h], -self.x])
        assert np.linalg.norm(f @ v) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(v)

    def test_exact_constrained_bound(self):
        f, j = self.exact_fisher()
        assert energy_constrained_crlb(f) == pytest.approx(np.sum(1 / j) / np.sum(self.x) ** 2, rel=1e-9)

    def test_monte_carlo_matches_exact_information(self):
        f, _ = self.exact_fisher()
        fm = fisher_matrix(FisherConfig(self.h, tuple(self.x), self.s2, mc_samples=200_000, seed=3), UNTRUSTED)
        assert abs(fm.f_hh - f[0, 0]) < 4 * fm.stderr[0, 0]
        np.testing.assert_array_less(np.abs(fm.f_hx - f[0, 1:]), 4 * fm.stderr[0, 1:])

    def test_monte_carlo_schur_is_noise(self):
        fm = fisher_matrix(FisherConfig(self.h, tuple(self.x), self.s2, mc_samples=20_000, seed=1), UNTRUSTED)
        schur = fm.f_hh - float(np.sum(fm.f_hx**2 / fm.f_xx))
        # the exact complement is zero; the estimate sits within its sampling error
        assert abs(schur) < 0.05 * fm.f_hh


class TestMonteCarloFisher:
    def test_seed_stability(self):
        x = (0.1, 0.5, 1.0, 0.3)
        a = fisher_matrix(FisherConfig(0.01, x, 1e-4, 20_000, seed=1), TRUSTED)
        b = fisher_matrix(FisherConfig(0.01, x, 1e-4, 20_000, seed=2), TRUSTED)
        se = np.hypot(a.stderr[0, 0], b.stderr[0, 0])
        assert abs(a.f_hh - b.f_hh) < 3 * se
        c = fisher_matrix(FisherConfig(0.01, x, 1e-4, 20_000, seed=1), TRUSTED)
        assert a.f_hh == c.f_hh

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FisherConfig(0.01, (0.1,), 1e-4, mc_samples=10)
        with pytest.raises(ValueError):
            FisherConfig(0.01, (), 1e-4)


class TestCurve:
    def test_orderings(self):
        levels = PowerLevelSet.default()
        mu = 10 ** (-0.3)
        policy = solve_max_entropy(levels, mu)
        s2 = sigma2_for_snr(16.0, 0.01, mu)
        rows = crlb_curve(policy, 0.01, s2, (4, 8, 16), trials=6, seed=2, mc_samples=2000)
        assert len(rows) == 6
        m, t = curve_by_view(rows, TRUSTED)
        _, u = curve_by_view(rows, UNTRUSTED)
        assert list(m) == [4, 8, 16]
        assert np.all(t < u)
        assert np.all(np.diff(t) < 0) and np.all(np.diff(u) < 0)

    def test_deterministic(self):
        policy = solve_max_entropy(PowerLevelSet.default(), 10 ** (-0.3))
        a = crlb_curve(policy, 0.01, 1e-4, (4,), trials=3, seed=9, mc_samples=1000)
        b = crlb_curve(policy, 0.01, 1e-4, (4,), trials=3, seed=9, mc_samples=1000)
        assert a == b
