"""Information-form Gaussian algebra checked against dense moment-form formulas."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distinfer.gauss import (GaussianFactor, NonIntegrableError, NotNormalizableError, ScopeError,
                             product)


def random_spd(rng, n, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return (q * ev) @ q.T


def random_factor(rng, scope, normalized=True):
    n = len(scope)
    cov = random_spd(rng, n)
    mean = rng.normal(scale=3.0, size=n)
    f = GaussianFactor.from_moments(scope, mean, cov)
    return f, mean, cov


class TestConstruction:
    def test_from_moments_round_trip(self):
        rng = np.random.default_rng(0)
        f, mean, cov = random_factor(rng, ("a", "b", "c"))
        m, c = f.moment_stats()
        np.testing.assert_allclose(m, mean, rtol=1e-10)
        np.testing.assert_allclose(c, cov, rtol=1e-10, atol=1e-12)

    def test_log_scale_normalizes(self):
        # a 1-d standard normal evaluated at zero
        f = GaussianFactor.from_moments(["x"], [0.0], [[1.0]])
        assert f.log_scale == pytest.approx(-0.5 * np.log(2 * np.pi))

    def test_uniform_is_identity(self):
        rng = np.random.default_rng(1)
        f, _, _ = random_factor(rng, ("a", "b"))
        g = f.multiply(GaussianFactor.uniform(("b", "a")))
        assert g.same_distribution(f)

    def test_uniform_not_normalizable(self):
        u = GaussianFactor.uniform(("a",))
        assert not u.is_normalizable()
        with pytest.raises(NotNormalizableError):
            u.moment_stats()

    def test_duplicate_scope_rejected(self):
        with pytest.raises(ScopeError):
            GaussianFactor(("a", "a"), np.eye(2), np.zeros(2))

    def test_bad_covariance(self):
        with pytest.raises(NotNormalizableError):
            GaussianFactor.from_moments(["a", "b"], [0, 0], [[1, 1], [1, 1]])

    def test_vector_valued_variable(self):
        rng = np.random.default_rng(2)
        cov = random_spd(rng, 3)
        f = GaussianFactor.from_moments(["p", "q"], [1.0, 2.0, 3.0], cov, dims=[2, 1])
        assert f.dim_of("p") == 2 and f.size == 3
        m = f.marginalize(["p"])
        np.testing.assert_allclose(m.moment_stats()[1], cov[:2, :2], rtol=1e-10)


class TestExtend:
    def test_pads_zero_information(self):
        f = GaussianFactor(("a",), [[2.0]], [1.0])
        g = f.extend(("b", "a"))
        np.testing.assert_array_equal(g.precision, [[0.0, 0.0], [0.0, 2.0]])
        np.testing.assert_array_equal(g.info, [0.0, 1.0])

    def test_missing_variable(self):
        f = GaussianFactor(("a", "b"), np.eye(2), np.zeros(2))
        with pytest.raises(ScopeError):
            f.extend(("a",))

    def test_duplicate_target(self):
        f = GaussianFactor(("a",), [[1.0]], [0.0])
        with pytest.raises(ScopeError):
            f.extend(("a", "b", "b"))


class TestAlgebra:
    def test_multiply_adds_parameters(self):
        f = GaussianFactor(("a", "b"), [[2.0, 0.5], [0.5, 1.0]], [1.0, 0.0], 0.3)
        g = GaussianFactor(("b", "c"), [[1.0, -0.2], [-0.2, 3.0]], [0.5, 2.0], -0.1)
        h = f * g
        assert h.scope == ("a", "b", "c")
        np.testing.assert_allclose(h.precision, [[2.0, 0.5, 0.0], [0.5, 2.0, -0.2], [0.0, -0.2, 3.0]])
        np.testing.assert_allclose(h.info, [1.0, 0.5, 2.0])
        assert h.log_scale == pytest.approx(0.2)

    def test_multiply_commutes(self):
        rng = np.random.default_rng(3)
        f, _, _ = random_factor(rng, ("a", "b"))
        g, _, _ = random_factor(rng, ("c", "b"))
        assert (f * g).same_distribution(g * f)

    def test_divide_inverts_multiply(self):
        rng = np.random.default_rng(4)
        f, _, _ = random_factor(rng, ("a", "b", "c"))
        g, _, _ = random_factor(rng, ("c",))
        assert ((f * g) / g).same_distribution(f)

    def test_divide_scope_error(self):
        f = GaussianFactor(("a",), [[1.0]], [0.0])
        g = GaussianFactor(("b",), [[1.0]], [0.0])
        with pytest.raises(ScopeError):
            f / g

    def test_marginal_matches_covariance_block(self):
        rng = np.random.default_rng(5)
        f, mean, cov = random_factor(rng, ("a", "b", "c", "d"))
        m = f.marginalize(["d", "b"])
        assert m.scope == ("b", "d")
        mm, mc = m.moment_stats()
        np.testing.assert_allclose(mm, mean[[1, 3]], rtol=1e-10)
        np.testing.assert_allclose(mc, cov[np.ix_([1, 3], [1, 3])], rtol=1e-9, atol=1e-12)

    def test_marginal_integral_tracks_log_scale(self):
        # the integral of a normalized density over all variables is one
        rng = np.random.default_rng(6)
        f, _, _ = random_factor(rng, ("a", "b", "c"))
        assert f.marginalize([]).log_scale == pytest.approx(0.0, abs=1e-10)

    def test_marginalize_rejects_improper_block(self):
        f = GaussianFactor(("a", "b"), [[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0])
        with pytest.raises(NonIntegrableError):
            f.marginalize(["a"])
        # the pseudo-inverse fallback still produces something
        g = f.marginalize(["a"], pseudo=True)
        np.testing.assert_allclose(g.precision, [[1.0]])

    def test_condition_matches_gaussian_conditioning(self):
        rng = np.random.default_rng(7)
        f, mean, cov = random_factor(rng, ("a", "b", "c"))
        x = 0.7
        g = f.condition({"b": x})
        r, o = [0, 2], [1]
        s_ro = cov[np.ix_(r, o)]
        s_oo = cov[np.ix_(o, o)]
        cm = mean[r] + (s_ro @ np.linalg.solve(s_oo, [x - mean[1]]))
        cc = cov[np.ix_(r, r)] - s_ro @ np.linalg.solve(s_oo, s_ro.T)
        gm, gc = g.moment_stats()
        np.testing.assert_allclose(gm, cm, rtol=1e-9)
        np.testing.assert_allclose(gc, cc, rtol=1e-9, atol=1e-12)

    def test_product_helper(self):
        fs = [GaussianFactor((v,), [[1.0]], [float(k)]) for k, v in enumerate("abc")]
        p = product(fs)
        assert set(p.scope) == {"a", "b", "c"}
        np.testing.assert_allclose(p.mean_of("c"), [2.0])


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6), k=st.integers(0, 6))
    def test_marginal_of_product_with_uniform(self, seed, n, k):
        rng = np.random.default_rng(seed)
        scope = tuple(f"v{i}" for i in range(n))
        f, mean, cov = random_factor(rng, scope)
        keep = sorted(rng.choice(n, size=min(k, n), replace=False).tolist())
        m = (f * GaussianFactor.uniform(scope[::-1])).marginalize([scope[i] for i in keep])
        if keep:
            mm, mc = m.moment_stats()
            np.testing.assert_allclose(mm, mean[keep], rtol=1e-8, atol=1e-8)
            np.testing.assert_allclose(mc, cov[np.ix_(keep, keep)], rtol=1e-8, atol=1e-8)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_precision_stays_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        f, _, _ = random_factor(rng, ("a", "b", "c", "d"))
        g, _, _ = random_factor(rng, ("c", "e"))
        h = (f * g).marginalize(["a", "e"]).condition({"e": 1.0})
        np.testing.assert_array_equal(h.precision, h.precision.T)
