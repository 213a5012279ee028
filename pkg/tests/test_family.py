import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import comb

from glmkrig.family import (
    FAMILIES,
    LINKS,
    Family,
    FamilyError,
    Link,
    log_density,
    log_density_d1,
    mean_from_latent,
    sample_family,
    validate_combination,
)

TABLE_OK = {
    ("gaussian", "identity"), ("gaussian", "inverse"),
    ("poisson", "log"), ("poisson", "sqrt"),
    ("gamma", "log"), ("gamma", "sqrt"),
    ("inverse_gaussian", "log"), ("inverse_gaussian", "sqrt"),
    ("negative_binomial", "log"), ("negative_binomial", "sqrt"),
    ("negative_binomial", "logit"), ("negative_binomial", "probit"),
    ("negative_binomial", "cloglog"),
    ("binomial", "logit"), ("binomial", "probit"), ("binomial", "cloglog"),
}
TABLE_WARN = {
    ("gaussian", "log"), ("gaussian", "sqrt"),
    ("poisson", "identity"), ("poisson", "inverse"),
    ("gamma", "identity"), ("gamma", "inverse"),
    ("inverse_gaussian", "identity"), ("inverse_gaussian", "inverse"),
}


class TestCombinationTable:
    def test_poisson_log_ok(self):
        assert validate_combination(Family("poisson"), Link("log")) == "ok"

    def test_gaussian_log_warn(self):
        assert validate_combination(Family("gaussian"), Link("log")) == "warn"

    def test_binomial_identity_forbidden(self):
        assert validate_combination(Family("binomial"), Link("identity")) == "forbidden"

    def test_full_table(self):
        for fam in FAMILIES:
            for link in LINKS:
                got = validate_combination(Family(fam), Link(link))
                if (fam, link) in TABLE_OK:
                    assert got == "ok", (fam, link)
                elif (fam, link) in TABLE_WARN:
                    assert got == "warn", (fam, link)
                else:
                    assert got == "forbidden", (fam, link)


class TestLinks:
    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from(LINKS), st.floats(-3, 3))
    def test_g_and_ginv_are_mutual_inverses(self, kind, y):
        link = Link(kind)
        if kind == "inverse" and abs(y) < 1e-2:
            y = 1.0
        if kind == "sqrt":
            y = abs(y) + 0.1
        val = link.ginv(y)
        assert np.isfinite(val)
        assert link.g(val) == pytest.approx(y, abs=1e-9)

    def test_probit_inverse_accuracy(self):
        link = Link("probit")
        # Phi(1.959963984540054) = 0.975 to high precision
        assert link.ginv(1.959963984540054) == pytest.approx(0.975, abs=1e-12)

    def test_cloglog_inverse_form(self):
        link = Link("cloglog")
        y = 0.3
        assert link.ginv(y) == pytest.approx(1 - np.exp(-np.exp(y)))

    @pytest.mark.parametrize("kind", LINKS)
    def test_ginv_derivatives_match_finite_differences(self, kind):
        link = Link(kind)
        rng = np.random.default_rng(0)
        y = rng.uniform(0.5, 1.5, 20)
        h = 1e-6
        d1 = (link.ginv(y + h) - link.ginv(y - h)) / (2 * h)
        assert np.allclose(link.ginv_d1(y), d1, rtol=1e-6, atol=1e-8)
        h = 1e-4  # second difference needs a larger step against rounding
        d2 = (link.ginv(y + h) - 2 * link.ginv(y) + link.ginv(y - h)) / h**2
        assert np.allclose(link.ginv_d2(y), d2, rtol=1e-4, atol=1e-6)


class TestMeanFromLatent:
    def test_binomial_logit_midpoint(self):
        mu, pi = mean_from_latent(0.0, Link("logit"), Family("binomial"), k=50)
        assert pi == pytest.approx(0.5)
        assert mu == pytest.approx(25.0)

    def test_negbin_log_at_zero(self):
        mu, pi = mean_from_latent(0.0, Link("log"),
                                  Family("negative_binomial"), k=50)
        assert mu == pytest.approx(50.0)
        assert pi == pytest.approx(0.5)

    def test_poisson_log(self):
        mu, pi = mean_from_latent(1.0, Link("log"), Family("poisson"))
        assert mu == pytest.approx(np.e)
        assert pi is None

    def test_missing_size_raises(self):
        with pytest.raises(FamilyError):
            mean_from_latent(0.0, Link("logit"), Family("binomial"))

    def test_negbin_probability_link_inverts_expectation(self):
        # h(mu; k) = k/(mu+k) must recover pi = f^-1(y)
        for kind in ("logit", "probit", "cloglog"):
            link = Link(kind)
            y = np.array([-1.2, 0.0, 0.7])
            mu, pi = mean_from_latent(y, link, Family("negative_binomial"),
                                      k=np.array([3.0, 50.0, 7.0]))
            k = np.array([3.0, 50.0, 7.0])
            assert np.allclose(k / (mu + k), link.ginv(y), atol=1e-12)

    def test_binomial_h_inverts_expectation(self):
        link = Link("probit")
        y = np.array([-0.5, 0.3])
        k = np.array([10.0, 20.0])
        mu, pi = mean_from_latent(y, link, Family("binomial"), k=k)
        assert np.allclose(mu / k, link.ginv(y), atol=1e-12)


class TestLogDensity:
    def test_poisson_at_zero(self):
        assert log_density(Family("poisson"), 0.0, 1.0) == pytest.approx(-1.0)

    def test_gaussian_at_mean(self):
        val = log_density(Family("gaussian"), 2.0, 2.0, psi=1.0)
        assert val == pytest.approx(-0.5 * np.log(2 * np.pi))

    def test_binomial_hand_value(self):
        # z=3, k=10, pi=0.5 -> log(C(10,3) * 2^-10)
        val = log_density(Family("binomial"), 3.0, mu=5.0, k=10.0)
        assert val == pytest.approx(np.log(comb(10, 3) * 2.0 ** -10))

    def test_negbin_pmf_form(self):
        # z failures before k successes: C(z+k-1, z) pi^k (1-pi)^z
        z, k, pi = 4.0, 6.0, 0.55
        mu = k * (1 - pi) / pi
        val = log_density(Family("negative_binomial"), z, mu, k=k)
        expect = np.log(comb(z + k - 1, z) * pi**k * (1 - pi) ** z)
        assert val == pytest.approx(expect)

    def test_support_errors(self):
        with pytest.raises(FamilyError):
            log_density(Family("poisson"), -1.0, 1.0)
        with pytest.raises(FamilyError):
            log_density(Family("gamma"), 0.0, 1.0)
        with pytest.raises(FamilyError):
            log_density(Family("binomial"), 11.0, 5.0, k=10.0)

    def test_out_of_domain_mean_is_minus_inf(self):
        assert log_density(Family("poisson"), 1.0, 0.0) == -np.inf

    @pytest.mark.parametrize("fam,mu,psi,k", [
        ("poisson", 3.7, 1.0, None),
        ("negative_binomial", 4.2, 1.0, 6.0),
        ("binomial", 3.1, 1.0, 12.0),
    ])
    def test_pmf_sums_to_one(self, fam, mu, psi, k):
        family = Family(fam)
        zmax = int(k) if fam == "binomial" else 400
        z = np.arange(0, zmax + 1, dtype=float)
        kk = None if k is None else np.full_like(z, k)
        total = np.exp(log_density(family, z, np.full_like(z, mu), psi, kk)).sum()
        assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("fam,mu,psi", [
        ("gaussian", 1.3, 0.7),
        ("gamma", 2.0, 0.5),
        ("inverse_gaussian", 1.5, 0.4),
    ])
    def test_pdf_integrates_to_one(self, fam, mu, psi):
        family = Family(fam)
        lo = -30.0 if fam == "gaussian" else 1e-9
        val, _ = quad(lambda z: np.exp(log_density(family, z, mu, psi)),
                      lo, 60.0, limit=200)
        assert val == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("fam,k", [
        ("gaussian", None), ("poisson", None), ("gamma", None),
        ("inverse_gaussian", None), ("negative_binomial", 7.0),
        ("binomial", 15.0),
    ])
    def test_mean_derivative_matches_finite_differences(self, fam, k):
        family = Family(fam)
        rng = np.random.default_rng(4)
        for _ in range(10):
            mu = rng.uniform(1.0, 6.0)
            psi = rng.uniform(0.3, 2.0) if not family.psi_fixed else 1.0
            if fam == "gaussian":
                z = rng.normal(mu, 1)
            elif fam in ("gamma", "inverse_gaussian"):
                z = rng.uniform(0.5, 8.0)
            elif fam == "binomial":
                z = float(rng.integers(0, int(k) + 1))
            else:
                z = float(rng.integers(0, 15))
            h = 1e-6 * max(1.0, mu)
            fd = (log_density(family, z, mu + h, psi, k)
                  - log_density(family, z, mu - h, psi, k)) / (2 * h)
            an = log_density_d1(family, z, mu, psi, k)
            assert np.isclose(an, fd, rtol=1e-6, atol=1e-8), (fam, z, mu)


class TestSampling:
    @pytest.mark.parametrize("fam,k", [
        ("gaussian", None), ("poisson", None), ("gamma", None),
        ("inverse_gaussian", None), ("negative_binomial", 9.0),
        ("binomial", 20.0),
    ])
    def test_sample_means_match(self, fam, k):
        family = Family(fam)
        rng = np.random.default_rng(11)
        mu = np.full(20000, 4.0)
        kk = None if k is None else np.full_like(mu, k)
        z = sample_family(rng, family, mu, psi=0.5 if not family.psi_fixed else 1.0,
                          k=kk)
        assert z.mean() == pytest.approx(4.0, rel=0.05)
        if fam in ("poisson", "negative_binomial", "binomial"):
            assert np.all(z >= 0)
            assert np.all(z == np.floor(z))
