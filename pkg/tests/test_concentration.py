"""Concentration ratios, tails, carre du champ, and the theorem pipelines."""

import math
from itertools import combinations

import numpy as np
import pytest

from spinflip.concentration import (
    HJCSpec,
    TestFunctionFamily,
    carre_du_champ,
    check_subgaussian_tail,
    check_uvb,
    empirical_gcb_constant,
    gcb_ratio,
    hjc_check,
    hjc_holds,
    hjc_library,
    log_exponential_moment,
    product_gcb_constant,
    product_uvb_constant,
    psi_identity_check,
    theorem31_check,
    theorem52_check,
    theorem53_check,
    theorem53_constant,
    variance,
    weak_gcb_check,
)
from spinflip.dynamics import (
    GlauberRates,
    IndependentRates,
    PerturbedRates,
    generator_apply,
)
from spinflip.gibbs import Potential, dirac_vector, gibbs_measure, uniform_measure
from spinflip.lattice import Observable, Torus


def binomial_upper_tail(n, u):
    """P(sum of n uniform spins >= u)."""
    total = 0.0
    for k in range(n + 1):
        if 2 * k - n >= u:
            total += math.comb(n, k) / 2.0**n
    return total


class TestRatios:
    def test_single_site_closed_form(self):
        torus = Torus((1,))
        mu = uniform_measure(torus)
        f = Observable.monomial(torus, [0])
        assert gcb_ratio(mu, f) == pytest.approx(math.log(math.cosh(1.0)) / 4.0, abs=1e-12)

    def test_dirac_ratio_is_zero(self):
        torus = Torus((3,))
        mu = dirac_vector(torus, 5)
        f = Observable.monomial_sum(torus, [(1.0, [0]), (0.5, [1, 2])])
        assert abs(gcb_ratio(mu, f)) < 1e-12

    def test_magnetization_under_product_measure(self):
        # E e^{lam sum sigma_i} factorizes into cosh^N
        torus = Torus((6,))
        mu = uniform_measure(torus)
        f = Observable.monomial_sum(torus, [(1.0, [i]) for i in torus.sites()])
        for lam in (0.25, 0.5, 1.0, 2.0):
            got = log_exponential_moment(mu, lam * f.dense_values())
            assert got == pytest.approx(6 * math.log(math.cosh(lam)), abs=1e-10)
            ratio = got / (lam * lam * 24.0)
            assert ratio <= 0.5

    def test_constant_function_rejected(self):
        torus = Torus((2,))
        with pytest.raises(ValueError):
            gcb_ratio(uniform_measure(torus), Observable.constant(torus, 3.0))

    def test_centering_invariance(self):
        torus = Torus((4,))
        rng = np.random.default_rng(2)
        mu = rng.uniform(0.1, 1.0, size=16)
        mu /= mu.sum()
        f = Observable.monomial_sum(torus, [(0.7, [0, 2]), (-0.3, [1])])
        shifted = f + Observable.constant(torus, 11.0)
        assert gcb_ratio(mu, f) == pytest.approx(gcb_ratio(mu, shifted), abs=1e-10)
        assert variance(mu, f.dense_values()) == pytest.approx(
            variance(mu, shifted.dense_values()), abs=1e-10
        )

    def test_small_scale_limit_is_half_the_variance_ratio(self):
        torus = Torus((4,))
        mu = uniform_measure(torus)
        f = Observable.monomial_sum(torus, [(1.0, [0]), (0.5, [1, 3])])
        var_ratio = variance(mu, f.dense_values()) / 6.0  # l2sq = 4 + 1 + 1
        lam = 1e-4
        assert gcb_ratio(mu, f * lam) == pytest.approx(var_ratio / 2.0, abs=1e-6)


class TestFamilies:
    def test_monomials_enumeration(self):
        torus = Torus((4,))
        fam = TestFunctionFamily.monomials(torus, k_max=2)
        assert len(fam) == 4 + len(list(combinations(range(4), 2)))
        supports = [f.support for f in fam.members]
        assert supports[0] == (0,)
        assert supports[-1] == (2, 3)

    def test_random_family_is_reproducible(self):
        torus = Torus((5,))
        a = TestFunctionFamily.random_combinations(torus, 6, seed=9)
        b = TestFunctionFamily.random_combinations(torus, 6, seed=9)
        for fa, fb in zip(a.members, b.members):
            assert fa.support == fb.support
            np.testing.assert_array_equal(fa.table, fb.table)

    def test_zero_scale_rejected(self):
        torus = Torus((2,))
        with pytest.raises(ValueError):
            TestFunctionFamily([Observable.monomial(torus, [0])], lambda_grid=(0.0, 1.0))

    def test_empty_family_rejected(self):
        with pytest.raises(ValueError):
            TestFunctionFamily([])


class TestEmpiricalConstants:
    def test_dirac_best_constant_zero(self):
        torus = Torus((4,))
        fam = TestFunctionFamily.monomials(torus, 2)
        report = empirical_gcb_constant(dirac_vector(torus, 9), fam)
        assert abs(report.best_constant) < 1e-12

    def test_uniform_product_window(self):
        torus = Torus((6,))
        fam = TestFunctionFamily.monomials(torus, 2)
        report = empirical_gcb_constant(uniform_measure(torus), fam, bound=product_gcb_constant())
        assert 0.10 <= report.best_constant <= product_gcb_constant() + 1e-9
        assert report.holds

    def test_ising_gibbs_within_certified_constant(self):
        potential = Potential.ising_nn(1, 0.2)
        torus = Torus((10,))
        mu = gibbs_measure(potential, torus)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=25)
        certified = potential.gcb_constant_dobrushin()
        report = empirical_gcb_constant(mu, fam, bound=certified)
        assert report.holds
        assert report.best_constant <= certified

    def test_workers_do_not_change_the_report(self):
        torus = Torus((5,))
        mu = uniform_measure(torus)
        fam = TestFunctionFamily.monomials(torus, 2)
        seq = empirical_gcb_constant(mu, fam)
        par = empirical_gcb_constant(mu, fam, workers=4)
        assert seq.best_constant == par.best_constant
        assert seq.rows == par.rows

    def test_uvb_single_site(self):
        torus = Torus((1,))
        fam = TestFunctionFamily([Observable.monomial(torus, [0])])
        report = check_uvb(uniform_measure(torus), fam)
        assert report.best_constant == pytest.approx(0.25, abs=1e-14)

    def test_uvb_scale_invariance(self):
        torus = Torus((4,))
        mu = uniform_measure(torus)
        f = Observable.monomial_sum(torus, [(1.0, [0, 1]), (-0.5, [2])])
        a = check_uvb(mu, TestFunctionFamily([f]))
        b = check_uvb(mu, TestFunctionFamily([f * 7.0]))
        assert a.best_constant == pytest.approx(b.best_constant, rel=1e-12)

    def test_uvb_dirac_zero(self):
        torus = Torus((3,))
        fam = TestFunctionFamily.monomials(torus, 2)
        report = check_uvb(dirac_vector(torus, 0), fam, bound=product_uvb_constant())
        assert report.best_constant == pytest.approx(0.0, abs=1e-14)
        assert report.holds


class TestSubgaussianTail:
    def test_zero_threshold(self):
        torus = Torus((3,))
        f = Observable.monomial(torus, [0])
        report = check_subgaussian_tail(uniform_measure(torus), f, [0.0], 0.5)
        assert report.rows[0]["bound"] == 1.0
        assert report.holds

    def test_binomial_oracle(self):
        n = 6
        torus = Torus((n,))
        f = Observable.monomial_sum(torus, [(1.0, [i]) for i in range(n)])
        report = check_subgaussian_tail(
            uniform_measure(torus), f, [0.0, 1.0, 2.0, 4.0, 6.0], constant=0.5
        )
        for row in report.rows:
            assert row["tail"] == pytest.approx(binomial_upper_tail(n, row["u"]), abs=1e-12)
            assert row["bound"] == pytest.approx(math.exp(-row["u"] ** 2 / (8.0 * n)), abs=1e-12)
            assert row["ok"]

    def test_dirac_tail_vanishes(self):
        torus = Torus((3,))
        f = Observable.monomial(torus, [1])
        report = check_subgaussian_tail(dirac_vector(torus, 2), f, [0.5, 1.0], 0.5)
        for row in report.rows:
            assert row["tail"] == 0.0
            assert row["ok"]


class TestWeakGCB:
    def test_single_site_limits(self):
        torus = Torus((1,))
        f = Observable.monomial(torus, [0])
        report = weak_gcb_check(uniform_measure(torus), f, constant=0.25)
        assert report.holds
        assert report.lambda0 == 1.0
        assert report.var_ratio == pytest.approx(0.25, abs=1e-14)
        assert report.taylor_ratio == pytest.approx(0.25, abs=1e-6)
        assert report.small_lambda_ratio == pytest.approx(0.125, abs=1e-6)
        assert report.window_holds

    def test_dirac_vacuous(self):
        torus = Torus((3,))
        f = Observable.monomial(torus, [0, 1])
        report = weak_gcb_check(dirac_vector(torus, 4), f, constant=0.1)
        assert report.holds
        assert report.lambda0 == 1.0
        assert report.var_ratio == 0.0

    def test_uvb_constant_covers_the_window(self):
        # the proof's window: ratio <= e C / 2 once lambda <= 1/(2||f||+1)
        torus = Torus((5,))
        rng = np.random.default_rng(7)
        mu = rng.uniform(0.05, 1.0, size=32)
        mu /= mu.sum()
        f = Observable.monomial_sum(torus, [(0.8, [0, 1]), (0.6, [2]), (-0.4, [3, 4])])
        l2sq = sum(d * d for d in (1.6, 1.6, 1.2, 0.8, 0.8))
        c_var = variance(mu, f.dense_values()) / l2sq
        report = weak_gcb_check(mu, f, constant=c_var)
        assert report.window_holds


class TestCarreDuChamp:
    def test_unit_rates_single_spin(self):
        torus = Torus((4,))
        rates = IndependentRates(torus, 1.0)
        g = carre_du_champ(rates, Observable.monomial(torus, [0]))
        np.testing.assert_allclose(g.dense_values(), 4.0)

    def test_constant_function(self):
        torus = Torus((4,))
        rates = IndependentRates(torus, 1.0)
        g = carre_du_champ(rates, Observable.constant(torus, 2.5))
        assert g.sup_norm() == 0.0

    def test_generator_identity(self):
        # Gamma(f, f) = L(f^2) - 2 f L f
        torus = Torus((6,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.3))
        f = Observable.monomial_sum(torus, [(1.0, [0, 1]), (-0.7, [3])])
        f2 = Observable(torus, f.support, f.table**2)
        lhs = carre_du_champ(rates, f).dense_values()
        rhs = generator_apply(rates, f2).dense_values() - 2.0 * f.dense_values() * generator_apply(rates, f).dense_values()
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_sup_bound_holds_for_random_functions(self):
        torus = Torus((6,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.4))
        fam = TestFunctionFamily.random_combinations(torus, 8, seed=3)
        for f in fam.members:
            carre_du_champ(rates, f)  # raises if the sup bound fails


class TestPsiIdentity:
    def test_zero_time(self):
        torus = Torus((5,))
        rates = IndependentRates(torus, 1.0)
        report = psi_identity_check(rates, 0.0, Observable.monomial(torus, [0, 1]))
        assert report.gap < 1e-12

    def test_constant_function(self):
        torus = Torus((5,))
        rates = IndependentRates(torus, 1.0)
        report = psi_identity_check(rates, 0.8, Observable.constant(torus, 3.0), steps=16)
        assert report.gap < 1e-12

    def test_quadrature_order(self):
        torus = Torus((6,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.3))
        f = Observable.monomial(torus, [0, 1])
        g32 = psi_identity_check(rates, 0.6, f, steps=32).gap
        g64 = psi_identity_check(rates, 0.6, f, steps=64).gap
        assert g64 < g32
        assert g32 / g64 > 8.0

    def test_odd_steps_rejected(self):
        torus = Torus((4,))
        rates = IndependentRates(torus, 1.0)
        with pytest.raises(ValueError):
            psi_identity_check(rates, 0.5, Observable.monomial(torus, [0]), steps=7)


class TestTheorem31:
    def test_time_zero_reduces_to_the_initial_gcb(self):
        torus = Torus((6,))
        rates = IndependentRates(torus, 1.0)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=12)
        report = theorem31_check(rates, 0.0, uniform_measure(torus), fam, product_gcb_constant())
        assert report.holds
        assert report.inner_constant == pytest.approx(0.0, abs=1e-12)
        assert report.composite_constant == pytest.approx(product_gcb_constant(), abs=1e-12)

    def test_independent_dynamics_grid(self):
        torus = Torus((6,))
        rates = IndependentRates(torus, 1.0)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=10)
        mu = uniform_measure(torus)
        for t in (0.1, 0.5, 1.0):
            report = theorem31_check(rates, t, mu, fam, product_gcb_constant())
            assert report.holds
            assert report.measured_constant <= report.composite_constant + 1e-9

    def test_perturbed_rates_pipeline(self):
        torus = Torus((8,))
        rates = PerturbedRates.pair(torus, 0.1)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=10)
        report = theorem31_check(rates, 0.5, uniform_measure(torus), fam, product_gcb_constant())
        assert report.holds

    def test_gibbs_initial_measure(self):
        potential = Potential.ising_nn(1, 0.2)
        torus = Torus((6,))
        rates = GlauberRates(torus, potential)
        mu = gibbs_measure(potential, torus)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=8)
        report = theorem31_check(rates, 0.3, mu, fam, potential.gcb_constant_dobrushin())
        assert report.holds


class TestTheorem52:
    def test_time_zero_reduces_to_the_initial_uvb(self):
        torus = Torus((6,))
        rates = IndependentRates(torus, 1.0)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=12)
        report = theorem52_check(rates, 0.0, uniform_measure(torus), fam, product_uvb_constant())
        assert report.holds
        assert report.inner_constant == pytest.approx(0.0, abs=1e-12)
        assert report.composite_constant == pytest.approx(product_uvb_constant(), abs=1e-12)

    def test_glauber_pipeline(self):
        potential = Potential.ising_nn(1, 0.2)
        torus = Torus((8,))
        rates = GlauberRates(torus, potential)
        mu = gibbs_measure(potential, torus)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=10)
        # Efron-Stein style certified constant for the Gibbs measure: use the
        # Dobrushin GCB constant, which dominates the variance ratio
        c_mu = potential.gcb_constant_dobrushin()
        report = theorem52_check(rates, 0.5, mu, fam, c_mu)
        assert report.holds

    def test_dirac_initial_measure(self):
        torus = Torus((6,))
        rates = IndependentRates(torus, 1.0)
        fam = TestFunctionFamily.monomials(torus, 1)
        start = 13
        report = theorem52_check(rates, 0.4, dirac_vector(torus, start), fam, 0.0)
        assert report.holds
        # the start integral collapses to the single start's constant
        assert report.composite_constant == pytest.approx(report.inner_constant, abs=1e-12)


class TestTheorem53:
    def test_zero_time(self):
        torus = Torus((4,))
        rates = IndependentRates(torus, 1.0)
        result = theorem53_constant(rates, 0.0)
        assert result.constant == 0.0

    def test_independent_closed_form(self):
        # Gamma = 0 so K = 1 and the constant is 2 chat t = 2 t
        torus = Torus((5,))
        rates = IndependentRates(torus, 1.0)
        for t in (0.25, 1.0, 2.0):
            result = theorem53_constant(rates, t)
            assert result.constant == pytest.approx(2.0 * t, rel=1e-9)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=8)
        report = theorem53_check(rates, 0.5, fam)
        assert report.holds
        # single-spin variance under any start is 1 - e^{-4t}
        f = Observable.monomial(torus, [0])
        from spinflip.concentration import evolve_dirac_matrix

        T = evolve_dirac_matrix(rates, 0.5)
        v = f.dense_values()
        var0 = float((T[0] @ v**2) - (T[0] @ v) ** 2)
        assert var0 == pytest.approx(1.0 - math.exp(-4.0 * 0.5), abs=1e-10)

    def test_glauber_bound_holds(self):
        torus = Torus((6,))
        rates = GlauberRates(torus, Potential.ising_nn(1, 0.3))
        fam = TestFunctionFamily.monomials(torus, 2, max_count=8)
        report = theorem53_check(rates, 0.5, fam)
        assert report.holds


class TestHJC:
    def test_library_shapes(self):
        sq = hjc_library("square")
        assert sq.j_inv(sq.j(1.7)) == pytest.approx(1.7)
        ex = hjc_library("exponential")
        assert ex.j_inv(ex.j(0.9)) == pytest.approx(0.9)
        p4 = hjc_library("abs_p:4")
        assert p4.h(-2.0) == 16.0

    def test_nonconvex_h_rejected(self):
        with pytest.raises(ValueError):
            HJCSpec(math.sin, lambda y: y, lambda y: y, 1.0)

    def test_nonmonotone_j_rejected(self):
        with pytest.raises(ValueError):
            HJCSpec(lambda x: x * x, lambda y: -y, lambda y: -y, 1.0)

    def test_fourth_moment_example(self):
        torus = Torus((1,))
        spec = hjc_library("abs_p:4", c=0.5)
        row = hjc_holds(uniform_measure(torus), Observable.monomial(torus, [0]), spec)
        assert row["lhs"] == pytest.approx(1.0)
        assert row["rhs"] == pytest.approx(1.0)
        assert row["ok"]

    def test_square_reduces_to_variance(self):
        torus = Torus((4,))
        mu = uniform_measure(torus)
        f = Observable.monomial(torus, [0, 2])
        spec = hjc_library("square", c=math.sqrt(0.25))
        row = hjc_holds(mu, f, spec)
        assert row["lhs"] == pytest.approx(variance(mu, f.dense_values()), abs=1e-12)
        assert row["ok"]

    def test_dirac_left_side_vanishes(self):
        torus = Torus((3,))
        spec = hjc_library("square", c=1.0)
        row = hjc_holds(dirac_vector(torus, 1), Observable.monomial(torus, [0]), spec)
        assert row["lhs"] == 0.0

    def test_pipeline_square(self):
        torus = Torus((6,))
        rates = IndependentRates(torus, 1.0)
        fam = TestFunctionFamily.monomials(torus, 2, max_count=8)
        spec = hjc_library("square", c=1.0)
        report = hjc_check(rates, 0.5, uniform_measure(torus), spec, fam)
        assert report.holds

    def test_pipeline_fourth_power(self):
        torus = Torus((5,))
        rates = PerturbedRates.pair(torus, 0.1)
        fam = TestFunctionFamily.monomials(torus, 1, lambda_grid=(0.5, -0.5, 1.0))
        spec = hjc_library("abs_p:4", c=1.0)
        report = hjc_check(rates, 0.4, uniform_measure(torus), spec, fam)
        assert report.holds
