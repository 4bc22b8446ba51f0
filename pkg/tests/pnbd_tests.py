"""Tests für das Pareto/NBD-Modell: Likelihood, PAlive, CET, DERT, E[X(t)], PMF, Sarmanov."""
import math

import numpy as np
import pandas as pd
from scipy import integrate, special, stats

from clv.dataset import CustomerSummary
from clv.exceptions import CapabilityError, DomainError
from clv.pnbd import (
    ModelOptions, PnbdModel, PnbdParams, cet, dert, long_lifetime_warning, loglik_customer,
    loglik_total, palive, pmf, sarmanov_bounds, sarmanov_correlation, unconditional_expectation,
)

from . import fixtures
from .base import TestCategory, close, raises

P = PnbdParams(0.55, 10.6, 0.61, 11.7)
REFERENCE = PnbdParams(1.4490, 48.6361, 0.5613, 46.8844)


def cs(x, t_x, T, cid='c'):
    return CustomerSummary(cid, x, t_x, T, pd.Timestamp('2020-01-06'))


# Orakel über die Sterbezeit tau: bis T lebendig oder Tod in (t_x, T)
def _a(p, x, tau):
    return math.exp(special.gammaln(p.r + x) - special.gammaln(p.r) + p.r * math.log(p.alpha)
                    - (p.r + x) * math.log(p.alpha + tau))


def _survive(p, tau):
    return (p.beta / (p.beta + tau)) ** p.s


def oracle_lik(p, x, t_x, T):
    death, _ = integrate.quad(
        lambda tau: _a(p, x, tau) * p.s / (p.beta + tau) * _survive(p, tau), t_x, T,
        epsabs=0.0, epsrel=1e-13, limit=200)
    return _a(p, x, T) * _survive(p, T) + death


def oracle_palive(p, x, t_x, T):
    return _a(p, x, T) * _survive(p, T) / oracle_lik(p, x, t_x, T)


def oracle_cet(p, x, t_x, T, t):
    rate = (p.r + x) / (p.alpha + T)
    alive_mass, _ = integrate.quad(lambda u: ((p.beta + T) / (p.beta + T + u)) ** p.s, 0.0, t,
                                   epsabs=0.0, epsrel=1e-13)
    return oracle_palive(p, x, t_x, T) * rate * alive_mass


def oracle_dert(p, x, t_x, T, delta):
    rate = (p.r + x) / (p.alpha + T)
    mass, _ = integrate.quad(lambda u: math.exp(-delta * u) * ((p.beta + T) / (p.beta + T + u)) ** p.s,
                             0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=400)
    return oracle_palive(p, x, t_x, T) * rate * mass


CASES = [(0, 0.0, 30.0), (1, 5.0, 30.0), (4, 28.5, 40.0), (12, 50.0, 52.0), (2, 1.0, 78.0)]


class PnbdTests(TestCategory):
    name = 'Pareto/NBD'
    description = 'Geschlossene Formen gegen Quadratur-Orakel und Grenzfälle'

    @staticmethod
    def test_loglik_vs_quadrature():
        """Individuelle LL gegen 1-D-Quadratur über die Sterbezeit (≤ 1e-8)"""
        got = [loglik_customer(P, cs(*c)) for c in CASES]
        ref = [math.log(oracle_lik(P, *c)) for c in CASES]
        return close(got, ref, 1e-8)

    @staticmethod
    def test_loglik_alpha_below_beta_branch():
        """Zweig alpha < beta und alpha > beta gegen Orakel"""
        p1 = PnbdParams(1.2, 3.0, 0.8, 9.0)
        p2 = PnbdParams(1.2, 9.0, 0.8, 3.0)
        got = [loglik_customer(p, cs(3, 10.0, 20.0)) for p in (p1, p2)]
        ref = [math.log(oracle_lik(p, 3, 10.0, 20.0)) for p in (p1, p2)]
        return close(got, ref, 1e-8)

    @staticmethod
    def test_loglik_alpha_equals_beta():
        """alpha = beta (z = 0) stetig"""
        p = PnbdParams(0.9, 7.0, 1.3, 7.0)
        return close(loglik_customer(p, cs(2, 6.0, 15.0)), math.log(oracle_lik(p, 2, 6.0, 15.0)), 1e-9)

    @staticmethod
    def test_loglik_low_heterogeneity():
        """r=400, alpha=5000 (z nahe 1): endlich und gleich dem Orakel"""
        p = PnbdParams(400.0, 5000.0, 0.6, 12.0)
        got = [loglik_customer(p, cs(*c)) for c in CASES]
        ref = [math.log(oracle_lik(p, *c)) for c in CASES]
        return close(got, ref, 1e-8)

    @staticmethod
    def test_loglik_extreme_alpha_beta_ratio():
        """alpha/beta ≥ 1e3 und 1e9 in beide Richtungen gegen Orakel"""
        params = [PnbdParams(0.8, 2.0e4, 0.7, 10.0), PnbdParams(1.0, 2.0e9, 1.0, 1.0),
                  PnbdParams(1.5, 4.0, 0.9, 8.0e3)]
        got = [loglik_customer(p, cs(*c)) for p in params for c in CASES]
        ref = [math.log(oracle_lik(p, *c)) for p in params for c in CASES]
        return close(got, ref, 1e-7)

    @staticmethod
    def test_loglik_total_low_heterogeneity_cohort():
        """Ganze simulierte Kohorte bei r=400, alpha=5000: endliche Summe"""
        ds = fixtures.small_ds()
        value = PnbdModel(PnbdParams(400.0, 5000.0, 0.6, 12.0), ds.x, ds.t_x, ds.T).loglik()
        return math.isfinite(value), f'LL = {value:.4f}'

    @staticmethod
    def test_loglik_total_reference_parameters():
        """Summe über simulierte Kohorte bei (1.4490, 48.6361, 0.5613, 46.8844) ≤ 1e-6"""
        ds = fixtures.sim_ds()
        idx = np.arange(0, ds.n_customers, 20)
        model = PnbdModel(REFERENCE, ds.x[idx], ds.t_x[idx], ds.T[idx])
        ref = sum(math.log(oracle_lik(REFERENCE, ds.x[i], ds.t_x[i], ds.T[i])) for i in idx)
        return abs(model.loglik() - ref) <= 1e-6 * abs(ref), f'{model.loglik():.8f} vs {ref:.8f}'

    @staticmethod
    def test_loglik_total_equals_sum():
        """loglik_total = Σ individuelle LL"""
        ds = fixtures.sim_ds()
        total = loglik_total(P, ds, threads=2)
        parts = PnbdModel.from_dataset(P, ds).loglik_vector()
        return close(total, math.fsum(parts), 1e-12)

    @staticmethod
    def test_threads_do_not_change_result():
        """1 vs. 4 Threads: identische LL"""
        ds = fixtures.sim_ds()
        a = PnbdModel.from_dataset(P, ds, threads=1).loglik()
        b = PnbdModel.from_dataset(P, ds, threads=4).loglik()
        return a == b, f'{a!r} / {b!r}'

    @staticmethod
    def test_palive_vs_quadrature():
        """PAlive gegen Orakel"""
        got = [palive(P, cs(*c)) for c in CASES]
        ref = [oracle_palive(P, *c) for c in CASES]
        return close(got, ref, 1e-8)

    @staticmethod
    def test_palive_no_repeat_decreases_with_T():
        """x = 0: PAlive fällt mit T"""
        vals = [palive(P, cs(0, 0.0, T)) for T in (1.0, 10.0, 50.0, 200.0)]
        return bool(np.all(np.diff(vals) < 0)) and 0 < vals[-1] < vals[0] <= 1, str(vals)

    @staticmethod
    def test_palive_recent_purchase_is_one():
        """t_x = T: PAlive = 1"""
        return close(palive(P, cs(5, 40.0, 40.0)), 1.0, 1e-10)

    @staticmethod
    def test_cet_vs_quadrature():
        """CET gegen Orakel"""
        got = [cet(P, cs(*c), 26.0) for c in CASES]
        ref = [oracle_cet(P, *c, 26.0) for c in CASES]
        return close(got, ref, 1e-8)

    @staticmethod
    def test_cet_s_equal_one():
        """s = 1: logarithmischer Grenzfall"""
        p = PnbdParams(0.7, 5.0, 1.0, 8.0)
        return close(cet(p, cs(3, 12.0, 20.0), 30.0), oracle_cet(p, 3, 12.0, 20.0, 30.0), 1e-8)

    @staticmethod
    def test_cet_zero_horizon():
        """CET(0) = 0"""
        return cet(P, cs(3, 10.0, 20.0), 0.0) == 0.0, 'OK'

    @staticmethod
    def test_cet_negative_horizon():
        """Negativer Horizont → DomainError"""
        return raises(DomainError, cet, P, cs(3, 10.0, 20.0), -1.0)

    @staticmethod
    def test_dert_vs_quadrature():
        """DERT gegen Orakel (δ = ln(1.1)/52)"""
        delta = math.log(1.1) / 52.0
        got = [dert(P, cs(*c), delta) for c in CASES]
        ref = [oracle_dert(P, *c, delta) for c in CASES]
        return close(got, ref, 1e-6)

    @staticmethod
    def test_dert_exceeds_finite_cet():
        """DERT ≥ CET über endlichen Horizont bei kleinem δ"""
        delta = math.log(1.1) / 52.0
        c = cs(4, 28.5, 40.0)
        return dert(P, c, delta) >= cet(P, c, 52.0), f'{dert(P, c, delta):.5g}'

    @staticmethod
    def test_dert_zero_discount():
        """δ = 0 → DomainError"""
        return raises(DomainError, dert, P, cs(1, 1.0, 10.0), 0.0)

    @staticmethod
    def test_unconditional_expectation_vs_integral():
        """E[X(t)] = r/α ∫ (β/(β+u))^s du"""
        ref, _ = integrate.quad(lambda u: (P.beta / (P.beta + u)) ** P.s, 0.0, 52.0, epsrel=1e-13)
        return close(unconditional_expectation(P, 52.0), P.r / P.alpha * ref, 1e-10)

    @staticmethod
    def test_unconditional_expectation_zero():
        """E[X(0)] = 0"""
        return unconditional_expectation(P, 0.0) == 0.0, 'OK'

    @staticmethod
    def test_pmf_sums_to_one():
        """Σ_n P(X(t)=n) ≈ 1"""
        total = float(np.sum(pmf(P, 20.0, np.arange(0, 150))))
        return abs(total - 1.0) < 1e-9, f'Σ = {total:.12f}'

    @staticmethod
    def test_pmf_vs_death_time_integral():
        """P(X(t)=n) gegen Integral über die Sterbezeit"""
        t = 39.0

        def ref(n):
            nb = lambda u: stats.nbinom.pmf(n, P.r, P.alpha / (P.alpha + u))
            mass, _ = integrate.quad(lambda u: nb(u) * P.s / (P.beta + u) * _survive(P, u), 0.0, t,
                                     epsabs=0.0, epsrel=1e-12, limit=200)
            return _survive(P, t) * nb(t) + mass

        ns = np.arange(0, 6)
        return close(pmf(P, t, ns), [ref(int(n)) for n in ns], 1e-7)

    @staticmethod
    def test_pmf_mean_matches_expectation():
        """Σ n·P(X=n) = E[X(t)]"""
        ns = np.arange(0, 150)
        mean = float(np.sum(ns * pmf(P, 20.0, ns)))
        return close(mean, unconditional_expectation(P, 20.0), 1e-6)

    @staticmethod
    def test_pmf_immortal_limit():
        """s = 10^4, μ ≈ 10^-4: PMF ≈ NBD"""
        p = PnbdParams(0.8, 4.0, 1.0e4, 1.0e8)
        ns = np.arange(0, 5)
        nbd = stats.nbinom.pmf(ns, p.r, p.alpha / (p.alpha + 10.0))
        err = float(np.max(np.abs(pmf(p, 10.0, ns) - nbd)))
        return err < 1e-3, f'max abs. Abweichung {err:.2e}'

    @staticmethod
    def test_covariates_scale_alpha_beta():
        """Kovariaten: α_i = α·exp(-γ'x) entspricht Parametern ohne Kovariaten"""
        pc = PnbdParams(0.55, 10.6, 0.61, 11.7, gamma_trans=(0.4,), gamma_life=(-0.2,),
                        names_trans=('g',), names_life=('g',))
        pe = PnbdParams(0.55, 10.6 * math.exp(-0.4), 0.61, 11.7 * math.exp(0.2))
        c = cs(3, 10.0, 20.0)
        return close(palive(pc, c, [1.0], [1.0]), palive(pe, c), 1e-13)

    @staticmethod
    def test_sarmanov_m_zero_equals_independent():
        """m = 0: Sarmanov-LL = unabhängige LL"""
        c = cs(2, 7.0, 30.0)
        return close(loglik_customer(P.replace(m=0.0), c), loglik_customer(P, c), 1e-14)

    @staticmethod
    def test_sarmanov_vs_double_integral():
        """Korrelierte LL gegen 2-D-Integral über (λ, μ)"""
        p = PnbdParams(1.2, 3.0, 0.9, 4.0, m=0.5)
        x, t_x, T = 2, 3.0, 6.0
        c1 = (p.alpha / (p.alpha + 1)) ** p.r
        c2 = (p.beta / (p.beta + 1)) ** p.s

        def integrand(mu, lam):
            lik = lam ** x * math.exp(-(lam + mu) * T) + lam ** x * mu / (lam + mu) * (
                math.exp(-(lam + mu) * t_x) - math.exp(-(lam + mu) * T))
            dens = (stats.gamma.pdf(lam, p.r, scale=1 / p.alpha) * stats.gamma.pdf(mu, p.s, scale=1 / p.beta)
                    * (1 + p.m * (math.exp(-lam) - c1) * (math.exp(-mu) - c2)))
            return lik * dens

        ref, _ = integrate.dblquad(integrand, 0, 30, 0, 40, epsabs=1e-14, epsrel=1e-10)
        model = PnbdModel(p, [x], [t_x], [T], options=ModelOptions(use_correlation=True))
        return close(model.loglik(), math.log(ref), 1e-6)

    @staticmethod
    def test_sarmanov_bounds_contain_zero():
        """Zulässiges m-Intervall enthält 0, Korrelation hat das Vorzeichen von m"""
        lo, hi = sarmanov_bounds(P)
        rho = sarmanov_correlation(P.replace(m=0.5 * hi))
        return lo < 0 < hi and rho > 0, f'[{lo:.3g}, {hi:.3g}], rho={rho:.3g}'

    @staticmethod
    def test_correlation_without_m():
        """Korrelation ohne m → CapabilityError"""
        return raises(CapabilityError, sarmanov_correlation, P)

    @staticmethod
    def test_long_lifetime_warning():
        """s ≤ 1 → Warnung"""
        return long_lifetime_warning(P) and not long_lifetime_warning(P.replace(s=1.5)), 'OK'

    @staticmethod
    def test_expected_cumulative_offsets():
        """Kumulierte Erwartung: Kunden zählen erst ab ihrem ersten Kauf"""
        model = PnbdModel(P, [0, 0], [0, 0], [10, 5])
        got = model.expected_cumulative([0.0, 5.0], [0.0, 5.0, 10.0])
        e5 = unconditional_expectation(P, 5.0)
        return close(got[1:], [e5, unconditional_expectation(P, 10.0) + e5], 1e-13)

    @staticmethod
    def test_invalid_parameters():
        """r ≤ 0 → DomainError"""
        return raises(DomainError, PnbdParams, 0.0, 1.0, 1.0, 1.0)
