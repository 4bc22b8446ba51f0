"""Tests für den Kunden-Bootstrap."""
import numpy as np

from clv.bootstrap import (
    BootstrapSpec, bootstrap_apply, ci_table, param_ci, predict_bootstrap, synthetic_ids,
    tracking_band,
)
from clv.exceptions import DomainError, InsufficientIterationsError, UsageError

from . import fixtures
from .base import TestCategory, raises

SPEC = BootstrapSpec(num_boots=4, seed=42, quantiles=(0.05, 0.95))


class BootstrapTests(TestCategory):
    name = 'Bootstrap'
    description = 'Resampling von Kunden, Neuschätzung, Quantilbänder'

    @staticmethod
    def test_synthetic_ids():
        """Wiederholte Ziehungen → '<id>#k'"""
        got = synthetic_ids(['a', 'b', 'a', 'a', 'b'])
        return got == ['a', 'b', 'a#1', 'a#2', 'b#1'], str(got)

    @staticmethod
    def test_ci_table_linear_quantiles():
        """Quantile mit linearer Interpolation über 0..10"""
        outputs = [np.array([v, 10.0 * v]) for v in range(11)]
        table = ci_table(outputs, (0.1, 0.9))
        ok = list(table.columns) == ['10%', '90%']
        return ok and np.allclose(table.to_numpy(), [[1.0, 9.0], [10.0, 90.0]]), str(table)

    @staticmethod
    def test_ci_table_named_outputs():
        """Dict-Ausgaben behalten ihre Namen als Index"""
        table = ci_table([{'r': 1.0, 'alpha': 2.0}, {'r': 3.0, 'alpha': 4.0}], (0.5,))
        return list(table.index) == ['r', 'alpha'] and table.loc['r', '50%'] == 2.0, str(table)

    @staticmethod
    def test_ci_table_needs_two():
        """Weniger als zwei Iterationen → InsufficientIterationsError"""
        return raises(InsufficientIterationsError, ci_table, [np.zeros(2)])

    @staticmethod
    def test_spec_validation():
        """num_boots < 1, absteigende Quantile, unbekannte Overrides"""
        checks = [raises(DomainError, BootstrapSpec, num_boots=0),
                  raises(DomainError, BootstrapSpec, quantiles=(0.9, 0.1)),
                  raises(DomainError, BootstrapSpec, quantiles=(0.0, 0.5)),
                  raises(UsageError, BootstrapSpec, overrides={'colour': 'red'})]
        return all(ok for ok, _ in checks), '; '.join(d for _, d in checks)

    @staticmethod
    def test_spec_config_starts_at_estimates():
        """Neuschätzung startet bei den Originalschätzern, ohne Hessematrix"""
        fr = fixtures.small_fit()
        config = BootstrapSpec(overrides={'max_evals': 50}).config(fr)
        ok = config.start == dict(zip(fr.names, map(float, fr.estimates)))
        return ok and config.compute_hessian is False and config.max_evals == 50, str(config)

    @staticmethod
    def test_identity_resample_reproduces_fit():
        """Resample = Original → Neuschätzung ≈ Originalschätzer"""
        fr = fixtures.small_fit()
        spec = BootstrapSpec(num_boots=2, seed=1)
        result = bootstrap_apply(fr, fixtures.small_ds(), spec, lambda refit, _: refit.estimates,
                                 resampler=lambda rng, ids: list(ids))
        ok = result.successes == 2 and all(np.allclose(o, fr.estimates, rtol=1e-3) for o in result.outputs)
        return ok, str(result.outputs)

    @staticmethod
    def test_resampler_must_keep_size():
        """Resampler mit falscher Länge → UsageError"""
        spec = BootstrapSpec(num_boots=1)
        return raises(UsageError, bootstrap_apply, fixtures.small_fit(), fixtures.small_ds(), spec,
                      lambda refit, _: 0.0, lambda rng, ids: list(ids)[:-1])

    @staticmethod
    def test_param_ci():
        """Parameter-Intervalle: Schätzer plus 5%/95%, Ausfälle in attrs"""
        fr = fixtures.small_fit()
        table = param_ci(fr, fixtures.small_ds(), SPEC)
        ok = list(table.columns) == ['Estimate', '5%', '95%'] and list(table.index) == list(fr.names)
        ok = ok and bool((table['5%'] <= table['95%']).all()) and table.attrs['failures'] <= 2
        return ok, str(table)

    @staticmethod
    def test_same_seed_same_result():
        """Gleicher Seed → identische Intervalle, unabhängig von Threads"""
        fr = fixtures.small_fit()
        spec = BootstrapSpec(num_boots=3, seed=7)
        a = param_ci(fr, fixtures.small_ds(), spec, threads=1)
        b = param_ci(fr, fixtures.small_ds(), spec, threads=3)
        return a.equals(b), 'OK'

    @staticmethod
    def test_predict_bootstrap_columns():
        """Vorhersage-Bänder '<Spalte>.CI.<q>' für die Originalkunden"""
        ds = fixtures.small_ds()
        table = predict_bootstrap(fixtures.small_fit(), ds, SPEC, horizon=10.0)
        needed = {'PAlive.CI.5', 'PAlive.CI.95', 'CET.CI.5', 'CET.CI.95', 'DERT.CI.5', 'DERT.CI.95'}
        ok = needed <= set(table.columns) and len(table) == ds.n_customers
        return ok and bool((table['CET.CI.5'] <= table['CET.CI.95']).all()), sorted(table.columns)

    @staticmethod
    def test_tracking_band():
        """Tracking mit Quantilband des Modells"""
        table = tracking_band(fixtures.small_fit(), fixtures.small_ds(), SPEC, cumulative=True)
        ok = {'expected.model', 'expected.model.CI.5', 'expected.model.CI.95'} <= set(table.columns)
        return ok and bool((table['expected.model.CI.5'] <= table['expected.model.CI.95']).all()), 'OK'
