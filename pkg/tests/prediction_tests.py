"""Tests für Vorhersagetabelle, Abzinsung, Neukunden und Plotdaten."""
import math

import numpy as np
import pandas as pd

from clv import pnbd
from clv.dataset import ID, ingest
from clv.exceptions import CapabilityError, DomainError, RangeError, UsageError
from clv.gamma_gamma import population_mean
from clv.prediction import (
    DiscountSpec, discount_per_unit, evaluate, new_customer, plot_pmf_data, plot_tracking_data,
    predict_table, prediction_rows, resolve_horizon, spending_density_data,
)

from . import fixtures
from .base import TestCategory, close, raises


def table(horizon=None, spending=True, **kwargs):
    fr = fixtures.pnbd_fit()
    return predict_table(fr, fixtures.sim_ds(), fixtures.gg_fit() if spending else None,
                         horizon=horizon, **kwargs)


class PredictionTests(TestCategory):
    name = 'Vorhersage'
    description = 'PAlive, CET, DERT/DECT, CLV, Neukunden, Tracking- und Häufigkeitsdaten'

    @staticmethod
    def test_discount_rates():
        """0 → 0; 10% p.a. jährlich → ln 1.1; 7.5% p.a. wöchentlich → ln(1.075)/52"""
        vals = [discount_per_unit(0.0, 'week'), discount_per_unit(0.10, 'year'),
                discount_per_unit(0.075, 'week')]
        ok = vals[0] == 0.0 and abs(vals[2] - 0.0013908) < 1e-3
        ok2, detail = close(vals[1:], [math.log(1.1), math.log(1.075) / 52.0], 1e-14)
        return ok and ok2, detail

    @staticmethod
    def test_negative_discount():
        """Negativer Zinssatz → DomainError"""
        return raises(DomainError, discount_per_unit, -0.1, 'week')

    @staticmethod
    def test_table_columns():
        """Spalten der Vorhersagetabelle mit Umsatzmodell und Holdout"""
        t = table()
        expected = [ID, 'period.first', 'period.last', 'period.length', 'PAlive', 'CET', 'DERT',
                    'predicted.mean.spending', 'predicted.period.spending', 'predicted.CLV',
                    'actual.x', 'actual.total.spending']
        return list(t.columns) == expected, list(t.columns)

    @staticmethod
    def test_clv_is_dert_times_spending():
        """CLV = DERT · erwarteter Umsatz, Periodenumsatz = CET · Umsatz"""
        t = table()
        ok1, d1 = close(t['predicted.CLV'], t['DERT'] * t['predicted.mean.spending'], 1e-14)
        ok2, _ = close(t['predicted.period.spending'], t['CET'] * t['predicted.mean.spending'], 1e-14)
        return ok1 and ok2, d1

    @staticmethod
    def test_palive_independent_of_horizon():
        """PAlive hängt nicht vom Horizont ab"""
        a, b = table(10.0, spending=False), table(95.0, spending=False)
        return np.array_equal(a['PAlive'], b['PAlive']), 'OK'

    @staticmethod
    def test_cet_matches_single_customer():
        """CET der Tabelle = pnbd.cet für einen Kunden"""
        ds = fixtures.sim_ds()
        t = table(20.0, spending=False)
        cid = t[ID].iloc[3]
        ref = pnbd.cet(fixtures.pnbd_fit().params, ds.summary_for(cid), 20.0)
        return close(t['CET'].iloc[3], ref, 1e-12)

    @staticmethod
    def test_actuals_sum_to_holdout():
        """Σ actual.x = Anzahl Holdout-Transaktionen"""
        ds = fixtures.sim_ds()
        t = table()
        n = len(ds.sample_transactions('holdout'))
        return int(t['actual.x'].sum()) == n, f'{int(t["actual.x"].sum())} vs {n}'

    @staticmethod
    def test_zero_horizon():
        """Horizont 0 → CET 0, Periodenumsatz 0"""
        t = table(0.0)
        ok = (t['CET'] == 0).all() and (t['predicted.period.spending'] == 0).all()
        return bool(ok) and (t['DERT'] > 0).all(), 'OK'

    @staticmethod
    def test_horizon_as_date():
        """Horizont als Datum: 14 Tage = 2 Wochen"""
        ds = fixtures.sim_ds()
        end = ds.estimation_end + pd.Timedelta(days=14)
        return close(resolve_horizon(ds, end), 2.0, 1e-12)

    @staticmethod
    def test_horizon_before_estimation_end():
        """Datum vor dem Schätzende → RangeError"""
        ds = fixtures.sim_ds()
        return raises(RangeError, resolve_horizon, ds, ds.estimation_end - pd.Timedelta(days=7))

    @staticmethod
    def test_horizon_required_without_holdout():
        """Kein Holdout und kein Horizont → UsageError"""
        ds = ingest(fixtures.tiny_frame(), time_unit='week')
        return raises(UsageError, resolve_horizon, ds)

    @staticmethod
    def test_zero_discount_dert():
        """DERT mit d = 0 divergiert → DomainError"""
        return raises(DomainError, table, None, False, discount=DiscountSpec(0.0))

    @staticmethod
    def test_metadata_attrs():
        """Horizont, Zeiteinheit und Zinssatz stehen in attrs"""
        t = table(spending=False, discount=DiscountSpec(0.075))
        ok = t.attrs['time_unit'] == 'week' and t.attrs['family'] == 'pnbd'
        ok2, detail = close(t.attrs['discount_per_unit'], math.log(1.075) / 52.0, 1e-14)
        return ok and ok2, detail

    @staticmethod
    def test_not_an_attrition_model():
        """Gamma-Gamma-Fit als Kaufmodell → UsageError"""
        return raises(UsageError, predict_table, fixtures.gg_fit(), fixtures.sim_ds())

    @staticmethod
    def test_prediction_rows():
        """Zeilen-Objekte mit optionalen Feldern"""
        rows = prediction_rows(table(5.0, spending=False))
        first = rows[0]
        return len(rows) == fixtures.sim_ds().n_customers and first.predicted_clv is None, str(first)

    @staticmethod
    def test_evaluate_errors():
        """Fehler (1, -1) → MAE 1, RMSE 1"""
        frame = pd.DataFrame({'CET': [1.0, 0.0], 'actual.x': [0, 1]})
        out = evaluate(frame)
        return close([out['mae'], out['rmse']], [1.0, 1.0], 1e-15)

    @staticmethod
    def test_evaluate_needs_actuals():
        """Ohne Holdout-Spalten → CapabilityError"""
        return raises(CapabilityError, evaluate, pd.DataFrame({'CET': [1.0]}))

    @staticmethod
    def test_evaluate_spending():
        """Mit Umsatzspalten werden auch deren Fehler berechnet"""
        out = evaluate(table())
        return {'mae', 'rmse', 'mae_spending', 'rmse_spending'} <= set(out), str(out)

    @staticmethod
    def test_new_customer_zero_time():
        """t = 0 → genau der erste Kauf"""
        res = new_customer(fixtures.pnbd_fit(), 0.0)
        return res.expected_transactions == 1.0 and res.expected_total is None, str(res)

    @staticmethod
    def test_new_customer_with_spending():
        """Gesamtumsatz = Transaktionen · Populationsmittel"""
        gg = fixtures.gg_fit(remove_first=False)
        res = new_customer(fixtures.pnbd_fit(), 26.0, gg)
        ref = 1.0 + pnbd.unconditional_expectation(fixtures.pnbd_fit().params, 26.0)
        ok1, detail = close(res.expected_transactions, ref, 1e-14)
        ok2, _ = close(res.expected_total, res.expected_transactions * population_mean(gg.params), 1e-14)
        return ok1 and ok2, detail

    @staticmethod
    def test_new_customer_remove_first_rejected():
        """Umsatzmodell ohne Erstkäufe → UsageError"""
        return raises(UsageError, new_customer, fixtures.pnbd_fit(), 10.0, fixtures.gg_fit())

    @staticmethod
    def test_new_customer_negative_time():
        """t < 0 → DomainError"""
        return raises(DomainError, new_customer, fixtures.pnbd_fit(), -1.0)

    @staticmethod
    def test_tracking_data():
        """Tracking: Periode 0 = 0, kumuliert monoton, erwartet ≈ tatsächlich"""
        ds = fixtures.sim_ds()
        fr = fixtures.pnbd_fit()
        inc = plot_tracking_data(fr, ds)
        cum = plot_tracking_data(fr, ds, cumulative=True)
        expected = cum['expected.pnbd'].to_numpy()
        ok = inc['expected.pnbd'].iloc[0] == 0.0 and bool(np.all(np.diff(expected) >= -1e-9))
        ok2, detail = close(expected[-1], cum["actual"].iloc[-1], 0.2)
        return ok and ok2, detail

    @staticmethod
    def test_tracking_labels():
        """Zwei Modelle derselben Familie → pnbd, pnbd.2; falsche Label-Anzahl → UsageError"""
        fr = fixtures.pnbd_fit()
        frame = plot_tracking_data([fr, fr], fixtures.tiny())
        ok = {'expected.pnbd', 'expected.pnbd.2'} <= set(frame.columns)
        ok2, _ = raises(UsageError, plot_tracking_data, [fr, fr], fixtures.tiny(), labels=['a'])
        return ok and ok2, list(frame.columns)

    @staticmethod
    def test_pmf_data_sums_to_customers():
        """Erwartete Häufigkeiten summieren sich zu N, letzter Bin ist '>=top'"""
        ds = fixtures.sim_ds()
        frame = plot_pmf_data(fixtures.pnbd_fit(), ds, trans_bins=6)
        ok = frame['num_transactions'].iloc[-1] == '>=6' and int(frame['actual'].sum()) == ds.n_customers
        ok2, detail = close(frame['expected.pnbd'].sum(), ds.n_customers, 1e-8)
        return ok and ok2, detail

    @staticmethod
    def test_pmf_data_negative_bins():
        """trans_bins < 0 → DomainError"""
        return raises(DomainError, plot_pmf_data, fixtures.pnbd_fit(), fixtures.sim_ds(), -1)

    @staticmethod
    def test_spending_density():
        """Modelldichte nichtnegativ und fast vollständig auf dem Histogrammbereich"""
        frame = spending_density_data(fixtures.gg_fit(), fixtures.sim_ds(), bins=40)
        width = frame['bin.right'] - frame['bin.left']
        mass = float((frame['model.density'] * width).sum())
        return bool((frame['model.density'] >= 0).all()) and 0.8 < mass < 1.05, f'Masse {mass:.3f}'

    @staticmethod
    def test_dynamic_prediction():
        """Zeitvariable Kovariaten: DECT-Spalte, PAlive in [0, 1]"""
        fr = fixtures.dynamic_fit()
        t = predict_table(fr, fixtures.dynamic_cov_ds(), horizon=6.0)
        ok = 'DECT' in t.columns and 'DERT' not in t.columns
        pa = t['PAlive'].to_numpy()
        return ok and bool(np.all((pa >= 0) & (pa <= 1 + 1e-12))) and (t['DECT'] <= t['CET'] + 1e-12).all(), 'OK'

    @staticmethod
    def test_dynamic_pmf_not_available():
        """Häufigkeitsverteilung mit zeitvariablen Kovariaten → CapabilityError"""
        return raises(CapabilityError, plot_pmf_data, fixtures.dynamic_fit(), fixtures.dynamic_cov_ds())
