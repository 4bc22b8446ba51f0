"""Tests für Einlesen, Aggregation, Zusammenfassung und Kovariaten."""
import numpy as np
import pandas as pd

from clv import dataset
from clv.dataset import (
    COV_DATE, ID, TimeUnit, attach_covariates, covariate_table, descriptive_series, ingest,
    parse_dates, summarize,
)
from clv.exceptions import CoverageError, CovariateError, InputError, RangeError

from . import fixtures
from .base import TestCategory, close, raises


class DatasetTests(TestCategory):
    name = 'Datensatz'
    description = 'Transaktionslog → Kundensummen (x, t_x, T), Perioden, Kovariaten'

    @staticmethod
    def test_cbs_values():
        """x, t_x, T des kleinen Logs"""
        cbs = fixtures.tiny().cbs
        got = cbs.loc[['1', '2', '3'], ['x', 't_x', 'T']].to_numpy().ravel()
        return close(got, [1, 2, 4, 0, 0, 3, 1, 3 / 7, 1], 1e-12)

    @staticmethod
    def test_same_day_merged():
        """Zwei Käufe am selben Tag → eine Transaktion mit Preissumme"""
        tx = fixtures.tiny().transactions
        first = tx[(tx[ID] == '1') & (tx[dataset.DATE] == pd.Timestamp('2020-01-06'))]
        return len(first) == 1 and first[dataset.PRICE].iloc[0] == 15.0, str(first.to_dict('records'))

    @staticmethod
    def test_holdout_first_purchase_dropped():
        """Kunde 4 (erster Kauf im Holdout) fehlt"""
        ds = fixtures.tiny()
        return '4' not in set(ds.ids), list(ds.ids)

    @staticmethod
    def test_period_boundaries():
        """Schätzende 2020-02-03, Holdout 2 Wochen"""
        ds = fixtures.tiny()
        ok = ds.estimation_end == pd.Timestamp('2020-02-03') and abs(ds.holdout_length - 2.0) < 1e-12
        return ok, f'{ds.estimation_end} / {ds.holdout_length}'

    @staticmethod
    def test_holdout_actuals_sum():
        """Σ actual.x = Anzahl Holdout-Transaktionen"""
        ds = fixtures.tiny()
        actual = ds.holdout_actuals()
        ok = int(actual['actual.x'].sum()) == len(ds.sample_transactions('holdout')) == 2
        return ok and actual.loc['1', 'actual.total.spending'] == 30.0, actual.to_dict()

    @staticmethod
    def test_mean_spending_estimation_only():
        """Mittlerer Umsatz je Kunde nur aus der Schätzperiode"""
        cbs = fixtures.tiny().cbs
        return close(cbs.loc[['1', '3'], 'mean_spending'].to_numpy(), [17.5, 8.0], 1e-12)

    @staticmethod
    def test_split_as_date():
        """Split als Datum ≡ Split als Anzahl Wochen"""
        a = ingest(fixtures.tiny_frame(), time_unit='week', estimation_split='2020-02-03')
        b = fixtures.tiny()
        return a.cbs.equals(b.cbs), 'cbs identisch'

    @staticmethod
    def test_split_too_short():
        """Split < 1 Zeiteinheit → RangeError"""
        return raises(RangeError, ingest, fixtures.tiny_frame(), estimation_split=0.5)

    @staticmethod
    def test_split_beyond_data_end():
        """Split nach Datenende → RangeError"""
        return raises(RangeError, ingest, fixtures.tiny_frame(), estimation_split=52)

    @staticmethod
    def test_data_end_extends_holdout():
        """data_end nach der letzten Transaktion verlängert den Holdout"""
        ds = ingest(fixtures.tiny_frame(), estimation_split=4, data_end='2020-03-02')
        return close(ds.holdout_length, 4.0, 1e-12)

    @staticmethod
    def test_two_year_split_with_data_end():
        """Käufe an Tag 0, 7, 14, Split nach 104 Wochen (data_end) → x = 2, t_x = 2, T = 104"""
        frame = pd.DataFrame({ID: ['a'] * 3, dataset.DATE: ['2020-01-06', '2020-01-13', '2020-01-20']})
        ds = ingest(frame, time_unit='week', estimation_split=104, data_end='2022-01-03')
        got = ds.cbs.loc['a', ['x', 't_x', 'T']].to_numpy(float)
        ok, detail = close(got, [2.0, 2.0, 104.0], 1e-12)
        return ok and ds.estimation_end == pd.Timestamp('2022-01-03'), detail

    @staticmethod
    def test_transaction_on_split_date_is_estimation():
        """Kauf genau am Schätzende zählt zur Schätzperiode, nicht zum Holdout"""
        extra = pd.DataFrame([('2', '2020-02-03', 5.0)], columns=[ID, dataset.DATE, dataset.PRICE])
        ds = ingest(pd.concat([fixtures.tiny_frame(), extra], ignore_index=True),
                    time_unit='week', estimation_split=4)
        got = ds.cbs.loc['2', ['x', 't_x', 'T']].to_numpy(float)
        ok, detail = close(got, [1.0, 3.0, 3.0], 1e-12)
        held = ds.holdout_actuals().loc['2', 'actual.x']
        return ok and ds.estimation_end == pd.Timestamp('2020-02-03') and held == 0, detail

    @staticmethod
    def test_reingest_aggregated_transactions():
        """Einlesen der aggregierten Transaktionen ergibt identische Kundensummen"""
        ds = fixtures.tiny()
        again = ds.transactions.assign(**{dataset.DATE: ds.transactions[dataset.DATE].dt.strftime('%Y-%m-%d')})
        ds2 = ingest(again, time_unit='week', estimation_split=4)
        ok = ds2.cbs.equals(ds.cbs) and ds2.transactions.equals(ds.transactions)
        return ok and ds2.estimation_end == ds.estimation_end, f'{len(ds2.transactions)} Transaktionen'

    @staticmethod
    def test_unparseable_date():
        """Ungültiges Datum → InputError mit Zeilennummer"""
        frame = fixtures.tiny_frame()
        frame.loc[2, dataset.DATE] = 'not a date'
        try:
            ingest(frame)
        except InputError as exc:
            return exc.context.get('row') == 2, str(exc)
        return False, 'kein InputError'

    @staticmethod
    def test_negative_price_rejected():
        """Negativer Preis → InputError"""
        frame = fixtures.tiny_frame()
        frame.loc[0, dataset.PRICE] = -1.0
        return raises(InputError, ingest, frame)

    @staticmethod
    def test_date_formats():
        """mdy / dmy / strftime-Muster"""
        a = parse_dates(pd.Series(['03/04/2021']), 'mdy').iloc[0]
        b = parse_dates(pd.Series(['03/04/2021']), 'dmy').iloc[0]
        c = parse_dates(pd.Series(['2021|04|03']), '%Y|%m|%d').iloc[0]
        ok = a == pd.Timestamp('2021-03-04') and b == pd.Timestamp('2021-04-03') == c
        return ok, f'{a} {b} {c}'

    @staticmethod
    def test_time_unit_conversion():
        """14 Tage = 2 Wochen = 14 Tage; Jahr = 365,25 Tage"""
        start, end = pd.Timestamp('2020-01-01'), pd.Timestamp('2020-01-15')
        vals = [TimeUnit.of('week').span(start, end), TimeUnit.of('days').span(start, end),
                TimeUnit.of('year').days]
        return close(vals, [2.0, 14.0, 365.25], 1e-12)

    @staticmethod
    def test_summary_counts():
        """Zusammenfassung: Kunden, Transaktionen, Null-Wiederkäufer"""
        report = summarize(fixtures.tiny())
        est = report['estimation']
        ok = (est['customers'] == 3 and est['transactions'] == 5 and est['zero_repeaters'] == 1
              and report['holdout']['transactions'] == 2)
        return ok, str(est)

    @staticmethod
    def test_summary_interpurchase_time():
        """Mittlere Zwischenkaufzeit der Schätzperiode"""
        est = summarize(fixtures.tiny())['estimation']
        return close(est['mean_interpurchase_time'], (2.0 + 3 / 7) / 2, 1e-12)

    @staticmethod
    def test_tracking_series():
        """Wiederholungskäufe je Woche, Periode 0 = 0, Summe = alle Wiederholungskäufe"""
        data = descriptive_series(fixtures.tiny(), 'tracking')
        ok = data['actual'].iloc[0] == 0 and int(data['actual'].sum()) == 4
        return ok, data['actual'].tolist()

    @staticmethod
    def test_frequency_series_capped():
        """Histogramm mit trans_bins=1 → Labels 0, >=1"""
        data = descriptive_series(fixtures.tiny(), 'frequency', trans_bins=1)
        ok = data['num_transactions'].tolist() == ['0', '>=1'] and data['count'].tolist() == [1, 2]
        return ok, data.to_dict('list')

    @staticmethod
    def test_timings_for_ids():
        """Zeitstrahl für ausgewählte Kunden"""
        data = descriptive_series(fixtures.tiny(), 'timings', ids=['3'])
        return close(data['t'].to_numpy(), [3.0, 3 + 3 / 7, 6.0], 1e-12)

    @staticmethod
    def test_subset_query():
        """Teilmenge per Abfrage"""
        out = dataset.subset(fixtures.tiny(), 'Price > 10')
        return len(out) == 4, f'{len(out)} Zeilen'

    @staticmethod
    def test_resample_keeps_summaries():
        """Resample mit Duplikat: (x, t_x, T) gleich der Quelle"""
        ds = fixtures.tiny()
        boot = ds.resample(['1', '1', '3'], ['1', '1#1', '3'])
        cols = ['x', 't_x', 'T']
        ok = np.array_equal(boot.cbs.loc['1#1', cols].to_numpy(float), ds.cbs.loc['1', cols].to_numpy(float))
        return ok and boot.estimation_end == ds.estimation_end, list(boot.ids)

    @staticmethod
    def test_static_covariates_categorical():
        """Kategoriale Spalte → k-1 Dummies"""
        frame = pd.DataFrame({ID: ['1', '2', '3'], 'channel': ['a', 'b', 'c']})
        table = covariate_table(frame, ['channel'])
        return table.names == ('channel.b', 'channel.c'), str(table.names)

    @staticmethod
    def test_static_covariates_missing_customer():
        """Fehlender Kunde in statischen Kovariaten → CovariateError"""
        frame = pd.DataFrame({ID: ['1', '2'], 'gender': [0.0, 1.0]})
        table = covariate_table(frame, ['gender'])
        return raises(CovariateError, attach_covariates, fixtures.tiny(), table, table)

    @staticmethod
    def test_dynamic_covariates_gap():
        """Lücke in zeitvariablen Kovariaten → CoverageError"""
        ds = fixtures.tiny()
        rows = []
        for cid, first in (('1', '2020-01-06'), ('2', '2020-01-13'), ('3', '2020-01-27')):
            dates = pd.date_range(first, '2020-02-10', freq='7D')
            rows += [(cid, d, 1.0) for d in dates]
        frame = pd.DataFrame(rows, columns=[ID, COV_DATE, 'promo'])
        frame = frame.drop(index=1)
        table = covariate_table(frame, ['promo'], mode='dynamic')
        return raises(CoverageError, attach_covariates, ds, table, table)

    @staticmethod
    def test_dynamic_covariates_attach():
        """Lückenlose Wochen ab erstem Kauf werden akzeptiert"""
        ds = fixtures.tiny()
        rows = []
        for cid, first in (('1', '2020-01-06'), ('2', '2020-01-13'), ('3', '2020-01-27')):
            for k, d in enumerate(pd.date_range(first, '2020-02-10', freq='7D')):
                rows.append((cid, d, float(k % 2)))
        frame = pd.DataFrame(rows, columns=[ID, COV_DATE, 'promo'])
        table = covariate_table(frame, ['promo'], mode='dynamic')
        out = attach_covariates(ds, table, table)
        return out.covariate_mode == 'dynamic' and np.array_equal(
            out.static_matrix('trans').ravel(), [0.0, 0.0, 0.0]), 'OK'
