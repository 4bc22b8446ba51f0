"""Transaction logs -> per-customer summaries (x, t_x, T).

Aggregation rules:
  * purchases of one customer on the same day (same second for hourly
    data) collapse into one transaction, prices summed;
  * the first transaction is clock zero of its customer and is not counted
    in x;
  * time spans are exact day (or second) counts divided by the unit length;
  * a transaction exactly at the estimation end belongs to the estimation
    period.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd

from .exceptions import (
    CapabilityError, CoverageError, CovariateError, InputError, RangeError, UsageError,
)

logger = logging.getLogger(__name__)

ID, DATE, PRICE = 'Id', 'Date', 'Price'
COV_DATE = 'Cov.Date'

SAMPLES = ('estimation', 'holdout', 'full')


@dataclass(frozen=True)
class TimeUnit:
    kind: str
    days: float
    units_per_year: float

    @classmethod
    def of(cls, kind: Union[str, 'TimeUnit']) -> 'TimeUnit':
        if isinstance(kind, TimeUnit):
            return kind
        key = str(kind).lower().rstrip('s')
        if key not in TIME_UNITS:
            raise InputError(f'unknown time unit {kind!r}', allowed=sorted(TIME_UNITS))
        return TIME_UNITS[key]

    @property
    def sub_daily(self) -> bool:
        return self.days < 1

    @property
    def delta(self) -> pd.Timedelta:
        return pd.Timedelta(days=self.days)

    def truncate(self, stamps: pd.Series) -> pd.Series:
        return stamps.dt.floor('s') if self.sub_daily else stamps.dt.normalize()

    def span(self, start, end):
        """Length of [start, end] in this unit; works on scalars and Series."""
        diff = pd.to_datetime(end) - pd.to_datetime(start)
        if isinstance(diff, pd.Series):
            seconds = diff.dt.total_seconds().to_numpy()
        elif isinstance(diff, (pd.TimedeltaIndex, np.ndarray)):
            seconds = pd.to_timedelta(diff).total_seconds().to_numpy()
        else:
            seconds = diff.total_seconds()
        return seconds / (self.days * 86400.0)

    def shift(self, start, units):
        return pd.Timestamp(start) + pd.to_timedelta(units * self.days, unit='D')


TIME_UNITS = {
    'hour': TimeUnit('hour', 1.0 / 24.0, 8760.0),
    'day': TimeUnit('day', 1.0, 365.0),
    'week': TimeUnit('week', 7.0, 52.0),
    'year': TimeUnit('year', 365.25, 1.0),
}


@dataclass(frozen=True)
class TransactionRecord:
    customer_id: str
    date: object
    price: Optional[float] = None


@dataclass(frozen=True)
class CustomerSummary:
    customer_id: str
    x: int
    t_x: float
    T: float
    first_date: pd.Timestamp
    mean_spending: Optional[float] = None


@dataclass(frozen=True)
class CovariateTable:
    """Covariates for one process.

    static: ``data`` indexed by Id, one column per name.
    dynamic: ``data`` with Id, Cov.Date and one column per name, one row per
    customer and interval start.
    """
    mode: str
    names: tuple
    data: pd.DataFrame

    def __post_init__(self):
        if self.mode not in ('static', 'dynamic'):
            raise CovariateError(f'unknown covariate mode {self.mode!r}')


@dataclass(frozen=True)
class CovariatePair:
    life: CovariateTable
    trans: CovariateTable

    @property
    def mode(self):
        return self.life.mode

    def table(self, process: str) -> CovariateTable:
        if process not in ('life', 'trans'):
            raise UsageError(f'unknown process {process!r}')
        return getattr(self, process)


# ---------------------------------------------------------------------------
# Date parsing + reading
# ---------------------------------------------------------------------------
def parse_dates(values: pd.Series, date_format: str = 'ymd') -> pd.Series:
    """Parse a column of dates; unparseable entries raise InputError naming the row."""
    values = pd.Series(values)
    if pd.api.types.is_datetime64_any_dtype(values):
        parsed = values
    elif '%' in date_format:
        parsed = pd.to_datetime(values, format=date_format, errors='coerce')
    else:
        fmt = date_format.lower()
        if fmt not in ('ymd', 'mdy', 'dmy'):
            raise InputError(f'unsupported date format {date_format!r}')
        text = values.astype(str).str.strip()
        if fmt == 'ymd':
            text = text.str.replace(r'^(\d{4})[/.](\d{1,2})[/.](\d{1,2})', r'\1-\2-\3', regex=True)
            parsed = pd.to_datetime(text, format='ISO8601', errors='coerce')
        else:
            parsed = pd.to_datetime(text, format='mixed', dayfirst=(fmt == 'dmy'), errors='coerce')
    if getattr(parsed.dt, 'tz', None) is not None:
        parsed = parsed.dt.tz_localize(None)
    bad = parsed.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise InputError('unparseable date', row=row, value=str(values.iloc[row]),
                         date_format=date_format)
    return parsed


def records_frame(records, name_id=ID, name_date=DATE, name_price=PRICE,
                  date_format='ymd') -> pd.DataFrame:
    """Normalise records (DataFrame or TransactionRecord iterable) to Id/Date/Price."""
    if isinstance(records, pd.DataFrame):
        missing = [c for c in (name_id, name_date) if c not in records.columns]
        if missing:
            raise InputError('transaction table lacks required columns', missing=missing)
        frame = pd.DataFrame({
            ID: records[name_id].astype(str).to_numpy(),
            DATE: records[name_date].to_numpy(),
        })
        if name_price and name_price in records.columns:
            frame[PRICE] = pd.to_numeric(records[name_price], errors='coerce').to_numpy()
    else:
        rows = list(records)
        frame = pd.DataFrame({
            ID: [str(r.customer_id) for r in rows],
            DATE: [r.date for r in rows],
        })
        if any(r.price is not None for r in rows):
            frame[PRICE] = [np.nan if r.price is None else float(r.price) for r in rows]
    if frame.empty:
        raise InputError('no transactions given')
    frame[DATE] = parse_dates(frame[DATE], date_format)
    if PRICE in frame.columns:
        price = frame[PRICE].to_numpy(dtype=np.float64)
        bad = ~np.isfinite(price) | (price < 0)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise InputError('price must be finite and nonnegative', row=row, value=price[row])
    return frame


def _read_csv(path, name_id):
    try:
        return pd.read_csv(path, dtype={name_id: str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise InputError(f'cannot read {path}: {exc}', path=str(path))


def read_transactions(path, name_id=ID, name_date=DATE, name_price=PRICE,
                      date_format='ymd') -> pd.DataFrame:
    raw = _read_csv(path, name_id)
    if name_price and name_price not in raw.columns:
        name_price = None
    return records_frame(raw, name_id, name_date, name_price, date_format)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ClvDataset:
    time_unit: TimeUnit
    estimation_start: pd.Timestamp
    estimation_end: pd.Timestamp
    holdout_end: Optional[pd.Timestamp]
    transactions: pd.DataFrame          # aggregated, all periods, sorted by Id/Date
    cbs: pd.DataFrame                   # indexed by Id: x, t_x, T, first_date, mean_spending
    has_prices: bool
    covariates: Optional[CovariatePair] = None
    meta: dict = field(default_factory=dict)

    # -- basic accessors --------------------------------------------------
    @property
    def ids(self) -> np.ndarray:
        return self.cbs.index.to_numpy()

    @property
    def n_customers(self) -> int:
        return len(self.cbs)

    @property
    def x(self) -> np.ndarray:
        return self.cbs['x'].to_numpy(dtype=np.float64)

    @property
    def t_x(self) -> np.ndarray:
        return self.cbs['t_x'].to_numpy(dtype=np.float64)

    @property
    def T(self) -> np.ndarray:
        return self.cbs['T'].to_numpy(dtype=np.float64)

    @property
    def estimation_length(self) -> float:
        return float(self.time_unit.span(self.estimation_start, self.estimation_end))

    @property
    def has_holdout(self) -> bool:
        return self.holdout_end is not None and self.holdout_end > self.estimation_end

    @property
    def holdout_length(self) -> float:
        if not self.has_holdout:
            return 0.0
        return float(self.time_unit.span(self.estimation_end, self.holdout_end))

    @property
    def data_end(self) -> pd.Timestamp:
        return self.holdout_end if self.has_holdout else self.estimation_end

    def customers(self) -> list:
        return [self.summary_for(cid) for cid in self.ids]

    def summary_for(self, customer_id) -> CustomerSummary:
        try:
            row = self.cbs.loc[str(customer_id)]
        except KeyError:
            raise InputError('unknown customer', customer_id=customer_id)
        spend = row['mean_spending']
        return CustomerSummary(
            customer_id=str(customer_id), x=int(row['x']), t_x=float(row['t_x']),
            T=float(row['T']), first_date=row['first_date'],
            mean_spending=None if pd.isna(spend) else float(spend),
        )

    def to_units(self, date, origin=None):
        return self.time_unit.span(self.estimation_start if origin is None else origin, date)

    def sample_transactions(self, sample: str = 'estimation') -> pd.DataFrame:
        if sample not in SAMPLES:
            raise InputError(f'unknown sample {sample!r}', allowed=SAMPLES)
        tx = self.transactions
        if sample == 'estimation':
            return tx[tx[DATE] <= self.estimation_end]
        if sample == 'holdout':
            if not self.has_holdout:
                return tx.iloc[0:0]
            return tx[(tx[DATE] > self.estimation_end) & (tx[DATE] <= self.holdout_end)]
        return tx[tx[DATE] <= self.data_end]

    def repeat_times(self, customer_id) -> np.ndarray:
        """Estimation-period repeat transaction times t_1 < ... < t_x on the customer clock."""
        tx = self.sample_transactions('estimation')
        dates = tx.loc[tx[ID] == str(customer_id), DATE]
        if dates.empty:
            raise InputError('unknown customer', customer_id=customer_id)
        times = self.time_unit.span(dates.iloc[0], dates)
        return np.asarray(times[1:], dtype=np.float64)

    def holdout_actuals(self) -> pd.DataFrame:
        """Per customer: holdout transaction count and total spend."""
        hold = self.sample_transactions('holdout')
        counts = hold.groupby(ID).size().reindex(self.cbs.index, fill_value=0)
        out = pd.DataFrame({'actual.x': counts.astype(int)}, index=self.cbs.index)
        if self.has_prices:
            spend = hold.groupby(ID)[PRICE].sum().reindex(self.cbs.index, fill_value=0.0)
            out['actual.total.spending'] = spend
        return out

    def require_prices(self):
        if not self.has_prices:
            raise CapabilityError('dataset has no price data')

    # -- covariates -------------------------------------------------------
    @property
    def covariate_mode(self) -> Optional[str]:
        return None if self.covariates is None else self.covariates.mode

    def static_matrix(self, process: str, names=None) -> np.ndarray:
        """(N, k) covariate matrix aligned to ``ids``."""
        if self.covariates is None:
            raise CapabilityError('dataset has no covariates')
        table = self.covariates.table(process)
        names = list(table.names if names is None else names)
        unknown = [n for n in names if n not in table.names]
        if unknown:
            raise CovariateError(f'unknown {process} covariates', names=unknown)
        if table.mode == 'static':
            return table.data.loc[self.cbs.index, names].to_numpy(dtype=np.float64)
        # dynamic table: the interval containing the first purchase
        first = table.data.sort_values(COV_DATE).groupby(ID).first()
        return first.loc[self.cbs.index, names].to_numpy(dtype=np.float64)

    def dynamic_rows(self, process: str, customer_id) -> pd.DataFrame:
        table = self.covariates.table(process)
        if table.mode != 'dynamic':
            raise CapabilityError('covariates are not time-varying')
        rows = table.data[table.data[ID] == str(customer_id)]
        return rows.sort_values(COV_DATE)

    # -- derived datasets -------------------------------------------------
    def resample(self, source_ids, new_ids) -> 'ClvDataset':
        """Dataset made of ``source_ids``' histories relabelled as ``new_ids``.

        Period boundaries are copied verbatim, so each customer's (x, t_x, T)
        matches its source.
        """
        source_ids = [str(i) for i in source_ids]
        new_ids = [str(i) for i in new_ids]
        groups = dict(tuple(self.transactions.groupby(ID, sort=False)))
        parts = []
        for src, new in zip(source_ids, new_ids):
            part = groups[src].copy()
            part[ID] = new
            parts.append(part)
        tx = pd.concat(parts, ignore_index=True)
        ds = ingest(
            tx, time_unit=self.time_unit,
            estimation_split=self.estimation_end if self.has_holdout else None,
            data_end=self.data_end, estimation_start=self.estimation_start,
        )
        if self.covariates is None:
            return ds
        mapping = pd.DataFrame({'src': source_ids, 'new': new_ids})

        def _relabel(table):
            if table.mode == 'static':
                data = table.data.loc[source_ids].copy()
                data.index = pd.Index(new_ids, name=ID)
            else:
                data = table.data.merge(mapping, left_on=ID, right_on='src')
                data = data.drop(columns=[ID, 'src']).rename(columns={'new': ID})
                data = data[[ID, COV_DATE, *table.names]]
            return CovariateTable(table.mode, table.names, data)

        return attach_covariates(ds, _relabel(self.covariates.life), _relabel(self.covariates.trans))


def ingest(records, date_format: str = 'ymd', time_unit='week', estimation_split=None,
           data_end=None, *, estimation_start=None, name_id=ID, name_date=DATE,
           name_price=PRICE) -> ClvDataset:
    """Aggregate a transaction log into a ClvDataset.

    ``estimation_split`` is a number of time units after the estimation
    start, a date, or None (no holdout). The data end defaults to the last
    transaction; a split beyond it raises RangeError unless ``data_end``
    extends the data (it may lie beyond the last transaction). A
    transaction dated exactly on the split belongs to the estimation period.
    """
    unit = TimeUnit.of(time_unit)
    frame = records_frame(records, name_id, name_date, name_price, date_format)
    n_raw = len(frame)
    has_prices = PRICE in frame.columns
    frame[DATE] = unit.truncate(frame[DATE])
    if has_prices:
        tx = frame.groupby([ID, DATE], as_index=False, sort=True)[PRICE].sum()
    else:
        tx = frame.drop_duplicates([ID, DATE]).sort_values([ID, DATE]).reset_index(drop=True)
    tx = tx.sort_values([ID, DATE], kind='mergesort').reset_index(drop=True)
    if len(tx) < n_raw:
        logger.debug('merged %d same-period records', n_raw - len(tx))

    first_tx = tx[DATE].min()
    last_tx = tx[DATE].max()
    start = first_tx if estimation_start is None else pd.Timestamp(estimation_start)
    if start > first_tx:
        raise RangeError('estimation start after first transaction', estimation_start=str(start))
    end = last_tx if data_end is None else pd.Timestamp(data_end)
    if end < last_tx:
        # transactions after the data end are dropped
        tx = tx[tx[DATE] <= end].reset_index(drop=True)

    if estimation_split is None:
        est_end = end
    elif isinstance(estimation_split, (int, float, np.integer, np.floating)) and not isinstance(estimation_split, bool):
        if estimation_split < 1:
            raise RangeError('estimation split must be at least one time unit',
                             estimation_split=estimation_split)
        est_end = unit.shift(start, float(estimation_split))
        if not unit.sub_daily:
            est_end = est_end.normalize()
    else:
        est_end = pd.Timestamp(parse_dates(pd.Series([estimation_split]), date_format).iloc[0])
    if est_end > end:
        raise RangeError('estimation split beyond data end', estimation_end=str(est_end),
                         data_end=str(end))
    if est_end <= start:
        raise RangeError('estimation period is empty', estimation_end=str(est_end))

    holdout_end = end if end > est_end else None
    est = tx[tx[DATE] <= est_end]
    first = tx.groupby(ID)[DATE].min()
    late = first[first > est_end]
    if len(late):
        logger.warning('dropping %d customers whose first purchase lies in the holdout', len(late))
        tx = tx[~tx[ID].isin(late.index)].reset_index(drop=True)
        est = tx[tx[DATE] <= est_end]

    grouped = est.groupby(ID)[DATE]
    first_date = grouped.min()
    last_date = grouped.max()
    cbs = pd.DataFrame({
        'x': grouped.size() - 1,
        't_x': unit.span(first_date, last_date),
        'T': unit.span(first_date, pd.Series(est_end, index=first_date.index)),
        'first_date': first_date,
    })
    cbs['mean_spending'] = est.groupby(ID)[PRICE].mean() if has_prices else np.nan
    cbs.index.name = ID
    cbs = cbs.sort_index()

    logger.info('ingested %d records -> %d transactions, %d customers (split %s)',
                n_raw, len(tx), len(cbs), est_end.date())
    return ClvDataset(
        time_unit=unit, estimation_start=start, estimation_end=est_end,
        holdout_end=holdout_end, transactions=tx, cbs=cbs, has_prices=has_prices,
    )


# ---------------------------------------------------------------------------
# Summary + descriptive series
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SummaryReport:
    columns: dict          # period name -> metrics dict

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.columns)

    def __getitem__(self, period):
        return self.columns[period]


def _period_metrics(ds: ClvDataset, tx: pd.DataFrame, start, end, sample: str) -> dict:
    per_customer = tx.groupby(ID).size()
    if sample == 'estimation':
        zero = int((ds.cbs['x'] == 0).sum())
    elif sample == 'holdout':
        zero = int(ds.n_customers - per_customer.reindex(ds.cbs.index).notna().sum())
    else:
        zero = int((per_customer.reindex(ds.cbs.index, fill_value=0) == 1).sum())
    gaps = _mean_gaps(ds, tx)
    price = tx[PRICE] if ds.has_prices else pd.Series(dtype=float)
    return {
        'period_first': start,
        'period_last': end,
        'period_length': float(ds.time_unit.span(start, end)),
        'customers': int(per_customer.size),
        'transactions': int(len(tx)),
        'mean_transactions_per_customer': float(per_customer.mean()) if len(per_customer) else np.nan,
        'sd_transactions_per_customer': float(per_customer.std()) if len(per_customer) > 1 else np.nan,
        'mean_spending_per_transaction': float(price.mean()) if len(price) else np.nan,
        'sd_spending_per_transaction': float(price.std()) if len(price) > 1 else np.nan,
        'total_spending': float(price.sum()) if ds.has_prices else np.nan,
        'zero_repeaters': zero,
        'zero_repeaters_pct': zero / ds.n_customers * 100.0,
        'mean_interpurchase_time': float(gaps.mean()) if len(gaps) else np.nan,
        'sd_interpurchase_time': float(gaps.std()) if len(gaps) > 1 else np.nan,
    }


def _mean_gaps(ds: ClvDataset, tx: pd.DataFrame) -> pd.Series:
    """Per-customer mean gap between consecutive transactions, repeat customers only."""
    if tx.empty:
        return pd.Series(dtype=float)
    t = pd.Series(ds.to_units(tx[DATE]), index=tx.index)
    gaps = t.groupby(tx[ID]).diff().dropna()
    if gaps.empty:
        return pd.Series(dtype=float)
    return gaps.groupby(tx.loc[gaps.index, ID]).mean()


def summarize(ds: ClvDataset) -> SummaryReport:
    periods = {'estimation': (ds.estimation_start, ds.estimation_end)}
    if ds.has_holdout:
        one = pd.Timedelta(seconds=1) if ds.time_unit.sub_daily else pd.Timedelta(days=1)
        periods['holdout'] = (ds.estimation_end + one, ds.holdout_end)
    periods['total'] = (ds.estimation_start, ds.data_end)
    columns = {}
    for name, (start, end) in periods.items():
        sample = 'full' if name == 'total' else name
        metrics = _period_metrics(ds, ds.sample_transactions(sample), start, end, sample)
        columns[name] = metrics
    return SummaryReport(columns)


def _sample_for(ds, sample):
    if sample == 'holdout' and not ds.has_holdout:
        return ds.sample_transactions('holdout')
    return ds.sample_transactions(sample)


def descriptive_series(ds: ClvDataset, which: str, **options) -> pd.DataFrame:
    """Plot data for the transaction log (no rendering).

    tracking: repeat transactions per period, 0 at period zero
    frequency: histogram of repeat counts (``trans_bins`` caps the tail)
    spending: per-customer mean spend or every transaction value
    interpurchasetime: per-customer mean gaps, repeat customers only
    timings: transaction times for ``ids`` or ``n`` random customers
    """
    sample = options.get('sample', 'full' if which == 'tracking' else 'estimation')
    if which == 'tracking':
        return _tracking(ds, sample, options.get('cumulative', False))
    if which == 'frequency':
        return _frequency(ds, sample, options.get('trans_bins'))
    if which == 'spending':
        ds.require_prices()
        tx = _sample_for(ds, sample)
        if options.get('mean_spending', True):
            values = tx.groupby(ID)[PRICE].mean()
            return pd.DataFrame({ID: values.index, 'spending': values.to_numpy()})
        return pd.DataFrame({ID: tx[ID].to_numpy(), 'spending': tx[PRICE].to_numpy()})
    if which == 'interpurchasetime':
        gaps = _mean_gaps(ds, _sample_for(ds, sample))
        return pd.DataFrame({ID: gaps.index.to_numpy(), 'interpurchase_time': gaps.to_numpy()})
    if which == 'timings':
        return _timings(ds, options.get('ids'), options.get('n'), options.get('seed', 0))
    raise InputError(f'unknown series {which!r}')


def period_grid(ds: ClvDataset, end=None) -> np.ndarray:
    """Period boundaries 0, 1, ..., ceil(length) in time units from the estimation start."""
    end = ds.data_end if end is None else end
    n = int(np.ceil(ds.to_units(end) - 1e-12))
    return np.arange(0, n + 1, dtype=np.float64)


def _tracking(ds, sample, cumulative):
    tx = _sample_for(ds, sample)
    # holdout transactions are all repeats; elsewhere drop each first purchase
    repeat = tx if sample == 'holdout' else tx[tx.duplicated(ID, keep='first')]
    grid = period_grid(ds)
    counts = np.zeros(grid.size, dtype=np.int64)
    if len(repeat):
        t = np.asarray(ds.to_units(repeat[DATE]), dtype=np.float64)
        bins = np.ceil(t - 1e-12).astype(np.int64)
        bins = np.clip(bins, 1, grid.size - 1)
        np.add.at(counts, bins, 1)
    actual = np.cumsum(counts) if cumulative else counts
    dates = [ds.time_unit.shift(ds.estimation_start, p) for p in grid]
    return pd.DataFrame({
        'period': grid.astype(int),
        'date': dates,
        'actual': actual,
        'estimation': grid <= ds.estimation_length + 1e-12,
    })


def _frequency(ds, sample, trans_bins):
    if sample == 'holdout':
        counts = ds.holdout_actuals()['actual.x'].to_numpy()
    elif sample == 'estimation':
        counts = ds.cbs['x'].to_numpy()
    else:
        tx = ds.sample_transactions('full')
        counts = tx.groupby(ID).size().reindex(ds.cbs.index, fill_value=1).to_numpy() - 1
    top = int(counts.max()) if trans_bins is None else int(trans_bins)
    hist = np.bincount(np.minimum(counts, top), minlength=top + 1)
    labels = [str(i) for i in range(top + 1)]
    if trans_bins is not None and counts.max() >= top:
        labels[-1] = f'>={top}'
    return pd.DataFrame({'num_transactions': labels, 'count': hist})


def _timings(ds, ids, n, seed):
    if ids is None:
        rng = np.random.default_rng(seed)
        n = ds.n_customers if n is None else min(int(n), ds.n_customers)
        ids = rng.choice(ds.ids, size=n, replace=False)
    ids = [str(i) for i in ids]
    unknown = sorted(set(ids) - set(ds.ids))
    if unknown:
        raise InputError('unknown customer ids', ids=unknown[:5])
    tx = ds.sample_transactions('full')
    tx = tx[tx[ID].isin(ids)]
    return pd.DataFrame({ID: tx[ID].to_numpy(), DATE: tx[DATE].to_numpy(),
                         't': np.asarray(ds.to_units(tx[DATE]), dtype=np.float64)})


# ---------------------------------------------------------------------------
# Subset
# ---------------------------------------------------------------------------
def subset(ds: ClvDataset, predicate: Union[str, Callable, None] = None,
           sample: str = 'full') -> pd.DataFrame:
    """Aggregated transactions of ``sample`` matching ``predicate``.

    ``predicate`` is a DataFrame.query string over Id/Date/Price or a
    callable taking the frame and returning a boolean mask.
    """
    tx = _sample_for(ds, sample)
    if predicate is None:
        return tx.reset_index(drop=True)
    try:
        if callable(predicate):
            mask = predicate(tx)
            out = tx[mask]
        else:
            out = tx.query(predicate)
    except (KeyError, NameError, pd.errors.UndefinedVariableError) as exc:
        raise InputError(f'predicate references an unknown column: {exc}')
    return out.reset_index(drop=True)


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------
def expand_categoricals(frame: pd.DataFrame, names) -> tuple:
    """Non-numeric columns become k-1 indicator columns (first sorted level dropped)."""
    out = frame.copy()
    new_names = []
    for name in names:
        if name not in out.columns:
            raise CovariateError('covariate column missing', name=name)
        col = out[name]
        if pd.api.types.is_numeric_dtype(col) and not pd.api.types.is_bool_dtype(col):
            out[name] = col.astype(np.float64)
            new_names.append(name)
            continue
        levels = sorted(col.astype(str).unique())
        for level in levels[1:]:
            dummy = f'{name}.{level}'
            out[dummy] = (col.astype(str) == level).astype(np.float64)
            new_names.append(dummy)
        out = out.drop(columns=[name])
    return out, tuple(new_names)


def covariate_table(frame: pd.DataFrame, names, mode: str = 'static', name_id: str = ID,
                    name_date: str = COV_DATE, date_format: str = 'ymd') -> CovariateTable:
    if name_id not in frame.columns:
        raise CovariateError('covariate table lacks the id column', column=name_id)
    data = frame.rename(columns={name_id: ID}).copy()
    data[ID] = data[ID].astype(str)
    data, names = expand_categoricals(data, list(names))
    if mode == 'static':
        dup = data[ID][data[ID].duplicated()]
        if len(dup):
            raise CovariateError('static covariates need one row per customer',
                                 customer_id=str(dup.iloc[0]))
        data = data.set_index(ID)[list(names)]
    else:
        if name_date not in data.columns:
            raise CovariateError('dynamic covariates need a date column', column=name_date)
        data = data.rename(columns={name_date: COV_DATE})
        data[COV_DATE] = parse_dates(data[COV_DATE], date_format)
        data = data[[ID, COV_DATE, *names]].sort_values([ID, COV_DATE]).reset_index(drop=True)
    if data[list(names)].isna().any().any():
        raise CovariateError('covariate values must not be missing')
    return CovariateTable(mode, tuple(names), data)


def read_covariates(path, names=None, mode='static', name_id=ID, name_date=COV_DATE,
                    date_format='ymd') -> CovariateTable:
    raw = _read_csv(path, name_id)
    if names is None:
        names = [c for c in raw.columns if c not in (name_id, name_date)]
    return covariate_table(raw, names, mode, name_id, name_date, date_format)


def _validate_static(ds: ClvDataset, table: CovariateTable, process: str):
    have = set(table.data.index)
    need = set(ds.ids)
    missing = sorted(need - have)
    if missing:
        raise CovariateError(f'{process} covariates missing for customers', customer_id=missing[0],
                             count=len(missing))
    extra = sorted(have - need)
    if extra:
        raise CovariateError(f'{process} covariates for unknown customer', customer_id=extra[0])


def _validate_dynamic(ds: ClvDataset, table: CovariateTable, process: str, until=None):
    until = ds.estimation_end if until is None else until
    step = ds.time_unit.delta
    known = set(ds.ids)
    extra = sorted(set(table.data[ID]) - known)
    if extra:
        raise CovariateError(f'{process} covariates for unknown customer', customer_id=extra[0])
    groups = dict(tuple(table.data.groupby(ID, sort=False)))
    for cid in ds.ids:
        rows = groups.get(cid)
        if rows is None:
            raise CoverageError(f'{process} covariates missing for customer', customer_id=cid)
        dates = rows[COV_DATE].reset_index(drop=True)
        diffs = dates.diff().iloc[1:]
        gap = diffs[diffs != step]
        if len(gap):
            pos = gap.index[0]
            raise CoverageError(f'{process} covariate intervals not contiguous', customer_id=cid,
                                interval=str(dates.iloc[pos - 1] + step))
        first_purchase = ds.cbs.at[cid, 'first_date']
        if dates.iloc[0] > first_purchase:
            raise CoverageError(f'{process} covariates start after first purchase', customer_id=cid,
                                interval=str(dates.iloc[0] - step))
        if dates.iloc[-1] + step < until:
            raise CoverageError(f'{process} covariates end too early', customer_id=cid,
                                interval=str(dates.iloc[-1] + step), required_end=str(until))


def attach_covariates(ds: ClvDataset, life: CovariateTable, trans: CovariateTable,
                      until=None) -> ClvDataset:
    """New dataset carrying validated covariate tables.

    Dynamic tables must cover every customer from the interval holding the
    first purchase through ``until`` (default: estimation end).
    """
    if life.mode != trans.mode:
        raise CovariateError('life and trans covariates must both be static or both dynamic')
    for process, table in (('life', life), ('trans', trans)):
        if table.mode == 'static':
            _validate_static(ds, table, process)
        else:
            _validate_dynamic(ds, table, process, until)
    logger.info('attached %s covariates: life=%s trans=%s', life.mode, list(life.names),
                list(trans.names))
    return dataclasses.replace(ds, covariates=CovariatePair(life=life, trans=trans))
