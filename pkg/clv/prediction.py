"""Per-customer prediction tables, holdout evaluation and plot data.

A prediction combines an attrition fit (PAlive, CET, DERT or DECT) with an
optional Gamma-Gamma fit (mean spending). Tables are pandas frames with the
column names of the CSV output, one row per customer sorted by id.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from . import conf
from .dataset import DATE, ID, PRICE, TimeUnit, descriptive_series, period_grid
from .exceptions import CapabilityError, DomainError, RangeError, UsageError
from .gamma_gamma import (
    GgParams, expected_mean_spending_vector, log_density, population_mean, spending_inputs,
)
from .pnbd import ModelOptions, PnbdModel, pmf, unconditional_expectation
from .pnbd_dynamic import DynamicPnbdModel, expected_transactions_dyn

logger = logging.getLogger(__name__)

ATTRITION_FAMILIES = ('pnbd', 'pnbd-static', 'pnbd-dynamic')


# ---------------------------------------------------------------------------
# Discounting
# ---------------------------------------------------------------------------
def discount_per_unit(d: float, unit) -> float:
    """Continuous per-unit rate equivalent to the discrete annual rate ``d``."""
    d = float(d)
    if not (np.isfinite(d) and d >= 0):
        raise DomainError('annual discount rate must be nonnegative', discount=d)
    return math.log1p(d) / TimeUnit.of(unit).units_per_year


@dataclass(frozen=True)
class DiscountSpec:
    annual_rate: Optional[float] = None      # None: settings.CLV['discount_annual']

    @property
    def annual(self) -> float:
        return float(conf.get('discount_annual') if self.annual_rate is None else self.annual_rate)

    def per_unit(self, unit) -> float:
        return discount_per_unit(self.annual, unit)


@dataclass(frozen=True)
class PredictionRow:
    customer_id: str
    period_first: pd.Timestamp
    period_last: pd.Timestamp
    period_length: float
    palive: float
    cet: float
    dert_or_dect: float
    predicted_mean_spending: Optional[float] = None
    predicted_period_spending: Optional[float] = None
    predicted_clv: Optional[float] = None
    actual_x: Optional[int] = None
    actual_total_spending: Optional[float] = None


# ---------------------------------------------------------------------------
# Fit -> model
# ---------------------------------------------------------------------------
def model_options(fit) -> ModelOptions:
    opts = fit.options or {}
    return ModelOptions(
        use_correlation=bool(opts.get('use_correlation')),
        reg_lambdas=tuple(opts['reg_lambdas']) if opts.get('reg_lambdas') else None,
        constrained_names=tuple(opts.get('constrained_names') or ()),
    )


def attrition_model(fit, ds, threads=None):
    """Bind a fitted attrition model to the customers of ``ds``."""
    if fit.family not in ATTRITION_FAMILIES:
        raise UsageError(f'{fit.family!r} is not an attrition model', family=fit.family)
    options = model_options(fit)
    if fit.family == 'pnbd-dynamic':
        # constraints are already expanded into params.gamma_life
        return DynamicPnbdModel.from_dataset(
            fit.params, ds, order=(fit.options or {}).get('quadrature_order'),
            options=ModelOptions(reg_lambdas=options.reg_lambdas), threads=threads)
    options = ModelOptions(use_correlation=options.use_correlation,
                           reg_lambdas=options.reg_lambdas)
    return PnbdModel.from_dataset(fit.params, ds, options, threads=threads)


def resolve_horizon(ds, horizon=None) -> float:
    """Prediction horizon in time units after the estimation end."""
    if horizon is None:
        if not ds.has_holdout:
            raise UsageError('a prediction horizon is required when the data has no holdout')
        return ds.holdout_length
    if isinstance(horizon, (int, float, np.integer, np.floating)) and not isinstance(horizon, bool):
        h = float(horizon)
    else:
        h = float(ds.time_unit.span(ds.estimation_end, pd.Timestamp(horizon)))
        if h < 0:
            raise RangeError('prediction end before the estimation end', horizon=str(horizon))
    if not (np.isfinite(h) and h >= 0):
        raise DomainError('prediction horizon must be nonnegative', horizon=h)
    return h


def _spending_inputs(ds, remove_first: bool):
    """(x_s, zbar) aligned to ``ds.ids``; customers without usable spend get x_s = 0."""
    ds.require_prices()
    tx = ds.sample_transactions('estimation')
    if remove_first:
        tx = tx[tx.duplicated(ID, keep='first')]
    grouped = tx.groupby(ID)[PRICE]
    x_s = grouped.size().reindex(ds.cbs.index, fill_value=0).to_numpy(dtype=np.float64)
    zbar = grouped.mean().reindex(ds.cbs.index).to_numpy(dtype=np.float64)
    unusable = ~(zbar > 0)
    x_s[unusable] = 0.0
    zbar[unusable] = 0.0
    return x_s, zbar


def _mean_spending(spending_fit, ds) -> np.ndarray:
    if spending_fit.family != 'gg':
        raise UsageError(f'{spending_fit.family!r} is not a spending model')
    remove_first = bool((spending_fit.options or {}).get('remove_first_transaction', True))
    x_s, zbar = _spending_inputs(ds, remove_first)
    return expected_mean_spending_vector(spending_fit.params, x_s, zbar)


def _actuals(ds, period_last) -> pd.DataFrame:
    hold = ds.sample_transactions('holdout')
    hold = hold[hold[DATE] <= period_last]
    out = pd.DataFrame(index=ds.cbs.index)
    out['actual.x'] = hold.groupby(ID).size().reindex(ds.cbs.index, fill_value=0).astype(int)
    if ds.has_prices:
        out['actual.total.spending'] = hold.groupby(ID)[PRICE].sum().reindex(ds.cbs.index, fill_value=0.0)
    return out


# ---------------------------------------------------------------------------
# Prediction table
# ---------------------------------------------------------------------------
def predict_table(attrition_fit, ds, spending_fit=None, horizon=None,
                  discount: Optional[DiscountSpec] = None, threads=None) -> pd.DataFrame:
    """Prediction table for every customer of ``ds``.

    ``ds`` may be a different dataset than the one the fit was estimated on;
    only the parameters are reused. ``horizon`` is a number of time units or
    a date; without it the prediction runs to the end of the holdout.
    """
    discount = discount or DiscountSpec()
    unit = ds.time_unit
    h = resolve_horizon(ds, horizon)
    delta = discount.per_unit(unit)
    dynamic = attrition_fit.family == 'pnbd-dynamic'
    model = attrition_model(attrition_fit, ds, threads)
    logger.info('predicting %d customers, horizon %.4g %ss, delta %.6g', ds.n_customers, h,
                unit.kind, delta)

    palive = np.asarray(model.palive(), dtype=np.float64)
    if dynamic:
        cet = model.cet(h)
        residual = model.dect(h, delta)
        residual_name, clv_name = 'DECT', 'predicted.period.CLV'
    else:
        cet = model.cet(h) if h > 0 else np.zeros(ds.n_customers)
        residual = model.dert(delta)
        residual_name, clv_name = 'DERT', 'predicted.CLV'

    first = ds.estimation_end + (pd.Timedelta(seconds=1) if unit.sub_daily else pd.Timedelta(days=1))
    last = unit.shift(ds.estimation_end, h)
    table = pd.DataFrame({
        ID: ds.ids,
        'period.first': first,
        'period.last': last,
        'period.length': h,
        'PAlive': palive,
        'CET': cet,
        residual_name: residual,
    })
    if spending_fit is not None:
        spend = _mean_spending(spending_fit, ds)
        table['predicted.mean.spending'] = spend
        table['predicted.period.spending'] = cet * spend
        table[clv_name] = residual * spend
    if ds.has_holdout and h <= ds.holdout_length + 1e-9:
        actuals = _actuals(ds, last)
        for column in actuals.columns:
            table[column] = actuals[column].to_numpy()
    table = table.sort_values(ID, kind='mergesort').reset_index(drop=True)
    table.attrs.update({
        'family': attrition_fit.family, 'horizon': h, 'time_unit': unit.kind,
        'discount_annual': discount.annual, 'discount_per_unit': delta,
    })
    return table


def prediction_rows(table: pd.DataFrame) -> list:
    """The table as PredictionRow objects."""
    residual = 'DECT' if 'DECT' in table.columns else 'DERT'
    clv = 'predicted.period.CLV' if 'predicted.period.CLV' in table.columns else 'predicted.CLV'

    def opt(row, column, cast=float):
        return cast(row[column]) if column in row.index else None

    return [PredictionRow(
        customer_id=str(row[ID]), period_first=row['period.first'], period_last=row['period.last'],
        period_length=float(row['period.length']), palive=float(row['PAlive']),
        cet=float(row['CET']), dert_or_dect=float(row[residual]),
        predicted_mean_spending=opt(row, 'predicted.mean.spending'),
        predicted_period_spending=opt(row, 'predicted.period.spending'),
        predicted_clv=opt(row, clv),
        actual_x=opt(row, 'actual.x', int),
        actual_total_spending=opt(row, 'actual.total.spending'),
    ) for _, row in table.iterrows()]


def _errors(predicted, actual):
    err = np.asarray(predicted, dtype=np.float64) - np.asarray(actual, dtype=np.float64)
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def evaluate(table: pd.DataFrame) -> dict:
    """MAE and RMSE of CET against holdout counts (and of period spending against actual spend)."""
    if 'actual.x' not in table.columns:
        raise CapabilityError('prediction table has no holdout actuals')
    out = {}
    out['mae'], out['rmse'] = _errors(table['CET'], table['actual.x'])
    if {'predicted.period.spending', 'actual.total.spending'} <= set(table.columns):
        out['mae_spending'], out['rmse_spending'] = _errors(
            table['predicted.period.spending'], table['actual.total.spending'])
    return out


# ---------------------------------------------------------------------------
# New customers
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class NewCustomerPrediction:
    expected_transactions: float
    expected_spend_per_order: Optional[float] = None
    expected_total: Optional[float] = None


def new_customer(attrition_fit, t: float, spending_fit=None, cov_trans=None, cov_life=None,
                 path=None) -> NewCustomerPrediction:
    """Expectations for a customer who has not purchased yet.

    Counts include the first purchase. Dynamic models need the covariate
    ``path`` on the new customer's clock.
    """
    if not t >= 0:
        raise DomainError('t must be nonnegative', t=t)
    params = attrition_fit.params
    if attrition_fit.family == 'pnbd-dynamic':
        if path is None:
            raise UsageError('a covariate path is required for the dynamic model')
        repeat = expected_transactions_dyn(params, path, t)
    elif attrition_fit.family in ATTRITION_FAMILIES:
        repeat = float(unconditional_expectation(params, t, cov_trans, cov_life)) if t > 0 else 0.0
    else:
        raise UsageError(f'{attrition_fit.family!r} is not an attrition model')
    transactions = 1.0 + repeat
    if spending_fit is None:
        return NewCustomerPrediction(transactions)
    if (spending_fit.options or {}).get('remove_first_transaction', True):
        raise UsageError('new-customer spending needs a Gamma-Gamma fit that keeps first transactions')
    spend = population_mean(spending_fit.params)
    return NewCustomerPrediction(transactions, spend, transactions * spend)


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------
def _labels(fits, labels):
    if labels is not None:
        labels = list(labels)
        if len(labels) != len(fits):
            raise UsageError('one label per model is required', models=len(fits), labels=len(labels))
        return labels
    out, seen = [], {}
    for fr in fits:
        seen[fr.family] = seen.get(fr.family, 0) + 1
        out.append(fr.family if seen[fr.family] == 1 else f'{fr.family}.{seen[fr.family]}')
    return out


def plot_tracking_data(fits, ds, cumulative: bool = False, labels=None, threads=None) -> pd.DataFrame:
    """Actual repeat transactions per period with one expected column per model.

    Expected values are sums over customers of the unconditional expectation,
    each customer starting at their first purchase. Period 0 is 0 by definition.
    """
    fits = list(fits) if isinstance(fits, (list, tuple)) else [fits]
    frame = descriptive_series(ds, 'tracking', cumulative=cumulative, sample='full')
    grid = period_grid(ds)
    offsets = np.asarray(ds.to_units(ds.cbs['first_date']), dtype=np.float64)
    for fr, label in zip(fits, _labels(fits, labels)):
        model = attrition_model(fr, ds, threads)
        total = model.expected_cumulative(offsets, grid)
        frame[f'expected.{label}'] = total if cumulative else np.diff(total, prepend=0.0)
    return frame


def _pmf_expected(fit, ds, top: int, threads=None) -> np.ndarray:
    """Expected number of customers with 0..top-1 and >= top repeat purchases by T_i."""
    if fit.family == 'pnbd-dynamic':
        raise CapabilityError('the count distribution is not available for time-varying covariates')
    model = attrition_model(fit, ds, threads)
    alpha, beta = model.scales()
    base = model.params.replace(gamma_trans=(), gamma_life=(), names_trans=(), names_life=(),
                                m=model.m)
    cells = pd.DataFrame({'T': np.round(ds.T, 9), 'alpha': alpha, 'beta': beta})
    expected = np.zeros(top + 1)
    for (T, a, b), group in cells.groupby(['T', 'alpha', 'beta'], sort=True):
        probs = pmf(base.replace(alpha=a, beta=b), T, np.arange(top)) if top else np.zeros(0)
        tail = max(0.0, 1.0 - float(np.sum(probs)))
        expected += len(group) * np.append(probs, tail)
    return expected


def plot_pmf_data(fits, ds, trans_bins: Optional[int] = None, labels=None, threads=None) -> pd.DataFrame:
    """Customers by number of estimation-period repeat purchases, actual and expected.

    The last bin collects the tail, so every expected column sums to N.
    """
    fits = list(fits) if isinstance(fits, (list, tuple)) else [fits]
    top = int(ds.cbs['x'].max()) if trans_bins is None else int(trans_bins)
    if top < 0:
        raise DomainError('trans_bins must be nonnegative', trans_bins=top)
    frame = descriptive_series(ds, 'frequency', sample='estimation', trans_bins=top)
    frame = frame.rename(columns={'count': 'actual'})
    frame.loc[frame.index[-1], 'num_transactions'] = f'>={top}'
    for fr, label in zip(fits, _labels(fits, labels)):
        frame[f'expected.{label}'] = _pmf_expected(fr, ds, top, threads)
    return frame


def spending_density_data(spending_fit, ds, bins: int = 30) -> pd.DataFrame:
    """Histogram of per-customer mean spend against the fitted density.

    The model density is averaged over the customers' own transaction counts.
    """
    if spending_fit.family != 'gg':
        raise UsageError(f'{spending_fit.family!r} is not a spending model')
    params: GgParams = spending_fit.params
    remove_first = bool((spending_fit.options or {}).get('remove_first_transaction', True))
    obs = spending_inputs(ds, remove_first)
    if not obs:
        raise CapabilityError('no customers with spending observations')
    x_s = np.array([o.x_s for o in obs], dtype=np.float64)
    zbar = np.array([o.zbar for o in obs], dtype=np.float64)
    density, edges = np.histogram(zbar, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    model = np.exp(log_density(params, x_s[None, :], centers[:, None])).mean(axis=1)
    return pd.DataFrame({
        'spending': centers, 'bin.left': edges[:-1], 'bin.right': edges[1:],
        'empirical.density': density, 'model.density': model,
    })
