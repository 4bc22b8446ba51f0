"""Pareto/NBD with piecewise-constant, time-varying covariates.

Covariates live on a grid of one-time-unit intervals, left-closed and
right-open. Given the base rates (lambda0, mu0) the likelihood of a
customer history has a closed form in the covariate-weighted elapsed times

    Lambda(s1, s2) = int_{s1}^{s2} exp(gamma_trans'x(u)) du
    M(w)           = int_0^w exp(gamma_life'x(u)) du

and the two Gamma mixing integrals are done numerically with a product
Gauss-Laguerre rule whose generalised weights absorb the Gamma shapes.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from . import conf, workers
from .dataset import COV_DATE, DATE, ID, TimeUnit
from .estimation import PnbdLikelihood
from .exceptions import CapabilityError, CoverageError, CovariateError, DomainError, NumericalError
from .pnbd import ModelOptions, PnbdParams, _log_power_gap
from .special_functions import MAX_QUADRATURE_ORDER, gamma_nodes

logger = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass(frozen=True)
class CovariatePath:
    """Covariate values of one customer, interval k spanning
    [offset + k*interval_length, offset + (k+1)*interval_length) on the customer clock.
    """
    offset: float
    values_trans: np.ndarray
    values_life: np.ndarray
    interval_length: float = 1.0
    origin: Optional[object] = None          # calendar date of clock zero
    time_unit: Optional[TimeUnit] = None

    def __post_init__(self):
        trans = np.atleast_2d(np.asarray(self.values_trans, dtype=np.float64))
        life = np.atleast_2d(np.asarray(self.values_life, dtype=np.float64))
        if trans.shape[0] != life.shape[0] or trans.shape[0] == 0:
            raise CovariateError('trans and life paths need the same non-empty interval grid',
                                 trans=trans.shape[0], life=life.shape[0])
        if self.offset > _EPS:
            raise CoverageError('covariate path starts after clock zero', offset=self.offset)
        object.__setattr__(self, 'values_trans', trans)
        object.__setattr__(self, 'values_life', life)

    @classmethod
    def constant(cls, trans, life, until: float, interval_length: float = 1.0) -> 'CovariatePath':
        n = max(1, int(math.ceil(until / interval_length - _EPS)))
        return cls(0.0, np.tile(np.atleast_1d(trans), (n, 1)), np.tile(np.atleast_1d(life), (n, 1)),
                   interval_length)

    @property
    def n_intervals(self) -> int:
        return self.values_trans.shape[0]

    @property
    def end(self) -> float:
        return self.offset + self.n_intervals * self.interval_length

    @property
    def edges(self) -> np.ndarray:
        return self.offset + self.interval_length * np.arange(self.n_intervals + 1)

    def refine(self, factor: int) -> 'CovariatePath':
        """Same path on a grid ``factor`` times finer."""
        return dataclasses.replace(
            self, values_trans=np.repeat(self.values_trans, factor, axis=0),
            values_life=np.repeat(self.values_life, factor, axis=0),
            interval_length=self.interval_length / factor)

    def require(self, until: float):
        if until > self.end + _EPS:
            required = until
            if self.origin is not None and self.time_unit is not None:
                required = str(self.time_unit.shift(self.origin, until).date())
            raise CoverageError('covariates do not cover the required period',
                                required_end=required, covered_until=self.end)

    def index_at(self, t) -> np.ndarray:
        k = np.floor((np.asarray(t, dtype=np.float64) - self.offset) / self.interval_length + _EPS)
        return np.clip(k.astype(np.int64), 0, self.n_intervals - 1)

    def rates(self, gamma, process: str) -> np.ndarray:
        values = self.values_trans if process == 'trans' else self.values_life
        gamma = np.asarray(gamma, dtype=np.float64)
        if values.shape[1] != gamma.size:
            raise CovariateError(f'{process} coefficients do not match the covariate path',
                                 expected=values.shape[1], got=gamma.size)
        return np.exp(values @ gamma) if gamma.size else np.ones(self.n_intervals)

    def cumulative(self, rates, points) -> np.ndarray:
        """int_0^p rate(u) du for each point p."""
        edges = self.edges
        at_edges = np.concatenate([[0.0], np.cumsum(rates * self.interval_length)])

        def from_offset(p):
            k = self.index_at(p)
            return at_edges[k] + rates[k] * (p - edges[k])

        points = np.asarray(points, dtype=np.float64)
        return from_offset(points) - from_offset(np.zeros(1))[0]

    def pieces(self, start: float, end: float):
        """Split (start, end] at interval edges: (piece starts, lengths, interval indices)."""
        inner = self.edges[(self.edges > start + _EPS) & (self.edges < end - _EPS)]
        cuts = np.concatenate([[start], inner, [end]])
        lengths = np.diff(cuts)
        keep = lengths > 0
        starts = cuts[:-1][keep]
        return starts, lengths[keep], self.index_at(starts)


@dataclass(frozen=True)
class TransactionTimes:
    t: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.t, dtype=np.float64))
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0):
            raise DomainError('transaction times must be positive and strictly increasing')
        object.__setattr__(self, 't', t)

    @property
    def x(self) -> int:
        return int(self.t.size)

    @property
    def t_x(self) -> float:
        return float(self.t[-1]) if self.t.size else 0.0


def _check_range(path, s1, s2):
    if s1 > s2:
        raise DomainError('interval start after end', s1=s1, s2=s2)
    if s1 < -_EPS or s1 < path.offset - _EPS:
        raise CoverageError('interval starts before covariate coverage', s1=s1)
    path.require(s2)


def capital_lambda(path: CovariatePath, gamma_trans, s1: float, s2: float) -> float:
    """Covariate-weighted elapsed time of the purchase process over [s1, s2]."""
    _check_range(path, s1, s2)
    cum = path.cumulative(path.rates(gamma_trans, 'trans'), [s1, s2])
    return float(cum[1] - cum[0])


def capital_m(path: CovariatePath, gamma_life, omega: float) -> float:
    """Covariate-weighted elapsed time of the attrition process over [0, omega]."""
    _check_range(path, 0.0, omega)
    return float(path.cumulative(path.rates(gamma_life, 'life'), [omega])[0])


# ---------------------------------------------------------------------------
# Per-customer machinery
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DynamicCustomer:
    customer_id: str
    T: float
    path: CovariatePath
    times: TransactionTimes
    first_date: Optional[object] = None

    @property
    def x(self) -> int:
        return self.times.x

    @property
    def t_x(self) -> float:
        return self.times.t_x


@dataclass
class _Posterior:
    """Quadrature representation of one customer's (lambda0, mu0) posterior."""
    log_const: float
    lam: np.ndarray            # (n, 1)
    mu: np.ndarray             # (1, n)
    weights: np.ndarray        # (n, n), sums to 1 over the prior-times-purchase part
    alive: np.ndarray          # (n, n)
    total: np.ndarray          # alive + death terms
    mu_T: float = 0.0          # M(T)
    rates_trans: np.ndarray = field(default=None)
    rates_life: np.ndarray = field(default=None)

    @property
    def loglik(self) -> float:
        mass = float(np.sum(self.weights * self.total))
        if not mass > 0:
            raise NumericalError('quadrature mass not positive')
        return self.log_const + math.log(mass)

    def expectation(self, values) -> float:
        """Posterior mean of ``values`` (alive-weighted)."""
        return float(np.sum(self.weights * self.alive * values) / np.sum(self.weights * self.total))


def _nodes(shape, rate, order):
    nodes, log_w = gamma_nodes(shape, rate, order)
    if np.any(np.isnan(log_w)) or np.any(np.isposinf(log_w)):
        raise NumericalError('quadrature weights overflow', shape=shape, order=order)
    return nodes, np.exp(log_w)


def _posterior(p: PnbdParams, cust: DynamicCustomer, order: int) -> _Posterior:
    path = cust.path
    path.require(cust.T)
    a = path.rates(p.gamma_trans, 'trans')
    b = path.rates(p.gamma_life, 'life')
    t_x, T, x = cust.t_x, cust.T, cust.x
    lam_x, lam_T = path.cumulative(a, [t_x, T])
    m_x, m_T = path.cumulative(b, [t_x, T])

    log_const = (float(np.sum(np.log(a[path.index_at(cust.times.t)]))) if x else 0.0)
    log_const += (special.gammaln(p.r + x) - special.gammaln(p.r) + p.r * math.log(p.alpha)
                  - (p.r + x) * math.log(p.alpha + lam_x) + p.s * math.log(p.beta)
                  - p.s * math.log(p.beta + m_x))

    lam, w_lam = _nodes(p.r + x, p.alpha + lam_x, order)
    mu, w_mu = _nodes(p.s, p.beta + m_x, order)
    lam = lam[:, None]
    mu = mu[None, :]
    weights = w_lam[:, None] * w_mu[None, :]
    alive = np.exp(-lam * (lam_T - lam_x) - mu * (m_T - m_x))

    death = np.zeros_like(alive)
    starts, lengths, idx = path.pieces(t_x, T)
    if starts.size:
        lam_1 = path.cumulative(a, starts) - lam_x
        m_1 = path.cumulative(b, starts) - m_x
        L = lam[..., None]
        U = mu[..., None]
        rate = L * a[idx] + U * b[idx]
        death = np.sum(U * b[idx] * np.exp(-L * lam_1 - U * m_1) * (-np.expm1(-rate * lengths)) / rate,
                       axis=-1)
    return _Posterior(log_const=float(log_const), lam=lam, mu=mu, weights=weights, alive=alive,
                      total=alive + death, mu_T=float(m_T), rates_trans=a, rates_life=b)


def _future_intensity(post: _Posterior, cust: DynamicCustomer, horizon: float, delta: float):
    """int_T^{T+h} lambda(u) P(alive at u | alive at T) e^{-delta(u-T)} du on the node grid."""
    path, T = cust.path, cust.T
    path.require(T + horizon)
    starts, lengths, idx = path.pieces(T, T + horizon)
    if not starts.size:
        return np.zeros_like(post.alive)
    a, b = post.rates_trans, post.rates_life
    m_1 = path.cumulative(b, starts) - post.mu_T
    L = post.lam[..., None]
    U = post.mu[..., None]
    rate = U * b[idx] + delta
    part = L * a[idx] * np.exp(-U * m_1 - delta * (starts - T)) * (-np.expm1(-rate * lengths)) / rate
    return np.sum(part, axis=-1)


def escalation_orders(order: Optional[int] = None) -> list:
    if order is None:
        return [int(o) for o in conf.get('quadrature_orders')]
    return sorted({min(int(order) * f, MAX_QUADRATURE_ORDER) for f in (1, 2, 4)})


def _escalate(evaluate, orders, what):
    """Evaluate at increasing orders until two consecutive values agree.

    Returns the finer value and the coarser order, which is already adequate.
    """
    tol = conf.get('quadrature_tol')
    previous, previous_order = evaluate(orders[0]), orders[0]
    for order in orders[1:]:
        current = evaluate(order)
        if abs(current - previous) <= tol * max(abs(current), 1e-300):
            return current, previous_order
        logger.warning('%s not stable at order %d (%.3g vs %.3g), escalating', what,
                       previous_order, previous, current)
        previous, previous_order = current, order
    raise NumericalError(f'{what}: quadrature did not stabilise', orders=orders)


def _customer(cs, path, times) -> DynamicCustomer:
    times = times if isinstance(times, TransactionTimes) else TransactionTimes(times)
    if times.x != int(cs.x) or abs(times.t_x - cs.t_x) > 1e-9:
        raise DomainError('transaction times do not match the customer summary',
                          x=cs.x, t_x=cs.t_x)
    if times.t_x > cs.T + _EPS:
        raise DomainError('last transaction after T', t_x=times.t_x, T=cs.T)
    return DynamicCustomer(getattr(cs, 'customer_id', '0'), float(cs.T), path, times)


def loglik_customer_dyn(params: PnbdParams, cs, path: CovariatePath, times,
                        order: Optional[int] = None) -> float:
    """Marginal log-likelihood of one customer; without ``order`` the rule is refined until stable."""
    cust = _customer(cs, path, times)
    if order is not None:
        return _posterior(params, cust, order).loglik
    value, _ = _escalate(lambda o: _posterior(params, cust, o).loglik, escalation_orders(),
                         f'log-likelihood of customer {cust.customer_id}')
    return value


def palive_dyn(params: PnbdParams, cs, path, times, order: Optional[int] = None) -> float:
    cust = _customer(cs, path, times)
    post = _posterior(params, cust, order or conf.get('quadrature_order'))
    return post.expectation(1.0)


def dect(params: PnbdParams, cs, path: CovariatePath, times, horizon: float,
         delta: float = 0.0, order: Optional[int] = None) -> float:
    """Expected (discounted) transactions in (T, T + horizon]."""
    if horizon < 0:
        raise DomainError('horizon must be nonnegative', horizon=horizon)
    if delta < 0:
        raise DomainError('discount rate must be nonnegative', delta=delta)
    cust = _customer(cs, path, times)
    cust.path.require(cust.T + horizon)
    if horizon == 0:
        return 0.0

    def evaluate(o):
        post = _posterior(params, cust, o)
        return post.expectation(_future_intensity(post, cust, horizon, delta))

    if order is not None:
        return evaluate(order)
    value, _ = _escalate(evaluate, escalation_orders(), f'DECT of customer {cust.customer_id}')
    return value


def cet_dyn(params: PnbdParams, cs, path, times, horizon: float, order: Optional[int] = None) -> float:
    return dect(params, cs, path, times, horizon, 0.0, order)


def expected_transactions_dyn(params: PnbdParams, path: CovariatePath, t: float) -> float:
    """Unconditional E[X(t)] on a customer's own clock.

    E[lambda0] int_0^t a(u) E[exp(-mu0 M(u))] du, in closed form per interval.
    """
    if t <= 0:
        return 0.0
    path.require(t)
    a = path.rates(params.gamma_trans, 'trans')
    b = path.rates(params.gamma_life, 'life')
    starts, lengths, idx = path.pieces(0.0, t)
    base = params.beta + path.cumulative(b, starts)
    log_q = np.log(base) - np.log(base + b[idx] * lengths)
    gap = np.exp(_log_power_gap(log_q, params.s - 1.0))
    pieces = a[idx] / b[idx] * params.beta ** params.s * base ** (1.0 - params.s) * gap
    return float(params.r / params.alpha * np.sum(pieces))


# ---------------------------------------------------------------------------
# Dataset binding
# ---------------------------------------------------------------------------
def _path_from_rows(rows_trans, rows_life, names_trans, names_life, first_date, unit):
    dates_t = rows_trans[COV_DATE].to_numpy()
    dates_l = rows_life[COV_DATE].to_numpy()
    if len(dates_t) != len(dates_l) or np.any(dates_t != dates_l):
        raise CovariateError('trans and life covariates must share interval dates')
    offset = float(unit.span(first_date, rows_trans[COV_DATE].iloc[0]))
    return CovariatePath(
        offset=offset,
        values_trans=rows_trans[list(names_trans)].to_numpy(dtype=np.float64).reshape(len(dates_t), -1),
        values_life=rows_life[list(names_life)].to_numpy(dtype=np.float64).reshape(len(dates_l), -1),
        interval_length=1.0, origin=first_date, time_unit=unit,
    )


def build_customers(ds, names_trans=None, names_life=None) -> list:
    """DynamicCustomer objects for every customer of a dataset with dynamic covariates."""
    if ds.covariate_mode != 'dynamic':
        raise CapabilityError('dataset has no time-varying covariates')
    cov = ds.covariates
    names_trans = cov.trans.names if names_trans is None else tuple(names_trans)
    names_life = cov.life.names if names_life is None else tuple(names_life)
    unknown = [n for n in names_trans if n not in cov.trans.names] + \
              [n for n in names_life if n not in cov.life.names]
    if unknown:
        raise CovariateError('unknown covariates', names=unknown)
    trans_groups = dict(tuple(cov.trans.data.groupby(ID, sort=False)))
    life_groups = dict(tuple(cov.life.data.groupby(ID, sort=False)))
    est = ds.sample_transactions('estimation')
    histories = dict(tuple(est.groupby(ID, sort=False)[DATE]))
    unit = ds.time_unit
    out = []
    for cid in ds.ids:
        row = ds.cbs.loc[cid]
        dates = histories[cid]
        times = np.asarray(unit.span(dates.iloc[0], dates), dtype=np.float64)[1:]
        path = _path_from_rows(trans_groups[cid].sort_values(COV_DATE),
                               life_groups[cid].sort_values(COV_DATE),
                               names_trans, names_life, row['first_date'], unit)
        out.append(DynamicCustomer(cid, float(row['T']), path, TransactionTimes(times),
                                   row['first_date']))
    return out


class DynamicPnbdModel:
    """Fitted or candidate parameters bound to a list of DynamicCustomer."""

    def __init__(self, params: PnbdParams, customers, order: Optional[int] = None,
                 options: Optional[ModelOptions] = None, threads=None):
        if params.m is not None:
            raise CapabilityError('correlation is not available with time-varying covariates')
        self.params = params
        self.customers = list(customers)
        self.order = int(order or conf.get('quadrature_order'))
        self.options = options or ModelOptions()
        self.threads = threads

    @classmethod
    def from_dataset(cls, params, ds, order=None, options=None, threads=None):
        return cls(params, build_customers(ds, params.names_trans, params.names_life), order,
                   options, threads)

    @property
    def ids(self) -> np.ndarray:
        return np.array([c.customer_id for c in self.customers])

    def _map(self, fn) -> np.ndarray:
        return np.array(workers.map_items(fn, self.customers, self.threads), dtype=np.float64)

    def loglik_vector(self, order: Optional[int] = None) -> np.ndarray:
        order = order or self.order
        ll = self._map(lambda c: _posterior(self.params, c, order).loglik)
        bad = ~np.isfinite(ll)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise NumericalError('non-finite log-likelihood', customer_id=self.customers[k].customer_id)
        return ll

    def loglik(self, order: Optional[int] = None) -> float:
        return math.fsum(self.loglik_vector(order)) - self.options.penalty(self.params)

    def palive(self) -> np.ndarray:
        return self._map(lambda c: _posterior(self.params, c, self.order).expectation(1.0))

    def dect(self, horizon: float, delta: float = 0.0) -> np.ndarray:
        if horizon < 0:
            raise DomainError('horizon must be nonnegative', horizon=horizon)

        def one(c):
            c.path.require(c.T + horizon)
            if horizon == 0:
                return 0.0
            post = _posterior(self.params, c, self.order)
            return post.expectation(_future_intensity(post, c, horizon, delta))

        return self._map(one)

    def cet(self, horizon: float) -> np.ndarray:
        return self.dect(horizon, 0.0)

    def expected_cumulative(self, offsets, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.float64)
        total = np.zeros(grid.size)
        for cust, t0 in zip(self.customers, np.asarray(offsets, dtype=np.float64)):
            for g_idx, g in enumerate(grid):
                if g > t0:
                    total[g_idx] += expected_transactions_dyn(self.params, cust.path, g - t0)
        return total


class DynamicPnbdLikelihood(PnbdLikelihood):
    family = 'pnbd-dynamic'
    default_method = 'Nelder-Mead'
    hessian_by_default = False

    def __init__(self, ds, options: ModelOptions = None, names_trans=None, names_life=None,
                 order: Optional[int] = None, threads=None):
        options = options or ModelOptions()
        if options.use_correlation:
            raise CapabilityError('correlation is not available with time-varying covariates')
        if ds.covariate_mode != 'dynamic':
            raise CapabilityError('dataset has no time-varying covariates')
        names_trans = ds.covariates.trans.names if names_trans is None else tuple(names_trans)
        names_life = ds.covariates.life.names if names_life is None else tuple(names_life)
        super().__init__(ds, options, names_trans, names_life, threads)
        self.family = 'pnbd-dynamic'
        self.order = int(order or conf.get('quadrature_order'))
        self.customers = build_customers(ds, names_trans, names_life)

    def _model(self, theta) -> DynamicPnbdModel:
        return DynamicPnbdModel(self.build(theta), self.customers, self.order, self._eval_options,
                                self.threads)

    def loglik(self, theta) -> float:
        return self._model(theta).loglik()

    def prepare(self, theta, stage):
        model = self._model(theta)
        orders = [o for o in escalation_orders(self.order) if o >= self.order]
        try:
            _, order = _escalate(model.loglik, orders, 'total log-likelihood')
        except NumericalError:
            if stage == 'end':
                raise
            logger.warning('quadrature unstable at the start values; continuing at order %d',
                           orders[-1])
            order = orders[-1]
        if order != self.order:
            logger.warning('quadrature order raised from %d to %d', self.order, order)
            self.order = order

    def options(self) -> dict:
        out = super().options()
        out['quadrature_order'] = self.order
        return out


@dataclass(frozen=True)
class DynamicPnbdSpec:
    options: ModelOptions = field(default_factory=ModelOptions)
    names_trans: Optional[tuple] = None
    names_life: Optional[tuple] = None
    order: Optional[int] = None

    def bind(self, ds, threads=None) -> DynamicPnbdLikelihood:
        return DynamicPnbdLikelihood(ds, self.options, self.names_trans, self.names_life,
                                     self.order, threads)
