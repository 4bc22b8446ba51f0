"""Generative samplers for the Pareto/NBD and Gamma-Gamma models.

Customers are simulated in blocks of ``BLOCK`` with one numpy Generator per
block, seeded from (seed, block index). Output therefore does not depend on
the number of worker threads.

Time-varying covariates are handled by inverting the cumulative
(covariate-weighted) clocks, which is exact for piecewise-constant rates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from . import conf, workers
from .dataset import (
    COV_DATE, DATE, ID, PRICE, CovariatePair, CovariateTable, TimeUnit, attach_covariates, ingest,
)
from .exceptions import DomainError, ScenarioError
from .gamma_gamma import GgParams
from .pnbd import PnbdParams, _customer_scales, sarmanov_bounds
from .pnbd_dynamic import (
    CovariatePath, DynamicCustomer, TransactionTimes, _posterior, escalation_orders,
)

logger = logging.getLogger(__name__)

BLOCK = 256
DISTRIBUTIONS = ('bernoulli', 'normal', 'seasonal')

# stream keys: one SeedSequence branch per kind of randomness
_RATES, _SPEND, _COVARIATES, _COHORT = 0, 1, 2, 3


@dataclass(frozen=True)
class CovariateSpec:
    """Covariates shared by both processes.

    bernoulli: iid 0/1 with ``prob``; normal: iid standard normal;
    seasonal (dynamic only): the same 0/1 calendar pattern for every
    customer, switching every ``period`` intervals.
    """
    mode: str = 'static'
    names: tuple = ('x1',)
    distribution: str = 'bernoulli'
    prob: float = 0.5
    period: int = 13

    def __post_init__(self):
        object.__setattr__(self, 'names', tuple(self.names))
        if self.mode not in ('static', 'dynamic'):
            raise ScenarioError(f'unknown covariate mode {self.mode!r}')
        if self.distribution not in DISTRIBUTIONS:
            raise ScenarioError(f'unknown covariate distribution {self.distribution!r}',
                                allowed=DISTRIBUTIONS)
        if self.distribution == 'seasonal' and self.mode != 'dynamic':
            raise ScenarioError('seasonal covariates must be dynamic')
        if not self.names:
            raise ScenarioError('covariate spec needs at least one name')

    def draw(self, rng, shape, first_interval=0) -> np.ndarray:
        if self.distribution == 'bernoulli':
            return (rng.uniform(size=shape) < self.prob).astype(np.float64)
        if self.distribution == 'normal':
            return rng.standard_normal(size=shape)
        k = first_interval + np.arange(shape[0])
        column = ((k // max(1, int(self.period))) % 2).astype(np.float64)
        return np.tile(column[:, None], (1, shape[1]))


@dataclass(frozen=True)
class SimScenario:
    n_customers: int
    seed: int
    params: Optional[PnbdParams] = None
    gg_params: Optional[GgParams] = None
    estimation_length: float = 104.0
    holdout_length: float = 0.0
    time_unit: str = 'week'
    start_date: str = '2020-01-06'
    cohort_length: float = 0.0             # first purchases uniform over [0, cohort_length)
    covariates: Optional[CovariateSpec] = None

    def __post_init__(self):
        if self.seed is None or int(self.seed) != self.seed:
            raise ScenarioError('an integer seed is required')
        if int(self.n_customers) < 1:
            raise ScenarioError('n_customers must be positive', n_customers=self.n_customers)
        if not self.estimation_length > 0 or self.holdout_length < 0:
            raise ScenarioError('estimation length must be positive and holdout nonnegative',
                                estimation_length=self.estimation_length,
                                holdout_length=self.holdout_length)
        if not 0 <= self.cohort_length < self.estimation_length:
            raise ScenarioError('cohort must start inside the estimation period',
                                cohort_length=self.cohort_length)
        TimeUnit.of(self.time_unit)
        p = self.params
        if p is not None and self.covariates is not None:
            k = len(self.covariates.names)
            if len(p.gamma_trans) != k or len(p.gamma_life) != k:
                raise ScenarioError('coefficients must match the covariate names',
                                    names=self.covariates.names)
        elif p is not None and p.has_covariates:
            raise ScenarioError('covariate coefficients given without a covariate spec')
        if p is not None and p.m is not None and self.covariates is not None \
                and self.covariates.mode == 'dynamic':
            raise ScenarioError('correlated rates are not available with time-varying covariates')

    @property
    def unit(self) -> TimeUnit:
        return TimeUnit.of(self.time_unit)

    @property
    def total_length(self) -> float:
        return self.estimation_length + self.holdout_length

    @property
    def start(self) -> pd.Timestamp:
        return pd.Timestamp(self.start_date).normalize()

    @property
    def ids(self) -> list:
        width = len(str(self.n_customers))
        return [f'{i + 1:0{width}d}' for i in range(int(self.n_customers))]

    @classmethod
    def from_dict(cls, doc: dict) -> 'SimScenario':
        doc = dict(doc)
        if doc.get('params') is not None:
            doc['params'] = PnbdParams(**doc['params'])
        if doc.get('gg_params') is not None:
            doc['gg_params'] = GgParams(**doc['gg_params'])
        if doc.get('covariates') is not None:
            doc['covariates'] = CovariateSpec(**doc['covariates'])
        unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
        if unknown:
            raise ScenarioError('unknown scenario fields', fields=unknown)
        return cls(**doc)


@dataclass
class SimulationResult:
    scenario: SimScenario
    transactions: pd.DataFrame
    truth: pd.DataFrame
    covariates: Optional[CovariatePair] = None

    def dataset(self):
        """Ingest the simulated log with the scenario's period boundaries."""
        sc = self.scenario
        unit = sc.unit
        end = unit.shift(sc.start, sc.total_length)
        if not unit.sub_daily:
            end = end.normalize()
        ds = ingest(self.transactions, time_unit=unit,
                    estimation_split=sc.estimation_length if sc.holdout_length > 0 else None,
                    data_end=end, estimation_start=sc.start)
        if self.covariates is None:
            return ds
        keep = set(ds.ids)

        def restrict(table):
            if table.mode == 'static':
                return CovariateTable('static', table.names, table.data.loc[sorted(keep)])
            return CovariateTable('dynamic', table.names,
                                  table.data[table.data[ID].isin(keep)].reset_index(drop=True))

        return attach_covariates(ds, restrict(self.covariates.life),
                                 restrict(self.covariates.trans), until=ds.data_end)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------
def _blocks(n: int):
    return [(lo, min(lo + BLOCK, n)) for lo in range(0, n, BLOCK)]


def _rng(seed: int, kind: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), kind, block]))


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------
def _sarmanov_envelope(c1, c2, m):
    corners = np.maximum.reduce([c1 * c2, (1 - c1) * (1 - c2), c1 * (1 - c2), (1 - c1) * c2])
    return 1.0 + abs(m) * corners


def draw_rates(rng, p: PnbdParams, alpha, beta):
    """Purchase and attrition rates per customer; with m by rejection sampling.

    Proposals come from the independent Gamma product; a proposal is kept
    with probability (1 + m phi1 phi2) / envelope.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    lam = rng.gamma(p.r, 1.0 / alpha)
    mu = rng.gamma(p.s, 1.0 / beta)
    if p.m is None or p.m == 0.0:
        return lam, mu
    c1 = (alpha / (alpha + 1.0)) ** p.r
    c2 = (beta / (beta + 1.0)) ** p.s
    envelope = _sarmanov_envelope(c1, c2, p.m)
    pending = np.arange(lam.size)
    while pending.size:
        u = rng.uniform(size=pending.size)
        density = 1.0 + p.m * (np.exp(-lam[pending]) - c1[pending]) * (np.exp(-mu[pending]) - c2[pending])
        rejected = pending[u * envelope[pending] > density]
        if rejected.size:
            lam[rejected] = rng.gamma(p.r, 1.0 / alpha[rejected])
            mu[rejected] = rng.gamma(p.s, 1.0 / beta[rejected])
        pending = rejected
    return lam, mu


def _check_feasible(p: PnbdParams, alpha, beta):
    if p.m is None:
        return
    lo, hi = sarmanov_bounds(p, np.asarray(alpha), np.asarray(beta))
    bad = (p.m < lo) | (p.m > hi)
    if np.any(bad):
        k = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise ScenarioError('m outside the feasible Sarmanov range', m=p.m,
                            lower=float(np.atleast_1d(lo)[k]), upper=float(np.atleast_1d(hi)[k]))


# ---------------------------------------------------------------------------
# Pareto/NBD
# ---------------------------------------------------------------------------
def _uniform_times(rng, counts, lengths):
    """Sorted uniform event times per customer, flattened with owner indices."""
    owner = np.repeat(np.arange(counts.size), counts)
    times = rng.uniform(size=owner.size) * lengths[owner]
    order = np.lexsort((times, owner))
    return owner[order], times[order]


def _invert(targets, cum, points):
    """Times at which a piecewise-linear increasing clock reaches ``targets``."""
    return np.interp(targets, cum, points)


def _static_block(sc, p, X, lo, hi, offsets):
    rng = _rng(sc.seed, _RATES, lo // BLOCK)
    n = hi - lo
    alpha, beta = np.full(n, p.alpha), np.full(n, p.beta)
    if X is not None:
        alpha = alpha * np.exp(-X[lo:hi] @ np.asarray(p.gamma_trans))
        beta = beta * np.exp(-X[lo:hi] @ np.asarray(p.gamma_life))
    lam, mu = draw_rates(rng, p, alpha, beta)
    omega = rng.exponential(1.0 / mu)
    length = sc.total_length - offsets[lo:hi]
    active = np.minimum(omega, length)
    counts = rng.poisson(lam * active)
    owner, times = _uniform_times(rng, counts, active)
    lam0 = lam if X is None else lam * np.exp(-X[lo:hi] @ np.asarray(p.gamma_trans))
    mu0 = mu if X is None else mu * np.exp(-X[lo:hi] @ np.asarray(p.gamma_life))
    return lam0, mu0, omega, owner + lo, times


def _dynamic_block(sc, p, paths, lo, hi, offsets):
    rng = _rng(sc.seed, _RATES, lo // BLOCK)
    n = hi - lo
    lam0, mu0 = draw_rates(rng, p.replace(m=None), np.full(n, p.alpha), np.full(n, p.beta))
    omega = np.empty(n)
    owners, all_times = [], []
    for j in range(n):
        path = paths[lo + j]
        length = sc.total_length - offsets[lo + j]
        points = np.concatenate([[0.0], path.edges[(path.edges > 0) & (path.edges < length)], [length]])
        cum_lam = path.cumulative(path.rates(p.gamma_trans, 'trans'), points)
        cum_mu = path.cumulative(path.rates(p.gamma_life, 'life'), points)
        target = rng.exponential() / mu0[j]
        omega[j] = _invert(target, cum_mu, points) if target < cum_mu[-1] else np.inf
        active = min(omega[j], length)
        span = float(np.interp(active, points, cum_lam))
        count = rng.poisson(lam0[j] * span)
        times = _invert(np.sort(rng.uniform(size=count)) * span, cum_lam, points)
        owners.append(np.full(count, lo + j))
        all_times.append(times)
    return lam0, mu0, omega, np.concatenate(owners), np.concatenate(all_times)


def _covariates(sc: SimScenario, offsets):
    """Covariate tables plus what the samplers need (matrix or per-customer paths)."""
    spec = sc.covariates
    ids = sc.ids
    names = spec.names
    n, k = len(ids), len(names)
    unit = sc.unit
    if spec.mode == 'static':
        values = np.concatenate([
            spec.draw(_rng(sc.seed, _COVARIATES, b), (hi - lo, k)) for b, (lo, hi) in enumerate(_blocks(n))
        ]) if n else np.zeros((0, k))
        frame = pd.DataFrame(values, index=pd.Index(ids, name=ID), columns=list(names))
        table = CovariateTable('static', names, frame)
        return CovariatePair(life=table, trans=table), values
    n_intervals = int(math.ceil(sc.total_length)) + 1
    paths, frames = [], []
    for b, (lo, hi) in enumerate(_blocks(n)):
        rng = _rng(sc.seed, _COVARIATES, b)
        for i in range(lo, hi):
            first = int(math.floor(offsets[i]))
            values = spec.draw(rng, (n_intervals - first, k), first)
            paths.append(CovariatePath(first - offsets[i], values, values))
            frame = pd.DataFrame(values, columns=list(names))
            frame.insert(0, COV_DATE, [unit.shift(sc.start, float(j)) for j in range(first, n_intervals)])
            frame.insert(0, ID, ids[i])
            frames.append(frame)
    data = pd.concat(frames, ignore_index=True)
    table = CovariateTable('dynamic', names, data)
    return CovariatePair(life=table, trans=table), paths


def simulate_pnbd(sc: SimScenario, threads=None) -> SimulationResult:
    """Transaction log and latent truth for ``sc.n_customers`` customers.

    The truth table holds the base rates, lifetime, the alive flag at the
    estimation end and the exact continuous-time (x, t_x, T) summary.
    """
    if sc.params is None:
        raise ScenarioError('scenario has no Pareto/NBD parameters')
    p = sc.params
    n = int(sc.n_customers)
    offsets = np.concatenate([
        _rng(sc.seed, _COHORT, b).uniform(0.0, sc.cohort_length, hi - lo)
        if sc.cohort_length > 0 else np.zeros(hi - lo)
        for b, (lo, hi) in enumerate(_blocks(n))
    ])
    covariates, X, paths = None, None, None
    if sc.covariates is not None:
        covariates, design = _covariates(sc, offsets)
        if sc.covariates.mode == 'static':
            X = design
        else:
            paths = design
    if p.m is not None:
        alpha, beta = p.alpha, p.beta
        if X is not None:
            alpha = p.alpha * np.exp(-X @ np.asarray(p.gamma_trans))
            beta = p.beta * np.exp(-X @ np.asarray(p.gamma_life))
        _check_feasible(p, alpha, beta)

    if paths is None:
        run = lambda b: _static_block(sc, p, X, b[0], b[1], offsets)
    else:
        run = lambda b: _dynamic_block(sc, p, paths, b[0], b[1], offsets)
    parts = workers.map_items(run, _blocks(n), threads)
    lam0 = np.concatenate([part[0] for part in parts])
    mu0 = np.concatenate([part[1] for part in parts])
    omega = np.concatenate([part[2] for part in parts])
    owner = np.concatenate([part[3] for part in parts]).astype(np.int64)
    times = np.concatenate([part[4] for part in parts])

    ids = np.asarray(sc.ids)
    T = sc.estimation_length - offsets
    in_est = times <= T[owner]
    x = np.bincount(owner[in_est], minlength=n)
    t_x = np.zeros(n)
    np.maximum.at(t_x, owner[in_est], times[in_est])
    holdout_x = np.bincount(owner[~in_est], minlength=n)

    unit = sc.unit
    day = pd.Timedelta(days=unit.days)
    first_dates = sc.start + pd.to_timedelta(offsets * unit.days, unit='D')
    all_owner = np.concatenate([np.arange(n), owner])
    all_times = np.concatenate([np.zeros(n), times])
    order = np.lexsort((all_times, all_owner))
    all_owner, all_times = all_owner[order], all_times[order]
    stamps = sc.start + pd.to_timedelta((offsets[all_owner] + all_times) * unit.days, unit='D')
    transactions = pd.DataFrame({ID: ids[all_owner], DATE: stamps.floor('s')})
    truth = pd.DataFrame({
        ID: ids, 'first_date': first_dates, 'offset': offsets, 'lambda0': lam0, 'mu0': mu0,
        'omega': omega, 'alive': omega > T, 'x': x, 't_x': t_x, 'T': T, 'holdout_x': holdout_x,
    })
    logger.info('simulated %d customers, %d transactions (%d repeat), %.1f%% alive at %s',
                n, len(transactions), int(x.sum() + holdout_x.sum()), 100.0 * truth['alive'].mean(),
                (sc.start + sc.estimation_length * day).date())
    return SimulationResult(sc, transactions, truth, covariates)


# ---------------------------------------------------------------------------
# Gamma-Gamma
# ---------------------------------------------------------------------------
def simulate_gg(sc: SimScenario, transactions: pd.DataFrame, threads=None) -> pd.DataFrame:
    """Attach Gamma-Gamma spends to a transaction log (one customer scale each)."""
    if sc.gg_params is None:
        raise ScenarioError('scenario has no Gamma-Gamma parameters')
    g = sc.gg_params
    tx = transactions.sort_values([ID, DATE], kind='mergesort').reset_index(drop=True)
    counts = tx.groupby(ID, sort=True).size()
    sizes = counts.to_numpy()

    def run(block):
        b, (lo, hi) = block
        rng = _rng(sc.seed, _SPEND, b)
        nu = rng.gamma(g.q, 1.0 / g.gamma, size=hi - lo)
        return rng.gamma(g.p, 1.0 / np.repeat(nu, sizes[lo:hi]))

    parts = workers.map_items(run, list(enumerate(_blocks(sizes.size))), threads)
    out = tx.copy()
    out[PRICE] = np.concatenate(parts) if parts else np.zeros(0)
    return out


def simulate(sc: SimScenario, threads=None) -> SimulationResult:
    """Pareto/NBD log, with prices when the scenario carries Gamma-Gamma parameters."""
    result = simulate_pnbd(sc, threads)
    if sc.gg_params is not None:
        result.transactions = simulate_gg(sc, result.transactions, threads)
    return result


# ---------------------------------------------------------------------------
# Posterior continuation (oracle for CET / DERT / DECT)
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ContinuationResult:
    mean: float
    se: float
    mean_discounted: float
    se_discounted: float
    ess: float
    n_paths: int
    low_ess: bool = False


def _history_times(cs) -> TransactionTimes:
    x = int(cs.x)
    if x == 0:
        return TransactionTimes(np.zeros(0))
    return TransactionTimes(np.linspace(cs.t_x / x, cs.t_x, x))


def continue_paths(params: PnbdParams, cs, horizon: float, n_paths: int = 10_000,
                   delta: float = 0.0, seed: int = 0, path: Optional[CovariatePath] = None,
                   times=None, cov_trans=None, cov_life=None,
                   order: Optional[int] = None) -> ContinuationResult:
    """Monte Carlo future of one customer given (x, t_x, T).

    (lambda0, mu0, alive) are drawn from the posterior represented on the
    Gauss-Laguerre grid, then each path is simulated over (T, T + horizon].
    Without ``path`` the customer has static (or no) covariates.
    """
    if n_paths < 1000:
        raise DomainError('at least 1000 paths are required', n_paths=n_paths)
    if horizon < 0 or delta < 0:
        raise DomainError('horizon and discount rate must be nonnegative', horizon=horizon,
                          delta=delta)
    order = order or escalation_orders()[-1]
    T = float(cs.T)
    if path is None:
        alpha, beta = _customer_scales(params, cov_trans, cov_life)
        base = PnbdParams(params.r, alpha, params.s, beta, m=params.m)
        path = CovariatePath.constant(np.zeros(0), np.zeros(0), until=T + horizon + 1.0)
        times = _history_times(cs)
    else:
        if params.m is not None:
            raise ScenarioError('correlated rates are not available with time-varying covariates')
        base = params
        times = times if isinstance(times, TransactionTimes) else TransactionTimes(times)
        path.require(T + horizon)
    cust = DynamicCustomer(getattr(cs, 'customer_id', '0'), T, path, times)
    post = _posterior(base.replace(m=None), cust, order)

    mass = post.weights * post.total
    if base.m is not None:
        c1 = (base.alpha / (base.alpha + 1.0)) ** base.r
        c2 = (base.beta / (base.beta + 1.0)) ** base.s
        mass = mass * (1.0 + base.m * (np.exp(-post.lam) - c1) * (np.exp(-post.mu) - c2))
    mass = np.clip(mass, 0.0, None)
    probs = (mass / mass.sum()).ravel()
    ess = 1.0 / float(np.sum(probs ** 2))
    low_ess = ess < conf.get('min_ess')
    if low_ess:
        logger.warning('posterior grid degenerate for customer %s (ESS %.1f); oracle is unreliable',
                       cust.customer_id, ess)

    rng = np.random.default_rng(seed)
    cells = rng.choice(probs.size, size=n_paths, p=probs)
    i, j = np.unravel_index(cells, mass.shape)
    lam = post.lam[i, 0]
    mu = post.mu[0, j]
    alive_given_cell = (post.alive / post.total)[i, j]
    alive = rng.uniform(size=n_paths) < alive_given_cell

    a = path.rates(base.gamma_trans, 'trans')
    b = path.rates(base.gamma_life, 'life')
    end = T + horizon
    points = np.concatenate([[T], path.edges[(path.edges > T) & (path.edges < end)], [end]])
    cum_lam = path.cumulative(a, points) - path.cumulative(a, [T])[0]
    cum_mu = path.cumulative(b, points) - path.cumulative(b, [T])[0]

    target = rng.exponential(size=n_paths) / mu
    death = np.where(target < cum_mu[-1], _invert(target, cum_mu, points), end)
    active_until = np.where(alive, death, T)
    span = np.interp(active_until, points, cum_lam)
    counts = rng.poisson(lam * span)
    owner = np.repeat(np.arange(n_paths), counts)
    u = _invert(rng.uniform(size=owner.size) * span[owner], cum_lam, points)
    discounted = np.bincount(owner, weights=np.exp(-delta * (u - T)), minlength=n_paths)

    sqrt_n = math.sqrt(n_paths)
    return ContinuationResult(
        mean=float(counts.mean()), se=float(counts.std(ddof=1) / sqrt_n),
        mean_discounted=float(discounted.mean()), se_discounted=float(discounted.std(ddof=1) / sqrt_n),
        ess=ess, n_paths=int(n_paths), low_ess=bool(low_ess),
    )
