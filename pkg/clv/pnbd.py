"""Pareto/NBD likelihood family.

Standard model, time-invariant covariates (customer-specific scales
alpha_i = alpha * exp(-gamma_trans'x), beta_i = beta * exp(-gamma_life'x)),
Sarmanov-correlated purchase and attrition rates, L2 regularisation and
equality constraints between the two processes. Every quantity here is
evaluated vectorised over customers and in log scale.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, special, stats

from . import workers
from .exceptions import CapabilityError, CovariateError, DomainError, NumericalError
from .special_functions import log_gauss_2f1, log_tricomi_u, signed_logaddexp

logger = logging.getLogger(__name__)


def _as_tuple(values):
    if values is None:
        return ()
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=np.float64)))


@dataclass(frozen=True)
class PnbdParams:
    r: float
    alpha: float
    s: float
    beta: float
    gamma_trans: tuple = ()
    gamma_life: tuple = ()
    m: Optional[float] = None
    names_trans: tuple = ()
    names_life: tuple = ()

    def __post_init__(self):
        for name in ('r', 'alpha', 's', 'beta'):
            value = float(getattr(self, name))
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f'{name} must be positive and finite', **{name: value})
            object.__setattr__(self, name, value)
        for field_name in ('gamma_trans', 'gamma_life'):
            object.__setattr__(self, field_name, _as_tuple(getattr(self, field_name)))
        object.__setattr__(self, 'names_trans', tuple(self.names_trans))
        object.__setattr__(self, 'names_life', tuple(self.names_life))
        if self.names_trans and len(self.names_trans) != len(self.gamma_trans):
            raise CovariateError('gamma_trans does not match names_trans',
                                 names=self.names_trans, size=len(self.gamma_trans))
        if self.names_life and len(self.names_life) != len(self.gamma_life):
            raise CovariateError('gamma_life does not match names_life',
                                 names=self.names_life, size=len(self.gamma_life))
        if self.m is not None:
            object.__setattr__(self, 'm', float(self.m))

    @property
    def has_covariates(self) -> bool:
        return bool(self.gamma_trans or self.gamma_life)

    @property
    def mean_purchase_rate(self) -> float:
        return self.r / self.alpha

    @property
    def mean_attrition_rate(self) -> float:
        return self.s / self.beta

    def replace(self, **changes) -> 'PnbdParams':
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        out = {'r': self.r, 'alpha': self.alpha, 's': self.s, 'beta': self.beta}
        for name, value in zip(self.names_trans or range(len(self.gamma_trans)), self.gamma_trans):
            out[f'trans.{name}'] = value
        for name, value in zip(self.names_life or range(len(self.gamma_life)), self.gamma_life):
            out[f'life.{name}'] = value
        if self.m is not None:
            out['m'] = self.m
        return out


@dataclass(frozen=True)
class ModelOptions:
    use_correlation: bool = False
    reg_lambdas: Optional[tuple] = None
    constrained_names: tuple = ()

    def __post_init__(self):
        if self.reg_lambdas is not None:
            lambdas = tuple(float(v) for v in self.reg_lambdas)
            if len(lambdas) != 2 or min(lambdas) < 0 or not all(np.isfinite(lambdas)):
                raise DomainError('reg_lambdas must be two nonnegative numbers', reg_lambdas=lambdas)
            object.__setattr__(self, 'reg_lambdas', lambdas)
        object.__setattr__(self, 'constrained_names', tuple(self.constrained_names))

    def validate(self, names_trans, names_life):
        missing = [n for n in self.constrained_names
                   if n not in names_trans or n not in names_life]
        if missing:
            raise CovariateError('constrained covariates must exist for both processes',
                                 names=missing)
        if (self.reg_lambdas or self.constrained_names) and not (names_trans or names_life):
            raise CovariateError('regularisation and constraints need covariates')

    def constrain(self, params: PnbdParams) -> PnbdParams:
        """Copy each constrained trans coefficient onto its life counterpart."""
        if not self.constrained_names:
            return params
        life = list(params.gamma_life)
        for name in self.constrained_names:
            life[params.names_life.index(name)] = params.gamma_trans[params.names_trans.index(name)]
        return params.replace(gamma_life=tuple(life))

    def penalty(self, params: PnbdParams) -> float:
        if not self.reg_lambdas:
            return 0.0
        lam_trans, lam_life = self.reg_lambdas
        g_t = np.asarray(params.gamma_trans)
        g_l = np.asarray(params.gamma_life)
        return float(lam_trans * np.dot(g_t, g_t) + lam_life * np.dot(g_l, g_l))

    def as_dict(self) -> dict:
        return {
            'use_correlation': self.use_correlation,
            'reg_lambdas': list(self.reg_lambdas) if self.reg_lambdas else None,
            'constrained_names': list(self.constrained_names),
        }


# ---------------------------------------------------------------------------
# Vectorised cores; alpha and beta are per-customer arrays
# ---------------------------------------------------------------------------
def _log_likelihood(r, alpha, s, beta, x, t_x, T):
    rx = r + x
    rsx = rx + s
    alpha_ge = alpha >= beta
    larger = np.where(alpha_ge, alpha, beta)
    diff = np.abs(alpha - beta)
    p_tx = np.where(alpha_ge, s + 1.0, rx)
    p_T = np.where(alpha_ge, s, rx + 1.0)
    log_l_tx = np.log(larger + t_x)
    log_l_T = np.log(larger + T)

    head = (special.gammaln(rx) - special.gammaln(r) + r * np.log(alpha) + s * np.log(beta)
            - rsx * log_l_tx)
    f_tx, _ = log_gauss_2f1(rsx, p_tx, rsx + 1.0, diff / (larger + t_x))
    f_T, _ = log_gauss_2f1(rsx, p_T, rsx + 1.0, diff / (larger + T))
    dead = np.log(s) - np.log(rsx) + f_tx
    alive = np.log(rx) - np.log(rsx) + f_T + rsx * (log_l_tx - log_l_T)
    return head + np.logaddexp(dead, alive)


def _log_alive(r, alpha, s, beta, x, T):
    rx = r + x
    return (special.gammaln(rx) - special.gammaln(r) + r * np.log(alpha) + s * np.log(beta)
            - rx * np.log(alpha + T) - s * np.log(beta + T))


def _log_power_gap(log_q, k):
    """log((1 - q^k) / k) for q in (0, 1]; the k -> 0 limit is log(-log q)."""
    k = np.asarray(k, dtype=np.float64)
    log_q = np.asarray(log_q, dtype=np.float64)
    k_safe = np.where(k == 0.0, 1.0, k)
    with np.errstate(divide='ignore'):
        gap = np.where(k == 0.0, -log_q, -np.expm1(k * log_q) / k_safe)
        return np.log(gap)


def _log_cet_numerator(r, alpha, s, beta, x, T, t):
    log_q = np.log(beta + T) - np.log(beta + T + t)
    return (_log_alive(r, alpha, s, beta, x, T) + np.log(r + x) + np.log(beta + T)
            - np.log(alpha + T) + _log_power_gap(log_q, s - 1.0))


def _log_dert_numerator(r, alpha, s, beta, x, T, delta):
    return (_log_alive(r, alpha, s, beta, x, T) + np.log(r + x) - np.log(alpha + T)
            + s * np.log(beta + T) + (s - 1.0) * np.log(delta)
            + log_tricomi_u(s, s, delta * (beta + T)))


def _log_sarmanov_weight(r, alpha, s, beta, m):
    return (np.log(abs(m)) + r * (np.log(alpha) - np.log1p(alpha))
            + s * (np.log(beta) - np.log1p(beta)))


def sarmanov_log(fn, r, alpha, s, beta, m):
    """Apply the Sarmanov mixing density to a positive linear functional.

    ``fn(alpha, beta)`` returns log N under independent Gamma mixing. The
    result is log|N_m| and its sign, where
    N_m = N(a,b) + w [N(a+1,b+1) - N(a+1,b) - N(a,b+1) + N(a,b)],
    w = m (a/(a+1))^r (b/(b+1))^s.
    """
    l00 = fn(alpha, beta)
    if m is None or m == 0.0:
        return l00, np.ones_like(l00)
    log_w = _log_sarmanov_weight(r, alpha, s, beta, m)
    sw = math.copysign(1.0, m)
    one_w = 1.0 + sw * np.exp(log_w)
    with np.errstate(divide='ignore'):
        out, sign = signed_logaddexp(l00 + np.log(np.abs(one_w)), np.sign(one_w),
                                     log_w + fn(alpha + 1.0, beta + 1.0), sw)
    out, sign = signed_logaddexp(out, sign, log_w + fn(alpha + 1.0, beta), -sw)
    out, sign = signed_logaddexp(out, sign, log_w + fn(alpha, beta + 1.0), -sw)
    return out, sign


def sarmanov_linear(fn, r, alpha, s, beta, m):
    """Linear-scale counterpart of ``sarmanov_log`` for functionals that may be 0."""
    n00 = fn(alpha, beta)
    if m is None or m == 0.0:
        return n00
    w = m * (alpha / (alpha + 1.0)) ** r * (beta / (beta + 1.0)) ** s
    return n00 + w * (fn(alpha + 1.0, beta + 1.0) - fn(alpha + 1.0, beta)
                      - fn(alpha, beta + 1.0) + n00)


def sarmanov_bounds(p: PnbdParams, alpha=None, beta=None):
    """Interval of m for which 1 + m*phi1*phi2 >= 0 everywhere.

    phi1 = exp(-lambda) - E[exp(-lambda)] ranges over [-c1, 1 - c1].
    """
    alpha = p.alpha if alpha is None else alpha
    beta = p.beta if beta is None else beta
    c1 = (alpha / (alpha + 1.0)) ** p.r
    c2 = (beta / (beta + 1.0)) ** p.s
    lo = -1.0 / np.maximum((1.0 - c1) * (1.0 - c2), c1 * c2)
    hi = 1.0 / np.maximum(c1 * (1.0 - c2), (1.0 - c1) * c2)
    return lo, hi


def sarmanov_correlation(p: PnbdParams) -> float:
    """Correlation between purchase and attrition rate under the Sarmanov density."""
    if p.m is None:
        raise CapabilityError('model has no correlation parameter m')
    c1 = (p.alpha / (p.alpha + 1.0)) ** p.r
    c2 = (p.beta / (p.beta + 1.0)) ** p.s
    return p.m * c1 * c2 * math.sqrt(p.r) * math.sqrt(p.s) / ((1.0 + p.alpha) * (1.0 + p.beta))


def long_lifetime_warning(p: PnbdParams) -> bool:
    """True when s <= 1; lifetimes then have no finite mean."""
    if p.s <= 1.0:
        logger.warning('s=%.4g <= 1: expected lifetime is unbounded, long-run predictions '
                       'will be large', p.s)
        return True
    return False


# ---------------------------------------------------------------------------
# Model facade
# ---------------------------------------------------------------------------
class PnbdModel:
    """Parameters bound to customer summaries (and covariate matrices)."""

    def __init__(self, params: PnbdParams, x, t_x, T, X_trans=None, X_life=None,
                 ids=None, options: Optional[ModelOptions] = None, threads=None):
        self.params = params
        self.options = options or ModelOptions(use_correlation=params.m is not None)
        self.x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        self.t_x = np.atleast_1d(np.asarray(t_x, dtype=np.float64))
        self.T = np.atleast_1d(np.asarray(T, dtype=np.float64))
        n = self.x.size
        self.X_trans = np.zeros((n, 0)) if X_trans is None else np.atleast_2d(np.asarray(X_trans, dtype=np.float64))
        self.X_life = np.zeros((n, 0)) if X_life is None else np.atleast_2d(np.asarray(X_life, dtype=np.float64))
        self.ids = np.arange(n).astype(str) if ids is None else np.asarray(ids)
        self.threads = threads
        if self.X_trans.shape[1] != len(params.gamma_trans) or self.X_life.shape[1] != len(params.gamma_life):
            raise CovariateError('covariate matrices do not match coefficient vectors',
                                 trans=self.X_trans.shape[1], life=self.X_life.shape[1])
        if self.options.use_correlation and params.m is None:
            raise CapabilityError('correlation requested but m is missing')

    @classmethod
    def from_dataset(cls, params: PnbdParams, ds, options: Optional[ModelOptions] = None,
                     threads=None) -> 'PnbdModel':
        X_trans = X_life = None
        if params.gamma_trans or params.gamma_life:
            if ds.covariates is None:
                raise CovariateError('parameters carry covariate effects but dataset has none')
            X_trans = ds.static_matrix('trans', params.names_trans or None)
            X_life = ds.static_matrix('life', params.names_life or None)
        return cls(params, ds.x, ds.t_x, ds.T, X_trans, X_life, ids=ds.ids, options=options,
                   threads=threads)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def m(self):
        return self.params.m if self.options.use_correlation else None

    def _effective(self) -> PnbdParams:
        return self.options.constrain(self.params)

    def scales(self, lo=0, hi=None):
        p = self._effective()
        hi = self.n if hi is None else hi
        alpha = p.alpha * np.exp(-self.X_trans[lo:hi] @ np.asarray(p.gamma_trans, dtype=np.float64))
        beta = p.beta * np.exp(-self.X_life[lo:hi] @ np.asarray(p.gamma_life, dtype=np.float64))
        return alpha, beta

    def _chunk_loglik(self, lo, hi):
        p = self.params
        alpha, beta = self.scales(lo, hi)
        x, t_x, T = self.x[lo:hi], self.t_x[lo:hi], self.T[lo:hi]
        log_l, sign = sarmanov_log(lambda a, b: _log_likelihood(p.r, a, p.s, b, x, t_x, T),
                                   p.r, alpha, p.s, beta, self.m)
        return np.where(sign > 0, log_l, -np.inf)

    def loglik_vector(self) -> np.ndarray:
        """Per-customer log-likelihood; -inf marks an infeasible Sarmanov m."""
        ll = workers.concat_chunks(self._chunk_loglik, self.n, self.threads)
        bad = np.isnan(ll) | np.isposinf(ll)
        if self.m is None:
            bad |= np.isneginf(ll)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise NumericalError('non-finite log-likelihood', customer_id=str(self.ids[k]),
                                 params=self.params.as_dict())
        return ll

    def loglik(self) -> float:
        ll = self.loglik_vector()
        if np.isneginf(ll).any():
            logger.debug('m=%s infeasible for %d customers', self.m, int(np.isneginf(ll).sum()))
            return -np.inf
        return math.fsum(ll) - self.options.penalty(self._effective())

    # -- managerial quantities --------------------------------------------
    def _ratio(self, log_numerator):
        p = self.params
        alpha, beta = self.scales()
        log_num, s_num = sarmanov_log(log_numerator, p.r, alpha, p.s, beta, self.m)
        log_den, s_den = sarmanov_log(
            lambda a, b: _log_likelihood(p.r, a, p.s, b, self.x, self.t_x, self.T),
            p.r, alpha, p.s, beta, self.m)
        if np.any(s_den <= 0):
            raise NumericalError('likelihood not positive; m is infeasible', m=self.m)
        return np.where(s_num > 0, np.exp(log_num - log_den), 0.0)

    def palive(self) -> np.ndarray:
        p = self.params
        out = self._ratio(lambda a, b: _log_alive(p.r, a, p.s, b, self.x, self.T))
        return np.clip(out, 0.0, 1.0)

    def cet(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0):
            raise DomainError('prediction horizon must be nonnegative', horizon=float(np.min(t)))
        p = self.params
        return self._ratio(
            lambda a, b: _log_cet_numerator(p.r, a, p.s, b, self.x, self.T, t))

    def dert(self, delta: float) -> np.ndarray:
        if not delta > 0:
            raise DomainError('DERT needs a positive continuous discount rate', delta=delta)
        p = self.params
        return self._ratio(
            lambda a, b: _log_dert_numerator(p.r, a, p.s, b, self.x, self.T, delta))

    def expected_transactions(self, t) -> np.ndarray:
        """Unconditional E[X(t)] for every customer (their own covariates)."""
        p = self.params
        alpha, beta = self.scales()
        return sarmanov_linear(lambda a, b: _expectation(p.r, a, p.s, b, t), p.r, alpha, p.s, beta, self.m)

    def expected_cumulative(self, offsets, grid) -> np.ndarray:
        """Sum over customers of E[X(g - offset_i)] at each grid point g.

        ``offsets`` are first-purchase times on the cohort clock; customers
        contribute nothing before their first purchase.
        """
        offsets = np.asarray(offsets, dtype=np.float64)
        grid = np.asarray(grid, dtype=np.float64)
        p = self.params
        alpha, beta = self.scales()
        elapsed = np.clip(grid[None, :] - offsets[:, None], 0.0, None)
        a, b = alpha[:, None], beta[:, None]
        per_customer = sarmanov_linear(lambda aa, bb: _expectation(p.r, aa, p.s, bb, elapsed),
                                       p.r, a, p.s, b, self.m)
        return per_customer.sum(axis=0)


def _expectation(r, alpha, s, beta, t):
    t = np.asarray(t, dtype=np.float64)
    log_q = np.log(beta) - np.log(beta + t)
    with np.errstate(divide='ignore'):
        gap = np.exp(_log_power_gap(log_q, s - 1.0))
    return r / alpha * beta * gap


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------
def _single(p: PnbdParams, cs, cov_trans=None, cov_life=None) -> PnbdModel:
    X_trans = None if cov_trans is None else np.atleast_2d(np.asarray(cov_trans, dtype=np.float64))
    X_life = None if cov_life is None else np.atleast_2d(np.asarray(cov_life, dtype=np.float64))
    if X_trans is None and p.gamma_trans:
        raise CovariateError('customer covariates required for trans effects')
    if X_life is None and p.gamma_life:
        raise CovariateError('customer covariates required for life effects')
    return PnbdModel(p, [cs.x], [cs.t_x], [cs.T], X_trans, X_life,
                     ids=[getattr(cs, 'customer_id', '0')], threads=1)


def loglik_customer(p: PnbdParams, cs, cov_trans=None, cov_life=None) -> float:
    return float(_single(p, cs, cov_trans, cov_life).loglik_vector()[0])


def loglik_total(p: PnbdParams, ds, opts: Optional[ModelOptions] = None, threads=None) -> float:
    opts = opts or ModelOptions()
    opts.validate(p.names_trans, p.names_life)
    return PnbdModel.from_dataset(p, ds, opts, threads=threads).loglik()


def palive(p: PnbdParams, cs, cov_trans=None, cov_life=None) -> float:
    return float(_single(p, cs, cov_trans, cov_life).palive()[0])


def cet(p: PnbdParams, cs, t: float, cov_trans=None, cov_life=None) -> float:
    return float(_single(p, cs, cov_trans, cov_life).cet(t)[0])


def dert(p: PnbdParams, cs, delta: float, cov_trans=None, cov_life=None) -> float:
    return float(_single(p, cs, cov_trans, cov_life).dert(delta)[0])


def _customer_scales(p: PnbdParams, cov_trans, cov_life):
    alpha, beta = p.alpha, p.beta
    if p.gamma_trans:
        if cov_trans is None:
            raise CovariateError('customer covariates required for trans effects')
        alpha *= math.exp(-float(np.dot(cov_trans, p.gamma_trans)))
    if p.gamma_life:
        if cov_life is None:
            raise CovariateError('customer covariates required for life effects')
        beta *= math.exp(-float(np.dot(cov_life, p.gamma_life)))
    return alpha, beta


def unconditional_expectation(p: PnbdParams, t, cov_trans=None, cov_life=None):
    """E[X(t)] for a customer without history; s = 1 is the logarithmic limit."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise DomainError('t must be nonnegative', t=float(np.min(t_arr)))
    alpha, beta = _customer_scales(p, cov_trans, cov_life)
    out = sarmanov_linear(lambda a, b: _expectation(p.r, a, p.s, b, t_arr), p.r, alpha, p.s, beta, p.m)
    return float(out) if np.ndim(out) == 0 else out


def _pmf_one(r, alpha, s, beta, t, n):
    """P(X(t) = n) for one customer drawn from the population."""
    log_ab = r * math.log(alpha) + s * math.log(beta)
    first = (n * math.log(t) - special.gammaln(n + 1.0) + special.gammaln(r + n) - special.gammaln(r)
             + log_ab - (r + n) * math.log(alpha + t) - s * math.log(beta + t))
    larger = max(alpha, beta)
    diff = abs(alpha - beta)
    b2 = r + n if alpha < beta else s + 1.0
    c = r + s + n + 1.0
    log_b = special.betaln(r + n, s + 1.0)
    f0, _ = log_gauss_2f1(r + s, b2, c, diff / larger)
    second = log_ab + log_b - special.betaln(r, s) + f0 - (r + s) * math.log(larger)

    i = np.arange(n + 1, dtype=np.float64)
    fi, _ = log_gauss_2f1(r + s + i, b2, c, diff / (larger + t))
    third_terms = (i * math.log(t) - special.gammaln(i + 1.0) + log_ab + special.gammaln(r + s + i)
                   + log_b - special.gammaln(r) - special.gammaln(s) + fi
                   - (r + s + i) * math.log(larger + t))
    third = special.logsumexp(third_terms)
    return math.exp(first) + math.exp(second) - math.exp(third)


def _pmf_quad(r, alpha, s, beta, t, n):
    """Same probability as a 1-D integral over the (Lomax) death time."""
    def nbd(u):
        return stats.nbinom.pmf(n, r, alpha / (alpha + u))

    def death(u):
        return s / (beta + u) * math.exp(s * (math.log(beta) - math.log(beta + u)))

    survive = math.exp(s * (math.log(beta) - math.log(beta + t)))
    mass, _ = integrate.quad(lambda u: nbd(u) * death(u), 0.0, t, limit=200)
    return survive * nbd(t) + mass


def pmf(p: PnbdParams, t: float, x, cov_trans=None, cov_life=None):
    """P(X(t) = x) for a new customer, marginal over rates and death."""
    if not t > 0:
        raise DomainError('pmf needs t > 0', t=t)
    xs = np.atleast_1d(np.asarray(x))
    if np.any(xs < 0) or np.any(xs != np.floor(xs)):
        raise DomainError('x must be a nonnegative integer')
    alpha, beta = _customer_scales(p, cov_trans, cov_life)

    def one(a, b, n):
        try:
            return _pmf_one(p.r, a, p.s, b, t, n)
        except NumericalError:
            logger.debug('pmf series failed at n=%d, integrating instead', n)
            return _pmf_quad(p.r, a, p.s, b, t, n)

    out = np.array([sarmanov_linear(lambda a, b: one(a, b, int(n)), p.r, alpha, p.s, beta, p.m)
                    for n in xs], dtype=np.float64)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.ndim(x) == 0 else out
