"""Maximum likelihood engine shared by all model families.

A model is anything with ``bind(ds, threads)`` returning a ``Likelihood``:
an ordered parameter schema plus a log-likelihood over natural-scale
parameter vectors. Optimisation runs on transformed coordinates (log for
positive parameters, a bounded logit for the Sarmanov m, identity for
coefficients); derivatives are central finite differences on the natural
scale.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from . import conf
from .exceptions import (
    CapabilityError, CovariateError, NestingError, NumericalError, StartValueError, UsageError,
)
from .gamma_gamma import GgParams, gg_loglik, spending_inputs
from .pnbd import ModelOptions, PnbdModel, PnbdParams, long_lifetime_warning, sarmanov_bounds

logger = logging.getLogger(__name__)

KINDS = ('positive', 'coef', 'm')
METHODS = {
    'L-BFGS-B': 'L-BFGS-B', 'lbfgsb': 'L-BFGS-B', 'quasi-newton-bounded': 'L-BFGS-B',
    'Nelder-Mead': 'Nelder-Mead', 'nelder-mead': 'Nelder-Mead', 'simplex': 'Nelder-Mead',
}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str = 'positive'

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f'unknown parameter kind {self.kind!r}')

    def default_start(self) -> float:
        return {'positive': conf.get('start_base'), 'coef': conf.get('start_cov'),
                'm': conf.get('start_m')}[self.kind]


@dataclass(frozen=True)
class OptimizerConfig:
    method: Optional[str] = None          # None: the likelihood's default
    max_evals: Optional[int] = None
    tolerance: Optional[float] = None
    start: Optional[dict] = None
    trace: bool = False
    compute_hessian: Optional[bool] = None

    def __post_init__(self):
        if self.method is not None and self.method not in METHODS:
            raise UsageError(f'unknown optimizer {self.method!r}', allowed=sorted(set(METHODS.values())))
        if self.tolerance is not None and not self.tolerance > 0:
            raise UsageError('optimizer tolerance must be positive', tolerance=self.tolerance)


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------
class Likelihood:
    """Log-likelihood over a natural-scale parameter vector."""
    family = 'custom'
    default_method = 'L-BFGS-B'
    hessian_by_default = True
    schema: tuple = ()
    n_obs: int = 1

    @property
    def names(self) -> tuple:
        return tuple(p.name for p in self.schema)

    @property
    def kinds(self) -> tuple:
        return tuple(p.kind for p in self.schema)

    def loglik(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def build(self, theta: np.ndarray):
        return dict(zip(self.names, map(float, theta)))

    def flatten(self, params) -> np.ndarray:
        if isinstance(params, dict):
            return np.array([params[n] for n in self.names], dtype=np.float64)
        return np.asarray(params, dtype=np.float64)

    def m_bounds(self, theta: np.ndarray):
        raise CapabilityError('model has no Sarmanov parameter')

    def prepare(self, theta: np.ndarray, stage: str):
        """Hook run at the start and end of a fit (quadrature refinement)."""

    def options(self) -> dict:
        return {}

    def diagnostics(self, params) -> list:
        return []


class FunctionLikelihood(Likelihood):
    def __init__(self, schema, fn: Callable, n_obs: int = 1):
        self.schema = tuple(schema)
        self.fn = fn
        self.n_obs = n_obs

    def loglik(self, theta):
        return float(self.fn(np.asarray(theta, dtype=np.float64)))


@dataclass(frozen=True)
class FunctionModel:
    """A plain objective, mostly for checking the engine itself."""
    schema: tuple
    fn: Callable
    n_obs: int = 1

    def bind(self, ds=None, threads=None) -> FunctionLikelihood:
        return FunctionLikelihood(self.schema, self.fn, self.n_obs)


class PnbdLikelihood(Likelihood):
    """Standard, static-covariate and Sarmanov-correlated Pareto/NBD."""

    def __init__(self, ds, options: ModelOptions = None, names_trans=(), names_life=(),
                 threads=None):
        self.options_ = options or ModelOptions()
        self.names_trans = tuple(names_trans)
        self.names_life = tuple(names_life)
        self.options_.validate(self.names_trans, self.names_life)
        self.ds = ds
        self.threads = threads
        self.n_obs = ds.n_customers
        static = ds.covariate_mode == 'static'
        self.X_trans = ds.static_matrix('trans', self.names_trans) if static and self.names_trans else None
        self.X_life = ds.static_matrix('life', self.names_life) if static and self.names_life else None
        shared = self.options_.constrained_names
        schema = [ParamSpec(n) for n in ('r', 'alpha', 's', 'beta')]
        schema += [ParamSpec(f'trans.{n}', 'coef') for n in self.names_trans if n not in shared]
        schema += [ParamSpec(f'life.{n}', 'coef') for n in self.names_life if n not in shared]
        schema += [ParamSpec(f'constr.{n}', 'coef') for n in shared]
        if self.options_.use_correlation:
            schema.append(ParamSpec('m', 'm'))
        self.schema = tuple(schema)
        self.family = 'pnbd-static' if (self.names_trans or self.names_life) else 'pnbd'
        # options used after constrained coefficients have been expanded
        self._eval_options = dataclasses.replace(self.options_, constrained_names=())

    def build(self, theta) -> PnbdParams:
        values = dict(zip(self.names, map(float, theta)))

        def coef(process, name):
            return values.get(f'constr.{name}', values.get(f'{process}.{name}'))

        return PnbdParams(
            r=values['r'], alpha=values['alpha'], s=values['s'], beta=values['beta'],
            gamma_trans=tuple(coef('trans', n) for n in self.names_trans),
            gamma_life=tuple(coef('life', n) for n in self.names_life),
            m=values.get('m'), names_trans=self.names_trans, names_life=self.names_life,
        )

    def flatten(self, params) -> np.ndarray:
        if not isinstance(params, PnbdParams):
            return super().flatten(params)
        values = {'r': params.r, 'alpha': params.alpha, 's': params.s, 'beta': params.beta,
                  'm': params.m}
        for n, v in zip(params.names_trans, params.gamma_trans):
            values[f'trans.{n}'] = v
            values[f'constr.{n}'] = v
        for n, v in zip(params.names_life, params.gamma_life):
            values[f'life.{n}'] = v
        return np.array([values[n] for n in self.names], dtype=np.float64)

    def loglik(self, theta) -> float:
        params = self.build(theta)
        model = PnbdModel(params, self.ds.x, self.ds.t_x, self.ds.T, self.X_trans, self.X_life,
                          ids=self.ds.ids, options=self._eval_options, threads=self.threads)
        return model.loglik()

    def m_bounds(self, theta):
        values = dict(zip(self.names, theta))
        return sarmanov_bounds(PnbdParams(values['r'], values['alpha'], values['s'], values['beta']))

    def options(self) -> dict:
        return self.options_.as_dict()

    def diagnostics(self, params) -> list:
        return ['long_lifetime'] if long_lifetime_warning(params) else []


@dataclass(frozen=True)
class PnbdSpec:
    """Pareto/NBD family; ``None`` covariate names means every attached covariate."""
    options: ModelOptions = field(default_factory=ModelOptions)
    names_trans: Optional[tuple] = None
    names_life: Optional[tuple] = None

    def bind(self, ds, threads=None) -> PnbdLikelihood:
        names_trans, names_life = self.names_trans, self.names_life
        if ds.covariates is not None:
            if ds.covariate_mode == 'dynamic' and (names_trans or names_life or names_trans is None):
                raise CapabilityError('time-varying covariates need the dynamic model')
            names_trans = ds.covariates.trans.names if names_trans is None else names_trans
            names_life = ds.covariates.life.names if names_life is None else names_life
        elif names_trans or names_life:
            raise CovariateError('dataset has no covariates attached')
        return PnbdLikelihood(ds, self.options, names_trans or (), names_life or (), threads)


class GgLikelihood(Likelihood):
    family = 'gg'
    schema = (ParamSpec('p'), ParamSpec('q'), ParamSpec('gamma'))

    def __init__(self, observations, remove_first_transaction=True):
        self.observations = list(observations)
        if not self.observations:
            raise CapabilityError('no customers with spending observations')
        self.n_obs = len(self.observations)
        self.remove_first_transaction = remove_first_transaction

    def build(self, theta) -> GgParams:
        return GgParams(*map(float, theta))

    def flatten(self, params) -> np.ndarray:
        if isinstance(params, GgParams):
            return np.array([params.p, params.q, params.gamma])
        return super().flatten(params)

    def loglik(self, theta) -> float:
        return gg_loglik(self.build(theta), self.observations)

    def options(self) -> dict:
        return {'remove_first_transaction': self.remove_first_transaction}

    def diagnostics(self, params) -> list:
        if params.q <= 1.0:
            logger.warning('q=%.4g <= 1: population mean spending is infinite', params.q)
            return ['divergent_mean']
        return []


@dataclass(frozen=True)
class GammaGammaSpec:
    remove_first_transaction: bool = True

    def bind(self, ds, threads=None) -> GgLikelihood:
        return GgLikelihood(spending_inputs(ds, self.remove_first_transaction),
                            self.remove_first_transaction)


def _bind(model, ds, threads=None) -> Likelihood:
    if isinstance(model, Likelihood):
        return model
    return model.bind(ds, threads=threads)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------
class Transform:
    """Natural <-> optimiser coordinates for one likelihood's schema."""

    def __init__(self, lik: Likelihood):
        self.lik = lik
        self.kinds = np.array(lik.kinds)

    def _m_range(self, natural):
        lo, hi = self.lik.m_bounds(natural)
        return lo, hi

    def encode(self, natural) -> np.ndarray:
        natural = np.asarray(natural, dtype=np.float64)
        theta = natural.copy()
        pos = self.kinds == 'positive'
        if np.any(natural[pos] <= 0):
            raise StartValueError('positive parameters need positive start values',
                                  values=natural[pos].tolist())
        theta[pos] = np.log(natural[pos])
        for i in np.flatnonzero(self.kinds == 'm'):
            lo, hi = self._m_range(natural)
            u = (natural[i] - lo) / (hi - lo)
            if not 0.0 < u < 1.0:
                raise StartValueError('m start value outside the feasible interval', m=natural[i],
                                      bounds=(lo, hi))
            theta[i] = special.logit(u)
        return theta

    def decode(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        natural = theta.copy()
        pos = self.kinds == 'positive'
        natural[pos] = np.exp(theta[pos])
        for i in np.flatnonzero(self.kinds == 'm'):
            lo, hi = self._m_range(natural)
            natural[i] = lo + (hi - lo) * special.expit(theta[i])
        return natural

    def bounds(self):
        out = []
        for kind in self.kinds:
            out.append((-30.0, 30.0) if kind in ('positive', 'm') else (None, None))
        return out


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------
def _steps(theta):
    return np.maximum(1e-5, 1e-4 * np.abs(theta))


def _safe(lik, theta):
    try:
        value = lik.loglik(theta)
    except NumericalError:
        return np.nan
    return value if np.isfinite(value) else np.nan


def gradient_at(lik: Likelihood, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    h = _steps(theta)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h[i]
        grad[i] = (_safe(lik, theta + e) - _safe(lik, theta - e)) / (2.0 * h[i])
    return grad


def _hessian(lik: Likelihood, theta, names) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    k = theta.size
    h = _steps(theta)
    f0 = _safe(lik, theta)
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (_safe(lik, theta + ei) - 2.0 * f0 + _safe(lik, theta - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                _safe(lik, theta + ei + ej) - _safe(lik, theta + ei - ej)
                - _safe(lik, theta - ei + ej) + _safe(lik, theta - ei - ej)
            ) / (4.0 * h[i] * h[j])
    H = 0.5 * (H + H.T)
    bad = np.argwhere(~np.isfinite(H))
    if len(bad):
        i, j = bad[0]
        raise NumericalError('non-finite Hessian entry', pair=(names[i], names[j]))
    return H


def hessian_at(model, ds, params, threads=None) -> np.ndarray:
    """Central finite-difference Hessian of the total log-likelihood (natural scale)."""
    lik = _bind(model, ds, threads)
    theta = lik.flatten(params)
    lik.prepare(theta, 'end')
    return _hessian(lik, theta, lik.names)


def _kkt2(H) -> bool:
    eig = np.linalg.eigvalsh(H)
    return bool(np.all(eig < -conf.get('kkt_eig_tol')))


def _vcov(H, kkt2):
    if not kkt2:
        logger.warning('Hessian not negative definite; standard errors unavailable')
        return None
    vcov = np.linalg.inv(-H)
    return 0.5 * (vcov + vcov.T)


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FitResult:
    family: str
    names: tuple
    kinds: tuple
    estimates: np.ndarray
    params: object
    loglik: float
    n_customers: int
    method: str
    fevals: int
    converged: bool
    kkt1: bool
    kkt2: Optional[bool]
    aic: float
    bic: float
    gradient: Optional[np.ndarray] = None
    hessian: Optional[np.ndarray] = None
    vcov: Optional[np.ndarray] = None
    options: dict = field(default_factory=dict)
    message: str = ''
    diagnostics: tuple = ()
    trace: tuple = ()

    @property
    def k(self) -> int:
        return len(self.names)

    @property
    def nobs(self) -> int:
        return self.n_customers

    def coef(self) -> pd.Series:
        return pd.Series(self.estimates, index=list(self.names), name='Estimate')

    def std_errors(self) -> Optional[np.ndarray]:
        if self.vcov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def confint(self, level: float = 0.95) -> pd.DataFrame:
        return confint(self, level)

    def with_hessian(self, model, ds, threads=None) -> 'FitResult':
        H = hessian_at(model, ds, self.estimates, threads)
        kkt2 = _kkt2(H)
        return dataclasses.replace(self, hessian=H, kkt2=kkt2, vcov=_vcov(H, kkt2))


def information_criteria(loglik: float, k: int, n: int):
    return 2.0 * k - 2.0 * loglik, k * math.log(n) - 2.0 * loglik


def _start_vector(lik: Likelihood, start: Optional[dict]) -> np.ndarray:
    start = dict(start or {})
    unknown = sorted(set(start) - set(lik.names))
    if unknown:
        raise StartValueError('start values for unknown parameters', names=unknown)
    return np.array([float(start.get(p.name, p.default_start())) for p in lik.schema])


def _minimize(objective, theta0, method, transform, max_evals, tol):
    if method == 'L-BFGS-B':
        return optimize.minimize(objective, theta0, method='L-BFGS-B', bounds=transform.bounds(),
                                 options={'maxfun': max_evals, 'ftol': tol, 'gtol': tol * 1e-2})
    return optimize.minimize(objective, theta0, method='Nelder-Mead',
                             options={'maxfev': max_evals, 'xatol': tol, 'fatol': tol,
                                      'adaptive': len(theta0) > 4})


def _settle(lik: Likelihood, transform, theta):
    """Natural-scale estimates, log-likelihood, gradient and KKT1 at theta."""
    natural = transform.decode(theta)
    lik.prepare(natural, 'end')
    ll = lik.loglik(natural)
    if not np.isfinite(ll):
        raise NumericalError('log-likelihood not finite at the optimum',
                             estimates=dict(zip(lik.names, natural.tolist())))
    grad = gradient_at(lik, natural)
    kkt1 = bool(np.all(np.isfinite(grad))
                and np.max(np.abs(grad)) < conf.get('kkt_grad_tol') * (1.0 + abs(ll)))
    return natural, ll, grad, kkt1


def fit(model, ds=None, config: Optional[OptimizerConfig] = None, threads=None) -> FitResult:
    """Maximise the total log-likelihood.

    Non-convergence does not raise; it is reported through ``converged``
    and the KKT flags.
    """
    config = config or OptimizerConfig()
    lik = _bind(model, ds, threads)
    method = METHODS[config.method] if config.method else lik.default_method
    max_evals = config.max_evals or conf.get('optimizer_max_evals')
    tol = config.tolerance or conf.get('optimizer_tol')
    compute_hessian = lik.hessian_by_default if config.compute_hessian is None else config.compute_hessian
    transform = Transform(lik)

    natural0 = _start_vector(lik, config.start)
    lik.prepare(natural0, 'start')
    theta0 = transform.encode(natural0)
    try:
        ll0 = lik.loglik(natural0)
    except NumericalError as exc:
        raise StartValueError(f'log-likelihood not finite at the start values: {exc}')
    if not np.isfinite(ll0):
        raise StartValueError('log-likelihood not finite at the start values',
                              start=dict(zip(lik.names, natural0.tolist())))

    fevals = 0
    trace = []
    # failed evaluations score a finite penalty, never inf
    penalty = 1e6 * (1.0 + abs(ll0))

    def objective(theta):
        nonlocal fevals
        fevals += 1
        try:
            value = lik.loglik(transform.decode(theta))
        except NumericalError as exc:
            logger.debug('evaluation %d failed: %s', fevals, exc)
            return penalty
        if config.trace:
            trace.append((fevals, float(value)))
            logger.debug('eval %d ll=%.6f theta=%s', fevals, value, np.round(theta, 6).tolist())
        return min(-value, penalty) if np.isfinite(value) else penalty

    logger.info('fit %s (%d params, n=%d) with %s', lik.family, len(lik.names), lik.n_obs, method)
    started = time.monotonic()
    res = _minimize(objective, theta0, method, transform, max_evals, tol)
    natural, ll, grad, kkt1 = _settle(lik, transform, res.x)
    message = str(res.message)

    if method == 'L-BFGS-B' and not (res.success and kkt1):
        # simplex from where quasi-Newton stalled, then a quasi-Newton polish
        logger.warning('L-BFGS-B stopped at a non-stationary point after %d evaluations (%s); '
                       'restarting with Nelder-Mead', fevals, res.message)
        simplex = _minimize(objective, res.x, 'Nelder-Mead', transform, max_evals, tol)
        polish = _minimize(objective, simplex.x, 'L-BFGS-B', transform, max_evals, tol)
        best = min((res, simplex, polish), key=lambda r: r.fun)
        if best is not res:
            res = best
            natural, ll, grad, kkt1 = _settle(lik, transform, res.x)
        message = f'{res.message} (after Nelder-Mead restart)'
    if not kkt1 and np.allclose(natural, natural0):
        logger.warning('estimates did not move from the start values')
    H = vcov = None
    kkt2 = None
    if compute_hessian:
        H = _hessian(lik, natural, lik.names)
        kkt2 = _kkt2(H)
        vcov = _vcov(H, kkt2)
    params = lik.build(natural)
    aic, bic = information_criteria(ll, len(lik.names), lik.n_obs)
    # converged means optimizer success and a vanishing gradient
    converged = bool(res.success) and kkt1
    logger.info('fit %s done in %.1fs: ll=%.6f fevals=%d converged=%s kkt1=%s kkt2=%s',
                lik.family, time.monotonic() - started, ll, fevals, converged, kkt1, kkt2)
    if not converged:
        logger.warning('optimizer did not converge: %s (kkt1=%s)', message, kkt1)
    return FitResult(
        family=lik.family, names=lik.names, kinds=lik.kinds, estimates=natural, params=params,
        loglik=float(ll), n_customers=lik.n_obs, method=method, fevals=fevals,
        converged=converged, kkt1=kkt1, kkt2=kkt2, aic=aic, bic=bic, gradient=grad,
        hessian=H, vcov=vcov, options=lik.options(), message=message,
        diagnostics=tuple(lik.diagnostics(params)), trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------
def confint(fr: FitResult, level: float = 0.95) -> pd.DataFrame:
    """Wald intervals on the natural scale; NaN where no vcov is available."""
    se = fr.std_errors()
    se = np.full(fr.k, np.nan) if se is None else se
    z = stats.norm.ppf(0.5 + level / 2.0)
    lo_name = f'{100 * (1 - level) / 2:g}%'
    hi_name = f'{100 * (1 + level) / 2:g}%'
    return pd.DataFrame({lo_name: fr.estimates - z * se, hi_name: fr.estimates + z * se},
                        index=list(fr.names))


@dataclass(frozen=True)
class FitReport:
    coefficients: pd.DataFrame
    info: dict
    options: dict

    def render(self) -> str:
        table = self.coefficients.copy()
        lines = [table.to_string(na_rep='NA', float_format=lambda v: f'{v:.6g}'), '']
        lines.append('Optimization info:')
        for key, value in self.info.items():
            lines.append(f'  {key:<18} {value}')
        lines.append('')
        lines.append('Used options:')
        for key, value in self.options.items():
            lines.append(f'  {key:<18} {value}')
        return '\n'.join(lines)


def summary_report(fr: FitResult) -> FitReport:
    se = fr.std_errors()
    se = np.full(fr.k, np.nan) if se is None else se
    inference = np.array([kind != 'positive' for kind in fr.kinds])
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(inference, fr.estimates / se, np.nan)
    p = np.where(inference, 2.0 * stats.norm.sf(np.abs(z)), np.nan)
    coefficients = pd.DataFrame({
        'Estimate': fr.estimates, 'Std. Error': se, 'z-val': z, 'Pr(>|z|)': p,
    }, index=list(fr.names))
    info = {
        'LL': round(fr.loglik, 4), 'AIC': round(fr.aic, 4), 'BIC': round(fr.bic, 4),
        'KKT 1': fr.kkt1, 'KKT 2': 'NA' if fr.kkt2 is None else fr.kkt2,
        'fevals': fr.fevals, 'Method': fr.method, 'Converged': fr.converged,
        'Customers': fr.n_customers,
    }
    opts = fr.options or {}
    options = {}
    if fr.family.startswith('pnbd'):
        reg = opts.get('reg_lambdas')
        constrained = opts.get('constrained_names') or []
        options = {
            'Correlation': bool(opts.get('use_correlation')),
            'Regularization': bool(reg),
            'Constraint covs': bool(constrained),
        }
        if reg:
            options['lambda.trans'], options['lambda.life'] = reg
        if constrained:
            options['Constrained'] = ', '.join(constrained)
        if fr.family == 'pnbd-dynamic':
            options['Quadrature order'] = opts.get('quadrature_order')
    else:
        options = dict(opts)
    for flag in fr.diagnostics:
        info[f'Warning {flag}'] = True
    return FitReport(coefficients, info, options)


@dataclass(frozen=True)
class LrTest:
    chisq: float
    df: int
    p_value: float
    loglik_constrained: float
    loglik_unconstrained: float
    names: tuple = ('constrained', 'unconstrained')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'LL': [self.loglik_constrained, self.loglik_unconstrained],
            'Df': [np.nan, self.df], 'Chisq': [np.nan, self.chisq],
            'Pr(>Chisq)': [np.nan, self.p_value],
        }, index=list(self.names))


def lr_test(constrained: FitResult, unconstrained: FitResult, tol: float = 1e-6,
            names=('constrained', 'unconstrained')) -> LrTest:
    df = unconstrained.k - constrained.k
    if df < 1:
        raise NestingError('unconstrained model must have more parameters', df=df)
    if unconstrained.loglik < constrained.loglik - tol:
        raise NestingError('unconstrained fit has the lower log-likelihood',
                           ll_constrained=constrained.loglik, ll_unconstrained=unconstrained.loglik)
    chisq = max(0.0, 2.0 * (unconstrained.loglik - constrained.loglik))
    return LrTest(chisq=chisq, df=df, p_value=float(stats.chi2.sf(chisq, df)),
                  loglik_constrained=constrained.loglik, loglik_unconstrained=unconstrained.loglik,
                  names=tuple(names))
