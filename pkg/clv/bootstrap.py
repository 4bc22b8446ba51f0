"""Customer bootstrap: resample histories with replacement, refit, aggregate.

Each iteration draws N customer ids with replacement, rebuilds the dataset
with the original period boundaries, refits the model and applies a
functional to the refit. Only parameter uncertainty is captured.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd

from . import conf, workers
from .estimation import OptimizerConfig, fit as fit_model
from .exceptions import ClvError, DomainError, InsufficientIterationsError, UsageError
from .logging_utils import with_run_id
from .prediction import DiscountSpec, plot_tracking_data, predict_table, resolve_horizon
from .serialization import model_spec

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ('PAlive', 'CET', 'DERT', 'DECT', 'predicted.mean.spending',
                      'predicted.period.spending', 'predicted.CLV', 'predicted.period.CLV')


@dataclass(frozen=True)
class BootstrapSpec:
    num_boots: int = 100
    seed: int = 0
    quantiles: Optional[tuple] = None        # None: settings.CLV['bootstrap_quantiles']
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.num_boots) < 1:
            raise DomainError('num_boots must be at least 1', num_boots=self.num_boots)
        q = tuple(float(v) for v in (self.quantiles or conf.get('bootstrap_quantiles')))
        if not q or any(not 0 < v < 1 for v in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise DomainError('quantiles must be ascending and strictly inside (0, 1)', quantiles=q)
        object.__setattr__(self, 'quantiles', q)
        unknown = sorted(set(self.overrides) - {f.name for f in dataclasses.fields(OptimizerConfig)})
        if unknown:
            raise UsageError('unknown fit overrides', names=unknown)

    def config(self, fr) -> OptimizerConfig:
        """Optimizer settings of the original fit, started at its estimates."""
        base = OptimizerConfig(method=fr.method, start=dict(zip(fr.names, map(float, fr.estimates))),
                               compute_hessian=False)
        return dataclasses.replace(base, **self.overrides)


@dataclass(frozen=True)
class BootIteration:
    index: int
    ok: bool
    message: str = ''
    loglik: Optional[float] = None
    estimation_end: Optional[pd.Timestamp] = None
    holdout_end: Optional[pd.Timestamp] = None


@dataclass(frozen=True)
class BootstrapResult:
    outputs: list                # successful iterations only, in iteration order
    iterations: tuple

    @property
    def successes(self) -> int:
        return sum(1 for it in self.iterations if it.ok)

    @property
    def failures(self) -> int:
        return sum(1 for it in self.iterations if not it.ok)


def with_replacement(rng, ids) -> np.ndarray:
    return rng.choice(np.asarray(ids), size=len(ids), replace=True)


def synthetic_ids(sampled) -> list:
    """Second and later copies of an id become '<id>#<k>'."""
    seen = {}
    out = []
    for src in map(str, sampled):
        k = seen.get(src, 0)
        seen[src] = k + 1
        out.append(src if k == 0 else f'{src}#{k}')
    return out


def _iteration(fr, ds, spec, fn, index, seed_seq, resampler, refit_fn):
    with with_run_id(f'boot-{index}'):
        rng = np.random.default_rng(seed_seq)
        sampled = [str(i) for i in resampler(rng, ds.ids)]
        if len(sampled) != ds.n_customers:
            raise UsageError('resampling must keep the number of customers',
                             expected=ds.n_customers, got=len(sampled))
        boot_ds = ds.resample(sampled, synthetic_ids(sampled))
        try:
            refit = refit_fn(boot_ds)
            if not refit.converged:
                logger.warning('refit did not converge: %s', refit.message)
                return BootIteration(index, False, f'not converged: {refit.message}',
                                     refit.loglik, boot_ds.estimation_end, boot_ds.holdout_end), None
            output = fn(refit, boot_ds)
        except ClvError as exc:
            logger.warning('iteration failed: %s', exc)
            return BootIteration(index, False, str(exc), None, boot_ds.estimation_end,
                                 boot_ds.holdout_end), None
        logger.debug('ll=%.6f', refit.loglik)
        return BootIteration(index, True, '', refit.loglik, boot_ds.estimation_end,
                             boot_ds.holdout_end), output


def bootstrap_apply(fr, ds, spec: BootstrapSpec, fn: Callable,
                    resampler: Callable = with_replacement, threads=None) -> BootstrapResult:
    """Apply ``fn(refit, boot_ds)`` over ``spec.num_boots`` refits.

    Failed or non-converged refits are excluded and counted.
    """
    model = model_spec(fr)
    config = spec.config(fr)
    seeds = np.random.SeedSequence(int(spec.seed)).spawn(int(spec.num_boots))
    logger.info('bootstrap %s: %d iterations, seed %d', fr.family, spec.num_boots, spec.seed)

    def refit_fn(boot_ds):
        return fit_model(model, boot_ds, config, threads=1)

    results = workers.map_items(
        lambda item: _iteration(fr, ds, spec, fn, item[0], item[1], resampler, refit_fn),
        list(enumerate(seeds)), threads)
    iterations = tuple(r[0] for r in results)
    outputs = [r[1] for r in results if r[0].ok]
    failures = sum(1 for it in iterations if not it.ok)
    if failures:
        logger.warning('bootstrap: %d of %d iterations excluded', failures, len(iterations))
    return BootstrapResult(outputs, iterations)


def _label(q: float) -> str:
    return f'{100.0 * q:g}'


def ci_table(outputs, quantiles=None) -> pd.DataFrame:
    """Empirical quantiles (linear interpolation) per parameter or metric."""
    quantiles = tuple(quantiles or conf.get('bootstrap_quantiles'))
    if len(outputs) < 2:
        raise InsufficientIterationsError('at least two successful iterations are required',
                                          successes=len(outputs))
    first = outputs[0]
    if isinstance(first, (pd.Series, dict)):
        frame = pd.DataFrame([pd.Series(o) for o in outputs])
    else:
        frame = pd.DataFrame(np.vstack([np.atleast_1d(np.asarray(o, dtype=np.float64)) for o in outputs]))
    values = np.quantile(frame.to_numpy(dtype=np.float64), quantiles, axis=0, method='linear')
    return pd.DataFrame(values.T, index=frame.columns, columns=[f'{_label(q)}%' for q in quantiles])


def param_ci(fr, ds, spec: BootstrapSpec, threads=None) -> pd.DataFrame:
    """Bootstrap intervals for the model coefficients next to the point estimates."""
    result = bootstrap_apply(fr, ds, spec, lambda refit, _: refit.coef(), threads=threads)
    table = ci_table(result.outputs, spec.quantiles)
    table.insert(0, 'Estimate', fr.coef())
    table.attrs['failures'] = result.failures
    return table


def predict_bootstrap(attrition_fit, ds, spec: BootstrapSpec, spending_fit=None, horizon=None,
                      discount: Optional[DiscountSpec] = None, threads=None) -> pd.DataFrame:
    """Prediction table with '<column>.CI.<q>' columns from refitted models.

    Each iteration refits the attrition (and spending) model on a resample
    and predicts the original customers.
    """
    h = resolve_horizon(ds, horizon)
    point = predict_table(attrition_fit, ds, spending_fit, h, discount, threads)
    columns = [c for c in PREDICTION_COLUMNS if c in point.columns]
    spending = model_spec(spending_fit) if spending_fit is not None else None
    spending_config = spec.config(spending_fit) if spending_fit is not None else None

    def fn(refit, boot_ds):
        spend_refit = None
        if spending is not None:
            spend_refit = fit_model(spending, boot_ds, spending_config, threads=1)
        table = predict_table(refit, ds, spend_refit, h, discount, threads=1)
        return table[columns].to_numpy(dtype=np.float64)

    result = bootstrap_apply(attrition_fit, ds, spec, fn, threads=threads)
    if result.successes < 2:
        raise InsufficientIterationsError('at least two successful iterations are required',
                                          successes=result.successes)
    stacked = np.stack(result.outputs)
    bands = np.quantile(stacked, spec.quantiles, axis=0, method='linear')
    out = point.copy()
    for k, column in enumerate(columns):
        for q, band in zip(spec.quantiles, bands):
            out[f'{column}.CI.{_label(q)}'] = band[:, k]
    out.attrs.update(point.attrs)
    out.attrs['failures'] = result.failures
    return out


def tracking_band(fr, ds, spec: BootstrapSpec, cumulative: bool = False,
                  threads=None) -> pd.DataFrame:
    """Tracking data with per-period quantile bands of the expected repeat transactions."""
    point = plot_tracking_data(fr, ds, cumulative=cumulative, labels=['model'], threads=threads)

    def fn(refit, _):
        data = plot_tracking_data(refit, ds, cumulative=cumulative, labels=['model'], threads=1)
        return data['expected.model'].to_numpy(dtype=np.float64)

    result = bootstrap_apply(fr, ds, spec, fn, threads=threads)
    bands = ci_table(result.outputs, spec.quantiles)
    out = point.copy()
    for q, column in zip(spec.quantiles, bands.columns):
        out[f'expected.model.CI.{_label(q)}'] = bands[column].to_numpy()
    out.attrs['failures'] = result.failures
    return out
