"""Gamma-Gamma model of average transaction value.

Each transaction value is Gamma(p, nu) with a customer-specific rate nu
drawn from Gamma(q, gamma). Only the customer's mean spend zbar over x_s
transactions enters the likelihood.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .dataset import ID, PRICE
from .exceptions import DivergentMeanError, DomainError, InputError
from .special_functions import log_beta

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GgParams:
    p: float
    q: float
    gamma: float

    def __post_init__(self):
        for name in ('p', 'q', 'gamma'):
            value = float(getattr(self, name))
            if not (np.isfinite(value) and value > 0):
                raise DomainError(f'{name} must be positive and finite', **{name: value})
            object.__setattr__(self, name, value)

    @property
    def finite_mean(self) -> bool:
        return self.q > 1.0

    def as_dict(self) -> dict:
        return {'p': self.p, 'q': self.q, 'gamma': self.gamma}


@dataclass(frozen=True)
class SpendingObservation:
    x_s: int
    zbar: float
    customer_id: Optional[str] = None

    def __post_init__(self):
        if int(self.x_s) < 1 or int(self.x_s) != self.x_s:
            raise InputError('x_s must be a positive integer', x_s=self.x_s,
                             customer_id=self.customer_id)
        if not (np.isfinite(self.zbar) and self.zbar > 0):
            raise InputError('mean spending must be positive', zbar=self.zbar,
                             customer_id=self.customer_id)


def _arrays(obs):
    x_s = np.array([o.x_s for o in obs], dtype=np.float64)
    zbar = np.array([o.zbar for o in obs], dtype=np.float64)
    return x_s, zbar


def log_density(params: GgParams, x_s, zbar):
    """log f(zbar | p, q, gamma; x_s), elementwise."""
    px = params.p * np.asarray(x_s, dtype=np.float64)
    zbar = np.asarray(zbar, dtype=np.float64)
    if np.any(~(zbar > 0)):
        raise InputError('mean spending must be positive')
    q, g = params.q, params.gamma
    return (-log_beta(px, q) + q * np.log(g) + (px - 1.0) * np.log(zbar) + px * np.log(x_s)
            - (px + q) * np.log(g + x_s * zbar))


def gg_loglik(params: GgParams, obs) -> float:
    obs = list(obs)
    if not obs:
        return 0.0
    x_s, zbar = _arrays(obs)
    # fsum is exactly rounded: observation order cannot change the total
    return math.fsum(log_density(params, x_s, zbar))


def spending_inputs(ds, remove_first_transaction: bool = True) -> list:
    """Per-customer (x_s, zbar) from the estimation period.

    With ``remove_first_transaction`` the first purchase is left out and
    customers without repeat purchases are dropped.
    """
    ds.require_prices()
    tx = ds.sample_transactions('estimation')
    if remove_first_transaction:
        tx = tx[tx.duplicated(ID, keep='first')]
    grouped = tx.groupby(ID)[PRICE]
    table = pd.DataFrame({'x_s': grouped.size(), 'zbar': grouped.mean()})
    dropped = int((table['zbar'] <= 0).sum())
    if dropped:
        logger.warning('dropping %d customers with zero mean spending', dropped)
        table = table[table['zbar'] > 0]
    return [SpendingObservation(int(row.x_s), float(row.zbar), str(cid))
            for cid, row in table.iterrows()]


def population_mean(params: GgParams) -> float:
    if params.q <= 1.0:
        raise DivergentMeanError('population mean spending needs q > 1', q=params.q)
    return params.p * params.gamma / (params.q - 1.0)


def expected_mean_spending(params: GgParams, obs: Optional[SpendingObservation] = None) -> float:
    """Posterior mean of the average transaction value.

    nu | data ~ Gamma(q + p x_s, gamma + x_s zbar), so E[p / nu] is a
    weighted average of the population mean and zbar.
    """
    if obs is None:
        return population_mean(params)
    if params.q <= 1.0:
        raise DivergentMeanError('expected spending needs q > 1', q=params.q)
    return params.p * (params.gamma + obs.x_s * obs.zbar) / (params.p * obs.x_s + params.q - 1.0)


def expected_mean_spending_vector(params: GgParams, x_s, zbar) -> np.ndarray:
    """Vectorised posterior mean; x_s = 0 falls back to the population mean."""
    x_s = np.asarray(x_s, dtype=np.float64)
    zbar = np.nan_to_num(np.asarray(zbar, dtype=np.float64))
    if params.q <= 1.0:
        raise DivergentMeanError('expected spending needs q > 1', q=params.q)
    return params.p * (params.gamma + x_s * zbar) / (params.p * x_s + params.q - 1.0)


def shrinkage_weight(params: GgParams, x_s: int) -> float:
    """Weight on the customer's own zbar in the posterior mean."""
    return params.p * x_s / (params.p * x_s + params.q - 1.0)


def mean_spending_density(params: GgParams, grid, x_s: int = 1) -> np.ndarray:
    return np.exp(log_density(params, np.full_like(np.asarray(grid, dtype=np.float64), x_s), grid))
