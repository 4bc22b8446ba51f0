"""Gemeinsame Testdaten (einmal erzeugt, dann gecacht)."""
from functools import lru_cache

import pandas as pd

from clv import dataset
from clv.estimation import GammaGammaSpec, OptimizerConfig, PnbdSpec, fit
from clv.gamma_gamma import GgParams
from clv.pnbd import PnbdParams
from clv.simulation import CovariateSpec, SimScenario, simulate

# Kleines Log mit bekannten Kennzahlen (Wochen, Split nach 4 Wochen ab 2020-01-06):
#   1: x=1, t_x=2, T=4, ein Holdout-Kauf; zwei Käufe am 06.01. werden zusammengefasst
#   2: x=0, T=3
#   3: x=1, t_x=3/7, T=1, ein Holdout-Kauf
#   4: erster Kauf im Holdout -> verworfen
TINY_ROWS = [
    ('1', '2020-01-06', 10.0),
    ('1', '2020-01-06', 5.0),
    ('1', '2020-01-20', 20.0),
    ('1', '2020-02-10', 30.0),
    ('2', '2020-01-13', 8.0),
    ('3', '2020-01-27', 12.0),
    ('3', '2020-01-30', 4.0),
    ('3', '2020-02-17', 6.0),
    ('4', '2020-02-12', 9.0),
]

BASE = PnbdParams(0.8, 10.0, 0.6, 12.0)
SPEND = GgParams(4.0, 12.0, 60.0)


def tiny_frame():
    return pd.DataFrame(TINY_ROWS, columns=[dataset.ID, dataset.DATE, dataset.PRICE])


@lru_cache(maxsize=None)
def tiny():
    return dataset.ingest(tiny_frame(), time_unit='week', estimation_split=4)


def scenario(n=600, seed=7, holdout=26.0, **changes):
    fields = dict(n_customers=n, seed=seed, params=BASE, gg_params=SPEND, estimation_length=52.0,
                  holdout_length=holdout, cohort_length=8.0)
    fields.update(changes)
    return SimScenario(**fields)


@lru_cache(maxsize=None)
def simulated():
    return simulate(scenario())


@lru_cache(maxsize=None)
def sim_ds():
    return simulated().dataset()


@lru_cache(maxsize=None)
def pnbd_fit():
    return fit(PnbdSpec(), sim_ds(), OptimizerConfig())


@lru_cache(maxsize=None)
def gg_fit(remove_first=True):
    return fit(GammaGammaSpec(remove_first_transaction=remove_first), sim_ds(), OptimizerConfig())


@lru_cache(maxsize=None)
def static_cov_ds():
    sc = scenario(n=500, seed=11,
                  params=PnbdParams(0.8, 10.0, 0.6, 12.0, gamma_trans=(0.5,), gamma_life=(-0.4,)),
                  covariates=CovariateSpec(mode='static', names=('gender',)))
    return simulate(sc).dataset()


@lru_cache(maxsize=None)
def dynamic_cov_ds():
    sc = scenario(n=80, seed=13, holdout=13.0, estimation_length=26.0, cohort_length=4.0,
                  params=PnbdParams(0.8, 10.0, 0.6, 12.0, gamma_trans=(0.4,), gamma_life=(-0.3,)),
                  covariates=CovariateSpec(mode='dynamic', names=('season',),
                                           distribution='seasonal', period=6))
    return simulate(sc).dataset()


@lru_cache(maxsize=None)
def dynamic_fit():
    # wenige Schritte ab den wahren Werten; nur für Vorhersage- und CLI-Tests
    from clv.pnbd_dynamic import DynamicPnbdSpec
    start = {'r': 0.8, 'alpha': 10.0, 's': 0.6, 'beta': 12.0, 'trans.season': 0.4, 'life.season': -0.3}
    return fit(DynamicPnbdSpec(), dynamic_cov_ds(), OptimizerConfig(start=start, max_evals=40))


@lru_cache(maxsize=None)
def small_ds():
    return simulate(scenario(n=150, seed=17)).dataset()


@lru_cache(maxsize=None)
def small_fit():
    return fit(PnbdSpec(), small_ds(), OptimizerConfig())


@lru_cache(maxsize=None)
def recovery_ds():
    # 10 000 Kunden, 104 Wochen; Kaufraten klein genug, dass Tagesaggregation nichts verschluckt
    return simulate(scenario(n=10_000, seed=29, holdout=0.0, estimation_length=104.0)).dataset()


@lru_cache(maxsize=None)
def recovery_fit():
    return fit(PnbdSpec(), recovery_ds(), OptimizerConfig(compute_hessian=False))
