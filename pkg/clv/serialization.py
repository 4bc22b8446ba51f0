"""FitResult <-> JSON.

The document carries ``schema_version``; loading rebuilds the parameter
object of the family so a loaded fit predicts like the original.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import conf
from .estimation import FitResult, GammaGammaSpec, PnbdSpec
from .exceptions import InputError
from .gamma_gamma import GgParams
from .pnbd import ModelOptions, PnbdParams
from .pnbd_dynamic import DynamicPnbdSpec

logger = logging.getLogger(__name__)

_SCALARS = ('family', 'loglik', 'n_customers', 'method', 'fevals', 'converged', 'kkt1', 'kkt2',
            'aic', 'bic', 'message')


def _matrix(value):
    return None if value is None else np.asarray(value, dtype=np.float64).tolist()


def fit_to_dict(fr: FitResult) -> dict:
    doc = {'schema_version': conf.get('schema_version')}
    for key in _SCALARS:
        doc[key] = getattr(fr, key)
    doc['names'] = list(fr.names)
    doc['kinds'] = list(fr.kinds)
    doc['estimates'] = [float(v) for v in fr.estimates]
    if isinstance(fr.params, PnbdParams):
        doc['covariates'] = {'trans': list(fr.params.names_trans), 'life': list(fr.params.names_life)}
    doc['options'] = fr.options
    doc['diagnostics'] = list(fr.diagnostics)
    doc['gradient'] = _matrix(fr.gradient)
    doc['hessian'] = _matrix(fr.hessian)
    doc['vcov'] = _matrix(fr.vcov)
    return doc


def _params(doc: dict):
    values = dict(zip(doc['names'], doc['estimates']))
    if doc['family'] == 'gg':
        return GgParams(values['p'], values['q'], values['gamma'])
    cov = doc.get('covariates') or {}
    names_trans = tuple(cov.get('trans', ()))
    names_life = tuple(cov.get('life', ()))

    def coef(process, name):
        return values.get(f'constr.{name}', values.get(f'{process}.{name}'))

    return PnbdParams(
        values['r'], values['alpha'], values['s'], values['beta'],
        gamma_trans=tuple(coef('trans', n) for n in names_trans),
        gamma_life=tuple(coef('life', n) for n in names_life),
        m=values.get('m'), names_trans=names_trans, names_life=names_life,
    )


def fit_from_dict(doc: dict) -> FitResult:
    version = doc.get('schema_version')
    if version != conf.get('schema_version'):
        raise InputError('unsupported model file version', schema_version=version)
    missing = [k for k in (*_SCALARS, 'names', 'kinds', 'estimates') if k not in doc]
    if missing:
        raise InputError('model file is incomplete', missing=missing)

    def array(key):
        value = doc.get(key)
        return None if value is None else np.asarray(value, dtype=np.float64)

    return FitResult(
        names=tuple(doc['names']), kinds=tuple(doc['kinds']), estimates=array('estimates'),
        params=_params(doc), gradient=array('gradient'), hessian=array('hessian'),
        vcov=array('vcov'), options=dict(doc.get('options') or {}),
        diagnostics=tuple(doc.get('diagnostics') or ()),
        **{key: doc[key] for key in _SCALARS},
    )


def dump_fit(fr: FitResult, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fit_to_dict(fr), indent=2) + '\n', encoding='utf-8')
    logger.info('wrote %s model to %s', fr.family, path)
    return path


def load_fit(path) -> FitResult:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f'cannot read model file: {exc}', path=str(path))
    return fit_from_dict(doc)


def model_spec(fr: FitResult):
    """Model specification that reproduces ``fr`` on another dataset."""
    opts = fr.options or {}
    if fr.family == 'gg':
        return GammaGammaSpec(bool(opts.get('remove_first_transaction', True)))
    options = ModelOptions(
        use_correlation=bool(opts.get('use_correlation')),
        reg_lambdas=tuple(opts['reg_lambdas']) if opts.get('reg_lambdas') else None,
        constrained_names=tuple(opts.get('constrained_names') or ()),
    )
    names_trans, names_life = fr.params.names_trans, fr.params.names_life
    if fr.family == 'pnbd-dynamic':
        return DynamicPnbdSpec(options, names_trans, names_life, opts.get('quadrature_order'))
    return PnbdSpec(options, names_trans, names_life)
