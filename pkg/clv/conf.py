"""Runtime configuration for the clv app.

Values come from ``settings.CLV`` (merged over ``DEFAULTS``). The library is
also usable without a configured Django project; then the defaults apply.
"""
from __future__ import annotations

import os

from django.core.exceptions import ImproperlyConfigured

DEFAULTS = {
    'time_unit': 'week',
    'date_format': 'ymd',
    'discount_annual': 0.10,
    # Gauss-Laguerre (dynamic covariates + oracles)
    'quadrature_order': 64,
    'quadrature_orders': (64, 128, 256),
    'quadrature_tol': 1e-6,
    # 2F1 power series; above near_one the 1-z connection formulas take over
    'hyp2f1_tol': 1e-15,
    'hyp2f1_max_terms': 10000,
    'hyp2f1_near_one': 0.9,
    # optimizer
    'optimizer_max_evals': 3000,
    'optimizer_tol': 1e-8,
    'kkt_grad_tol': 1e-4,
    'kkt_eig_tol': 1e-8,
    'start_base': 1.0,
    'start_cov': 0.1,
    'start_m': 0.0,
    'threads': 1,
    'bootstrap_quantiles': (0.05, 0.95),
    'min_ess': 50,
    'schema_version': 1,
}


def _env_threads():
    raw = os.environ.get('CLV_THREADS', '').strip()
    if not raw:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        raise ImproperlyConfigured(f'CLV_THREADS must be an integer, got {raw!r}')


def _overrides():
    try:
        from django.conf import settings
        if not settings.configured:
            return {}
        return dict(getattr(settings, 'CLV', {}) or {})
    except ImproperlyConfigured:
        # DJANGO_SETTINGS_MODULE not set: plain library use
        return {}


def snapshot():
    """Merged configuration as a plain dict."""
    merged = dict(DEFAULTS)
    env_threads = _env_threads()
    if env_threads is not None:
        merged['threads'] = env_threads
    overrides = _overrides()
    unknown = sorted(set(overrides) - set(DEFAULTS))
    if unknown:
        raise ImproperlyConfigured(f'Unknown CLV settings: {", ".join(unknown)}')
    merged.update(overrides)
    return merged


def get(key):
    if key not in DEFAULTS:
        raise ImproperlyConfigured(f'Unknown CLV setting {key!r}')
    return snapshot()[key]
