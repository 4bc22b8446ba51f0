"""Special functions behind the closed-form likelihoods.

Everything works in log scale: the Pareto/NBD marginal likelihood multiplies
powers like (alpha + T)^-(r+s+x) that overflow long before the customer
summaries get unusual. Signed quantities travel as (log|v|, sign) pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import conf
from .exceptions import DomainError, NumericalError

MAX_QUADRATURE_ORDER = 512


def _unwrap(arr):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr


def log_gamma(x):
    return _unwrap(special.gammaln(x))


def log_beta(a, b):
    """log B(a, b) for positive arguments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError('log_beta needs positive arguments', a=_unwrap(a), b=_unwrap(b))
    return _unwrap(special.betaln(a, b))


def signed_logaddexp(la, sa, lb, sb):
    """log|sa*e^la + sb*e^lb| and its sign, elementwise.

    An exact cancellation gives (-inf, 0).
    """
    la, sa, lb, sb = np.broadcast_arrays(
        np.asarray(la, dtype=np.float64), np.asarray(sa, dtype=np.float64),
        np.asarray(lb, dtype=np.float64), np.asarray(sb, dtype=np.float64),
    )
    a_first = la >= lb
    hi = np.where(a_first, la, lb)
    lo = np.where(a_first, lb, la)
    s_hi = np.where(a_first, sa, sb)
    s_lo = np.where(a_first, sb, sa)
    with np.errstate(invalid='ignore', divide='ignore'):
        d = np.where(np.isneginf(hi), 0.0, np.exp(lo - hi))
        mag = np.where(s_hi == s_lo, np.log1p(d), np.log1p(-d))
        out = np.where(np.isneginf(hi), -np.inf, hi + mag)
    sign = np.where(np.isneginf(out), 0.0, s_hi)
    return out, sign


def _log_series(a, b, c, z, tol, max_terms):
    """Power series of 2F1 in log scale over 1-D arrays."""
    size = a.size
    log_sum = np.zeros(size)
    sign_sum = np.ones(size)
    log_term = np.zeros(size)
    sign_term = np.ones(size)
    active = z != 0.0
    log_tol = np.log(tol)

    for n in range(max_terms):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        ai, bi, ci, zi = a[idx], b[idx], c[idx], z[idx]
        ratio = (ai + n) * (bi + n) / ((ci + n) * (n + 1.0)) * zi
        with np.errstate(divide='ignore'):
            lt = log_term[idx] + np.log(np.abs(ratio))
        st = sign_term[idx] * np.sign(ratio)
        ls, ss = signed_logaddexp(log_sum[idx], sign_sum[idx], lt, st)
        log_term[idx], sign_term[idx] = lt, st
        log_sum[idx], sign_sum[idx] = ls, ss

        m = n + 1
        shrinking = np.abs((ai + m) * (bi + m) / ((ci + m) * (m + 1.0)) * zi) < 1.0
        done = np.isneginf(lt) | ((lt - ls < log_tol) & shrinking)
        active[idx[done]] = False

    if active.any():
        k = int(np.flatnonzero(active)[0])
        raise NumericalError(
            f'2F1 series did not converge within {max_terms} terms',
            a=float(a[k]), b=float(b[k]), c=float(c[k]), z=float(z[k]),
        )
    return log_sum, sign_sum


def _log_near_one(a, b, c, z):
    """2F1 for z close to 1 via scipy, whose real-argument routine switches to
    the 1-z connection formulas (with the digamma form for integer c-a-b).

    Callers pass the Euler-transformed arguments, so c-a-b >= 0 and the value
    stays moderate; only the prefix carries the large powers.
    """
    with np.errstate(all='ignore'):
        val = special.hyp2f1(a, b, c, z)
    bad = ~np.isfinite(val)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise NumericalError('2F1 near z = 1 not finite', a=float(a[k]), b=float(b[k]),
                             c=float(c[k]), z=float(z[k]))
    with np.errstate(divide='ignore'):
        return np.log(np.abs(val)), np.sign(val)


def log_gauss_2f1(a, b, c, z, tol=None, max_terms=None):
    """log|2F1(a, b; c; z)| and sign for real z in (-1, 1).

    Negative z goes through the Pfaff transformation onto (0, 1/2). For
    positive z the Euler transformation
    2F1(a,b;c;z) = (1-z)^(c-a-b) 2F1(c-a, c-b; c; z) is used whenever it
    makes the series terms decay faster (a + b > c). What remains above
    ``hyp2f1_near_one`` converges only algebraically as a series and is
    evaluated through the 1-z connection formulas instead. The likelihood
    only ever passes z = |alpha - beta| / (max(alpha, beta) + t), which lies
    in [0, 1), so no continuation past the unit disc is needed.
    """
    tol = conf.get('hyp2f1_tol') if tol is None else tol
    max_terms = conf.get('hyp2f1_max_terms') if max_terms is None else max_terms
    near_one = conf.get('hyp2f1_near_one')

    a, b, c, z = np.broadcast_arrays(
        np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
        np.asarray(c, dtype=np.float64), np.asarray(z, dtype=np.float64),
    )
    shape = z.shape
    # 2F1 is symmetric in (a, b); sorting makes the result bitwise symmetric
    a, b = np.minimum(a, b).ravel(), np.maximum(a, b).ravel()
    c, z = c.ravel(), z.ravel()

    if np.any(~(np.abs(z) < 1.0)):
        raise DomainError('log_gauss_2f1 needs |z| < 1', z=float(z[~(np.abs(z) < 1.0)][0]))
    if np.any(~(c > 0)):
        raise DomainError('log_gauss_2f1 needs c > 0', c=float(c[~(c > 0)][0]))

    prefix = np.zeros_like(z)
    sa, sb, sz = a.copy(), b.copy(), z.copy()

    neg = z < 0
    if neg.any():
        # Pfaff: (1-z)^-a 2F1(a, c-b; c; z/(z-1))
        prefix[neg] = -a[neg] * np.log1p(-z[neg])
        sb[neg] = c[neg] - b[neg]
        sz[neg] = z[neg] / (z[neg] - 1.0)

    euler = (sz > 0) & (sa + sb > c)
    if euler.any():
        prefix[euler] += (c[euler] - sa[euler] - sb[euler]) * np.log1p(-sz[euler])
        ea, eb = c[euler] - sa[euler], c[euler] - sb[euler]
        sa[euler], sb[euler] = ea, eb

    log_s, sign_s = np.empty_like(sz), np.empty_like(sz)
    near = sz > near_one
    if near.any():
        log_s[near], sign_s[near] = _log_near_one(sa[near], sb[near], c[near], sz[near])
    far = ~near
    if far.any():
        log_s[far], sign_s[far] = _log_series(sa[far], sb[far], c[far], sz[far], tol, max_terms)
    out = prefix + log_s
    if np.any(~np.isfinite(out) & (sign_s != 0)):
        k = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NumericalError('2F1 evaluation overflowed', a=float(a[k]), b=float(b[k]),
                             c=float(c[k]), z=float(z[k]))
    return _unwrap(out.reshape(shape)), _unwrap(sign_s.reshape(shape))


def log_tricomi_u(a, b, z):
    """log U(a, b, z) for real a, z > 0 (confluent hypergeometric, 2nd kind)."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise DomainError('Tricomi U needs z > 0')
    with np.errstate(over='ignore', invalid='ignore'):
        val = special.hyperu(a, b, z)
        out = np.log(val)
    if np.any(~np.isfinite(out)):
        raise NumericalError('Tricomi U not finite', a=_unwrap(a), b=_unwrap(b))
    return _unwrap(out)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Laguerre rule for the weight u^shape * e^-u on (0, inf)."""
    nodes: np.ndarray
    log_weights: np.ndarray
    order: int
    shape: float = 0.0

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def integrate(self, fn):
        return float(np.sum(self.weights * fn(self.nodes)))


@lru_cache(maxsize=256)
def _laguerre(order, shape):
    if shape == 0.0:
        nodes, weights = special.roots_laguerre(order)
    else:
        nodes, weights = special.roots_genlaguerre(order, shape)
    with np.errstate(divide='ignore'):
        log_weights = np.log(weights)
    nodes = np.asarray(nodes, dtype=np.float64)
    nodes.flags.writeable = False
    log_weights.flags.writeable = False
    return QuadratureRule(nodes=nodes, log_weights=log_weights, order=order, shape=shape)


def gauss_laguerre(order, shape=0.0):
    """Nodes and log weights of the (generalised) Gauss-Laguerre rule.

    Weights that underflow double precision come back as log weight -inf;
    their nodes carry no mass at this order anyway.
    """
    if not (1 <= int(order) <= MAX_QUADRATURE_ORDER) or int(order) != order:
        raise DomainError(f'quadrature order must be in 1..{MAX_QUADRATURE_ORDER}', order=order)
    if not shape > -1.0:
        raise DomainError('generalised Laguerre shape must exceed -1', shape=shape)
    return _laguerre(int(order), float(shape))


def gamma_nodes(shape, rate, order):
    """Nodes and log weights integrating against a Gamma(shape, rate) density.

    Sum(exp(log_w) * f(nodes)) approximates E[f(X)], X ~ Gamma(shape, rate).
    """
    rule = gauss_laguerre(order, shape - 1.0)
    return rule.nodes / rate, rule.log_weights - special.gammaln(shape)
