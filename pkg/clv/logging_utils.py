"""Strukturiertes Logging mit ContextVar-basierter Korrelation.

Beispiel:
    from clv.logging_utils import with_run_id

    with with_run_id('boot-7'):
        logger.info('refit START')
        ...

Alle Log-Records aus diesem ContextVar-Scope kriegen `record.run_id`
gesetzt; der Format-String '{run_str}' macht daraus '[run=...] ' bzw.
leeren String wenn nicht gesetzt.
"""
from __future__ import annotations

import contextvars
import logging
import uuid
from contextlib import contextmanager

_run_id_var: contextvars.ContextVar = contextvars.ContextVar(
    'clv_run_id', default=None,
)


@contextmanager
def with_run_id(run_id=None):
    """Setzt den Run-ID-Kontext fuer alle Log-Calls im with-Block.

    Ohne Argument wird eine kurze zufaellige ID vergeben. Verschachtelte
    Scopes haengen ihre ID an die aeussere an ('a1b2c3/boot-4').
    """
    if run_id is None:
        run_id = uuid.uuid4().hex[:8]
    outer = _run_id_var.get()
    token = _run_id_var.set(f'{outer}/{run_id}' if outer else str(run_id))
    try:
        yield _run_id_var.get()
    finally:
        _run_id_var.reset(token)


def current_run_id():
    return _run_id_var.get()


class RunContextFilter(logging.Filter):
    """Haengt run_id + run_str an jeden LogRecord."""

    def filter(self, record: logging.LogRecord) -> bool:
        run_id = _run_id_var.get()
        record.run_id = run_id if run_id is not None else ''
        record.run_str = f'[run={run_id}] ' if run_id is not None else ''
        return True
