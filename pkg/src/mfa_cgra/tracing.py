"""Call logging for library entry points.

Kernels and Faddeeva operations are wrapped with :func:`traced`.  Inside a
:func:`record_calls` block every wrapped call is appended to the log together
with its nesting depth, so a caller can check which entry points were hit
directly (depth 0) and which only ran underneath another one.
"""

from __future__ import annotations

import contextvars
import functools
from contextlib import contextmanager
from dataclasses import dataclass

_log: contextvars.ContextVar = contextvars.ContextVar("mfa_cgra_call_log", default=None)
_depth: contextvars.ContextVar = contextvars.ContextVar("mfa_cgra_call_depth", default=0)


@dataclass(frozen=True)
class CallRecord:
    name: str
    depth: int


@contextmanager
def record_calls():
    log: list[CallRecord] = []
    token = _log.set(log)
    try:
        yield log
    finally:
        _log.reset(token)


def traced(name: str):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            log = _log.get()
            if log is None:
                return fn(*args, **kwargs)
            depth = _depth.get()
            log.append(CallRecord(name, depth))
            token = _depth.set(depth + 1)
            try:
                return fn(*args, **kwargs)
            finally:
                _depth.reset(token)

        return inner

    return wrap
