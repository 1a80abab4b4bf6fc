"""Order-stable parallel map over independent per-example attacks.

Uses fork-based worker processes so arbitrary closures can be dispatched;
falls back to a serial loop when that is unavailable or pointless. Results
are collected by index, so the output is identical at any worker count.
"""

from __future__ import annotations

import multiprocessing

_FORK_STATE: dict = {}


def _fork_call(i: int):
    return _FORK_STATE["fn"](_FORK_STATE["items"][i])


def run_parallel(fn, items, n_jobs: int = 1) -> list:
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        return [fn(item) for item in items]
    _FORK_STATE["fn"] = fn
    _FORK_STATE["items"] = items
    try:
        with ctx.Pool(min(n_jobs, len(items))) as pool:
            return pool.map(_fork_call, range(len(items)))
    finally:
        _FORK_STATE.clear()
