"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``BSDEMEASURE_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

NAME = "python"
_compiled = None
if os.environ.get("BSDEMEASURE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
        NAME = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None


def _seed(seed):
    return int(seed) % 2**64


def normal_block(seed, path_start, n_paths, step_start, n_steps, stream=0, n_threads=1, backend=None):
    if _use_compiled(backend):
        return _compiled.normal_block(_seed(seed), path_start, n_paths, step_start, n_steps, stream, n_threads)
    return _fallback.normal_block(_seed(seed), path_start, n_paths, step_start, n_steps, stream)


def uniform_block(seed, path_start, n_paths, step_start, n_steps, stream, n_threads=1, backend=None):
    if _use_compiled(backend):
        return _compiled.uniform_block(_seed(seed), path_start, n_paths, step_start, n_steps, stream, n_threads)
    return _fallback.uniform_block(_seed(seed), path_start, n_paths, step_start, n_steps, stream)


def first_passage(seed, path_start, n_paths, dt, max_steps, slope, intercepts, drifts, bridge,
                  record_steps=(), n_threads=1, backend=None):
    intercepts = np.ascontiguousarray(intercepts, dtype=np.float64)
    drifts = np.ascontiguousarray(drifts, dtype=np.float64)
    record_steps = np.ascontiguousarray(np.sort(np.asarray(record_steps, dtype=np.int64)))
    if len(drifts) != len(intercepts):
        raise ValueError("need one proposal drift per barrier segment")
    if _use_compiled(backend):
        return _compiled.first_passage(_seed(seed), path_start, n_paths, dt, max_steps, slope,
                                       intercepts, drifts, bool(bridge), record_steps, n_threads)
    return _fallback.first_passage(_seed(seed), path_start, n_paths, dt, max_steps, slope,
                                   intercepts, drifts, bool(bridge), record_steps)


def available():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def _use_compiled(backend):
    if backend is None:
        return _compiled is not None
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return True
    if backend == "python":
        return False
    raise ValueError(f"unknown backend {backend!r}")
