"""Backend selection for the verifier hot kernels.

Prefers the compiled Cython extension; falls back to the numpy reference
implementation when the extension is missing or UDLFLOW_PURE_PYTHON=1.
Both expose the same two functions with identical semantics, so the
fallback keeps every feature working, just slower inside branch and
bound. benchmarks/bench_backends.py compares the two.
"""

import os

if os.environ.get("UDLFLOW_PURE_PYTHON", "") == "1":
    from . import _fallback as _impl
else:
    try:
        from . import _corex as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _fallback as _impl

BACKEND = _impl.BACKEND
stack_interval = _impl.stack_interval
stack_point = _impl.stack_point
stack_points = _impl.stack_points
stack_margins = _impl.stack_margins

__all__ = ["BACKEND", "stack_interval", "stack_point", "stack_points",
           "stack_margins"]
