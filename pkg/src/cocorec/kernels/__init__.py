"""Hot numeric kernels with two interchangeable backends.

The model's inner loops (per-event encoder/gate forward and the hand-derived
backward pass) are implemented twice: once as plain vectorized numpy
(`_numpy`) and once as numba ``@njit`` loops (`_numba`).  The backend is
selected once at import time via the ``COCOREC_BACKEND`` environment
variable:

    COCOREC_BACKEND=numba   force numba (error if numba is missing)
    COCOREC_BACKEND=numpy   force the pure-numpy fallback
    unset                   numba if importable, else numpy

Both backends expose the same functions and must agree to float rounding;
``tests/test_kernels.py`` enforces this, and ``python -m cocorec.bench``
compares their speed.

Exported functions
------------------
encode_event(item_emb, user_emb, u, recent, ctx) -> (h_m, h_n)
gate_scores(item_emb, cand, h_m, h_n, gate_w, gate_b) -> (lam, scores)
softmax(x) -> p
event_loss(item_emb, user_emb, gate_w, gate_b, u, recent, ctx, cand, t_pos, y_n, y_m) -> (l1, l2)
event_loss_grad(..., beta, weight, d_item, d_user, d_w, d_b) -> (l1, l2)
"""

import os

_requested = os.environ.get("COCOREC_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(f"COCOREC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    BACKEND = "numpy"
elif _requested == "numba":
    from . import _numba_impl  # noqa: F401  (raises if numba is unavailable)

    BACKEND = "numba"
else:
    try:
        from . import _numba_impl  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        BACKEND = "numpy"

if BACKEND == "numba":
    from ._numba_impl import (
        encode_event,
        event_loss,
        event_loss_grad,
        gate_scores,
        softmax,
    )
else:
    from ._numpy_impl import (
        encode_event,
        event_loss,
        event_loss_grad,
        gate_scores,
        softmax,
    )

__all__ = [
    "BACKEND",
    "encode_event",
    "event_loss",
    "event_loss_grad",
    "gate_scores",
    "softmax",
]
