"""Finite-difference verification oracle for the taped gradients.

The checker re-evaluates the supplied function in float64 so that the
central-difference probes are limited by truncation error rather than by
float32 rounding; the library itself stays float32.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericsError, ShapeError
from .tensor import Tensor

REL_FLOOR = 1e-8


def finite_diff_check(
    f: Callable[[list[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    n_coords: int = 64,
    seed: int = 0,
) -> float:
    """Compare taped gradients of ``f`` against central finite differences.

    ``f`` must map a list of parameter tensors to a scalar Tensor and be pure
    in those parameters. A random sample of coordinates (``n_coords``, or all
    of them if fewer exist) is probed at ``p ± eps`` and the worst relative
    error ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` is
    returned.
    """
    if eps <= 0:
        raise ValueError(f"finite_diff_check needs eps > 0, got {eps}")
    if n_coords < 1:
        raise ValueError("n_coords must be >= 1")
    work = [Tensor(p.data.astype(np.float64), requires_grad=True) for p in params]

    out = f(work)
    if not isinstance(out, Tensor) or out.ndim != 0:
        raise ShapeError("finite_diff_check target must return a scalar Tensor")
    out.backward()
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in work
    ]

    sizes = [p.size for p in work]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    if total == 0:
        raise ValueError("no parameter coordinates to check")
    rng = np.random.default_rng(seed)
    k = min(n_coords, total)
    coords = rng.choice(total, size=k, replace=False)

    def evaluate() -> float:
        val = float(f(work).data)
        if not np.isfinite(val):
            raise NumericsError("non-finite function value at finite-difference probe")
        return val

    worst = 0.0
    for flat in coords:
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        off = int(flat - offsets[pi])
        buf = work[pi].data.reshape(-1)
        orig = buf[off]
        buf[off] = orig + eps
        f_plus = evaluate()
        buf[off] = orig - eps
        f_minus = evaluate()
        buf[off] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[pi].reshape(-1)[off])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
        worst = max(worst, rel)
    return worst
