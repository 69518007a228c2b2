"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    worst: tuple | None

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-3


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """``|a - n| / max(|a|, |n|, floor)``."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3,
              floor: float = 1e-4, max_per_input: int | None = None,
              rng: np.random.Generator | None = None) -> GradcheckResult:
    """Compare reverse-mode gradients of the scalar ``fn()`` with central differences.

    ``fn`` must rebuild its graph on every call from the current ``inputs``
    data.  With ``max_per_input`` only that many randomly chosen coordinates
    of each input are perturbed.
    """
    for x in inputs:
        x.grad = None
    out = fn()
    backward(out)
    analytic = [np.array(x.grad if x.grad is not None else np.zeros_like(x.data), dtype=np.float64)
                for x in inputs]
    rng = rng or np.random.default_rng(0)
    worst, worst_at, checked = 0.0, None, 0
    for k, x in enumerate(inputs):
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_input is not None and flat.size > max_per_input:
            coords = rng.choice(flat.size, size=max_per_input, replace=False)
        for i in coords:
            orig = flat[i].copy()
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            err = relative_error(float(analytic[k].reshape(-1)[i]), numeric, floor)
            checked += 1
            if err > worst:
                worst, worst_at = err, (k, int(i), float(analytic[k].reshape(-1)[i]), numeric)
    return GradcheckResult(worst, checked, worst_at)
