"""Central-difference gradient checks for scalar graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class GradientError(FloatingPointError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    worst_pair: dict[str, tuple[float, float]] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.worst < tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must rebuild the graph from the current parameter values on every
    call and return a scalar. Parameters are expected in float64. With
    ``max_entries`` set, only that many randomly chosen coordinates of each
    parameter are perturbed.
    """
    for _, p in params:
        p.grad = np.zeros_like(p.data)
    out = f()
    out.backward()
    report = GradCheckReport()
    rng = rng or np.random.default_rng(0)
    for name, p in params:
        analytic = p.grad
        if not np.all(np.isfinite(analytic)):
            raise GradientError(f"non-finite analytic gradient for parameter {name!r}")
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        pair = (0.0, 0.0)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            a = float(analytic.reshape(-1)[i])
            err = relative_error(a, numeric, floor)
            if err >= worst:
                worst, pair = err, (a, numeric)
        report.max_rel_error[name] = worst
        report.worst_pair[name] = pair
        report.checked[name] = len(coords)
    return report
