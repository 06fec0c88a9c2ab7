"""Central finite-difference gradient checking.

The numeric side perturbs parameter entries one at a time and re-runs the
loss builder, so it is independent of the backward implementation it
verifies. Run it on float64 parameters; float32 noise drowns the signal.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward


def _relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a) + abs(n), 1e-4)


def _central_diff(build_loss, flat, i, orig, h) -> float:
    flat[i] = orig + h
    f_plus = float(build_loss().data)
    flat[i] = orig - h
    f_minus = float(build_loss().data)
    flat[i] = orig
    return (f_plus - f_minus) / (2.0 * h)


def _numeric_grad(build_loss, flat, i, step, levels=4) -> float:
    """Central difference with adaptive step refinement.

    Piecewise-smooth losses (relu, max pooling) put kinks near the
    evaluation point; a fixed step straddling a kink gives a wrong
    estimate. Estimates at successive step reductions converge once the
    step drops below the distance to the nearest kink, so accept the
    first pair that agrees, and otherwise keep the best-agreeing pair.
    """
    h = step
    prev = _central_diff(build_loss, flat, i, flat[i], h)
    best = (np.inf, prev)
    for _ in range(levels):
        h *= 0.25
        cur = _central_diff(build_loss, flat, i, flat[i], h)
        diff = abs(cur - prev)
        if diff <= max(1e-9, 1e-6 * (abs(cur) + abs(prev))):
            return cur
        if diff < best[0]:
            best = (diff, cur)
        prev = cur
    return best[1]


def grad_check(
    build_loss: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """Compare analytic gradients against central differences.

    ``build_loss`` rebuilds the scalar loss from the current parameter
    values. Returns per-parameter max relative error over the checked
    entries (all entries unless ``max_entries`` caps them per parameter).
    """
    loss = build_loss()
    if loss.size != 1:
        raise ValueError("build_loss must produce a scalar")
    backward(loss)
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    report: Dict[str, float] = {}
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=max_entries, replace=False)
        else:
            idxs = range(n)
        worst = 0.0
        ana = analytic[p.name].reshape(-1)
        for i in idxs:
            numeric = _numeric_grad(build_loss, flat, i, step)
            worst = max(worst, _relative_error(float(ana[i]), numeric))
        report[p.name] = worst
    return report


def max_error(report: Dict[str, float]) -> float:
    return max(report.values()) if report else 0.0
