"""Central finite-difference oracle for the reverse-mode engine.

Networks built from ReLU, PReLU, |x|, max-pooling and clamps are only
piecewise smooth. A central difference whose ``+eps``/``-eps`` evaluations
land on a different piece than the base point measures the jump, not the
derivative, so every probe is taken on a single piece: the step shrinks until
all piecewise ops choose the same branches as at the base point, and probes
that straddle a kink even at the smallest step are reported as such.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import BranchRecorder, Tape, Tensor, backward

DEFAULT_STEPS = (1e-6, 1e-7, 1e-8)


def analytic_grads(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    return [p.grad.copy() for p in params]


@dataclass
class GradCheck:
    max_rel_err: float
    probes: int
    straddled: int  # probes skipped because every step crossed a kink

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance and self.straddled < self.probes


def _evaluate(f: Callable[[], Tensor]) -> tuple[float, BranchRecorder]:
    with BranchRecorder() as rec:
        value = f().item()
    return value, rec


def gradient_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                   steps: Sequence[float] = DEFAULT_STEPS, max_probes: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> GradCheck:
    """Compare backward() against branch-consistent central differences of ``f``.

    ``f`` takes no arguments and returns a scalar tensor computed from
    ``params``. Each parameter contributes every coordinate, or a random subset
    of ``max_probes`` coordinates when given. The error of a probe is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    grads = analytic_grads(f, params)
    _, base = _evaluate(f)
    worst, probes, straddled = 0.0, 0, 0
    for p, grad in zip(params, grads):
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            coords = np.sort(rng.choice(flat.size, size=max_probes, replace=False))
        for i in coords:
            probes += 1
            orig = flat[i]
            numeric = None
            for eps in steps:
                flat[i] = orig + eps
                up, rec_up = _evaluate(f)
                flat[i] = orig - eps
                down, rec_down = _evaluate(f)
                flat[i] = orig
                if base.same_branches(rec_up) and base.same_branches(rec_down):
                    numeric = (up - down) / (2 * eps)
                    break
            if numeric is None:
                straddled += 1
                continue
            err = abs(grad.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return GradCheck(worst, probes, straddled)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                      max_probes: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Largest relative error of :func:`gradient_check` starting from step ``eps``."""
    steps = tuple(s for s in DEFAULT_STEPS if s <= eps) or (eps,)
    if steps[0] != eps:
        steps = (eps,) + steps
    return gradient_check(f, params, steps, max_probes, rng).max_rel_err
