"""
Central-difference verification of tape gradients
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from autodiff.tensor import Tape, Tensor, backward, no_grad
from core.errors import NonDeterministicFunction, ShapeMismatch

logger = logging.getLogger(__name__)


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    per_input: Dict[str, float] = field(default_factory=dict)
    checked_elements: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ShapeMismatch(f"gradcheck function must return a scalar, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def gradcheck(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
              tol: float = 1e-4, max_elements_per_input: Optional[int] = None, seed: int = 0,
              floor: float = 1e-6) -> GradcheckReport:
    """Compare tape gradients of fn(inputs) against central differences

    Args:
        fn: builds a scalar from the inputs using autodiff primitives
        inputs: tensors to differentiate with respect to (requires_grad is set on them)
        eps: finite-difference step
        tol: pass threshold on the largest relative error
        max_elements_per_input: check a seeded random subset of entries of large inputs
        seed: seed for that subset
        floor: lower bound of the relative-error denominator

    Returns:
        GradcheckReport
    """
    with no_grad():
        first = _scalar(fn(inputs))
        second = _scalar(fn(inputs))
    if first != second:
        raise NonDeterministicFunction(f"two forward passes differ: {first!r} vs {second!r}")

    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        out = fn(inputs)
    backward(tape, out)

    rng = np.random.default_rng(seed)
    report = GradcheckReport(max_rel_error=0.0, tol=tol)
    for position, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        if max_elements_per_input is not None and flat.size > max_elements_per_input:
            picks = np.sort(rng.choice(flat.size, size=max_elements_per_input, replace=False))
        else:
            picks = np.arange(flat.size)
        worst = 0.0
        for index in picks:
            original = flat[index]
            with no_grad():
                flat[index] = original + eps
                plus = _scalar(fn(inputs))
                flat[index] = original - eps
                minus = _scalar(fn(inputs))
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[index])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, rel)
        label = t.name or f"input{position}"
        report.per_input[label] = worst
        report.checked_elements += len(picks)
        report.max_rel_error = max(report.max_rel_error, worst)

    logger.debug(f"gradcheck over {report.checked_elements} elements: max rel error {report.max_rel_error:.3e}")
    return report
