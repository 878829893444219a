"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from .optim import Parameter
from .tensor import Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    per_param: dict = field(default_factory=dict)  # name -> max relative error
    checked_coords: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _named_tensors(tensors):
    out = []
    for i, entry in enumerate(tensors):
        if isinstance(entry, Parameter):
            out.append((entry.name, entry.tensor))
        elif isinstance(entry, tuple):
            out.append(entry)
        elif isinstance(entry, Tensor):
            out.append(("tensor_%d" % i, entry))
        else:
            raise InvalidArgumentError("grad_check got %r" % (type(entry),))
    return out


def grad_check(forward, tensors, tolerance: float = 1e-4, step: float = 1e-5,
               max_coords_per_tensor: int | None = None,
               rng_seed: int = 0) -> GradCheckReport:
    """Compare backward() gradients with central finite differences.

    `forward` must rebuild the graph and return a scalar loss Tensor on every
    call (deterministic: dropout disabled). `tensors` is a list of Parameters,
    (name, Tensor) pairs, or bare Tensors. Relative error per coordinate is
    |a - n| / max(1, |a|, |n|). Frozen tensors (requires_grad False) are
    excluded from the report. When a tensor has more coordinates than
    max_coords_per_tensor, a seeded subset is checked.
    """
    named = [(n, t) for n, t in _named_tensors(tensors) if t.requires_grad]
    for _, t in named:
        t.grad = None
    loss = forward()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise InvalidArgumentError("forward() must return a scalar Tensor")
    loss.backward()
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in named
    }

    rng = np.random.default_rng(rng_seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, t in named:
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_coords_per_tensor is not None and n_coords > max_coords_per_tensor:
            coords = rng.choice(n_coords, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n_coords)
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = forward().item()
            flat[idx] = orig - step
            f_minus = forward().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
            report.checked_coords += 1
        report.per_param[name] = worst
    return report
