"""Compare tape gradients against central differences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor

# below this magnitude gradients are compared in absolute terms
ABS_FLOOR = 1e-8


@dataclass
class GradcheckReport:
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)
    coords_checked: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        if not self.per_param:
            return None
        return max(self.per_param, key=self.per_param.get)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_err={self.max_rel_error:.3e} (tol {self.tolerance:g}) "
                f"worst={self.worst} coords={self.coords_checked}")


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), ABS_FLOOR)


def gradcheck(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], tolerance: float = 1e-4,
              max_coords: int = 200, seed: int = 0, full: bool = False,
              step: float = 1e-4) -> GradcheckReport:
    """Check d loss / d param for every tensor in ``params``.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    At most ``max_coords`` coordinates per tensor are probed (seeded choice)
    unless ``full`` is set. Finite-difference step is step * max(1, |theta|).
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 parameters; {name} is {p.dtype}")
    with T.Tape() as tape:
        for p in params.values():
            tape.watch(p)
        loss = loss_fn()
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if full or flat.size <= max_coords:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        g = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, relative_error(float(g[i]), numeric))
        report.per_param[name] = worst
        report.coords_checked += len(idx)
    return report
