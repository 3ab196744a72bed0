"""Central-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tape import Tape, Var


class GradCheckError(RuntimeError):
    """The checked function produced a non-finite value."""


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    probes: dict[str, int] = field(default_factory=dict)
    directional_error: float | None = None

    @property
    def max_error(self) -> float:
        vals = list(self.errors.values())
        if self.directional_error is not None:
            vals.append(self.directional_error)
        return max(vals, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def summary(self) -> str:
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        return (f"grad_check {'PASS' if self.passed else 'FAIL'}: max rel err {self.max_error:.3e} "
                f"(worst block {worst}, tol {self.tol:g})")


def rel_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f: Callable[[], Var], params: Mapping[str, Var], eps: float = 1e-5,
               tol: float = 1e-4, max_probes: int | None = None, floor: float = 1e-4,
               directional: bool = False, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its forward pass from the current parameter values on
    every call.  Each block is probed at every entry, or at ``max_probes``
    entries drawn with ``seed`` when it is larger than that.  Relative error
    is ``|a - n| / max(|a|, |n|, floor)``.  With ``directional`` an extra
    check compares the full-gradient projection onto a random direction.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    plist = list(params.values())
    with Tape() as tape:
        loss = f()
        base = float(loss.value)
        if not np.isfinite(base):
            raise GradCheckError(f"f is non-finite at the unperturbed point ({base})")
        tape.backward(loss, plist)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def probe(name: str, where: str) -> float:
        val = float(f().value)
        if not np.isfinite(val):
            raise GradCheckError(f"f is non-finite ({val}) when probing {name}{where}")
        return val

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        n = p.value.size
        if max_probes is not None and n > max_probes:
            idx = np.sort(rng.choice(n, size=max_probes, replace=False))
        else:
            idx = np.arange(n)
        worst = 0.0
        for i in idx:
            at = np.unravel_index(i, p.shape)
            orig = p.value[at]
            p.value[at] = orig + eps
            up = probe(name, f"[{i}] +eps")
            p.value[at] = orig - eps
            down = probe(name, f"[{i}] -eps")
            p.value[at] = orig
            num = (up - down) / (2 * eps)
            worst = max(worst, rel_error(float(analytic[name].reshape(-1)[i]), num, floor))
        report.errors[name] = worst
        report.probes[name] = len(idx)

    if directional:
        dirs = {name: rng.standard_normal(p.shape) for name, p in params.items()}
        norm = np.sqrt(sum(float((v * v).sum()) for v in dirs.values()))
        origs = {name: p.value.copy() for name, p in params.items()}
        pred = sum(float((analytic[n] * dirs[n]).sum()) for n in dirs) / norm
        vals = []
        for sign in (1.0, -1.0):
            for name, p in params.items():
                p.value[...] = origs[name] + sign * eps * dirs[name] / norm
            vals.append(probe("<direction>", f" {'+' if sign > 0 else '-'}eps"))
        for name, p in params.items():
            p.value[...] = origs[name]
        num = (vals[0] - vals[1]) / (2 * eps)
        report.directional_error = rel_error(pred, num, floor)
    return report
