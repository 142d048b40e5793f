"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .params import ParamRegistry


@dataclass
class GradCheckReport:
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    max_rel_err: float = 0.0
    passed: bool = True

    def record(self, path: str, err: float):
        self.per_param[path] = max(self.per_param.get(path, 0.0), err)
        if err > self.max_rel_err:
            self.max_rel_err = err
        if err > self.tol:
            self.passed = False


def _rel_err(a: float, n: float) -> float:
    # unit floor on the denominator: below it, absolute error is the honest
    # measure (central differences bottom out near sqrt(eps) anyway)
    return abs(a - n) / max(abs(a), abs(n), 1.0)


def grad_check(f, params: ParamRegistry, h: float = 1e-5, tol: float = 1e-4,
               entries_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic grads of f() against central differences.

    f must be a deterministic closure returning a scalar loss Tensor over the
    current registry values. With entries_per_param set, a seeded random
    subset of each parameter's entries is probed instead of all of them.
    """
    if h <= 0:
        raise ContractError("grad_check needs h > 0")
    params.zero_grads()
    loss = f()
    v0 = loss.item()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    v1 = f().item()
    if v1 != v0:
        raise ContractError("grad_check requires a deterministic computation "
                            f"(got {v0} then {v1})")
    report = GradCheckReport(tol=tol)
    for path, p in params.items():
        flat = p.data.ravel()
        n = flat.size
        if entries_per_param is not None and n > entries_per_param:
            if rng is None:
                rng = np.random.Generator(np.random.Philox(0))
            idxs = rng.choice(n, size=entries_per_param, replace=False)
        else:
            idxs = range(n)
        aflat = analytic[path].ravel()
        for i in idxs:
            old = flat[i]
            flat[i] = old + h
            fp = f().item()
            flat[i] = old - h
            fm = f().item()
            flat[i] = old
            numeric = (fp - fm) / (2.0 * h)
            report.record(path, _rel_err(aflat[i], numeric))
    params.zero_grads()
    return report
