"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int


@dataclass
class GradCheckReport:
    tol: float
    checks: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    @property
    def worst(self) -> ParamCheck | None:
        return max(self.checks, key=lambda c: c.max_rel_err, default=None)

    def failures(self) -> list:
        return [c for c in self.checks if c.max_rel_err > self.tol]

    def format(self) -> str:
        lines = [f"{'parameter':40s} {'entries':>8s} {'max rel err':>12s}  worst index"]
        for c in self.checks:
            flag = "" if c.max_rel_err <= self.tol else "  FAIL"
            lines.append(f"{c.name:40s} {c.n_checked:8d} {c.max_rel_err:12.3e}  {c.worst_index}{flag}")
        lines.append(f"overall max rel err {self.max_rel_err:.3e} (tol {self.tol:g}): "
                     + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def rel_error(a, n, floor: float = 1e-5):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients
    from turning round-off into huge ratios."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(loss_fn, params: dict[str, Tensor], h: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = None, seed: int = 0,
               floor: float = 1e-5) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    Only parameters with ``requires_grad`` are probed. ``max_entries`` caps
    how many entries per parameter are perturbed (a seeded random subset);
    ``None`` checks all of them.
    """
    params = {k: p for k, p in params.items() if p.requires_grad}
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
            numeric = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                numeric[j] = (up - down) / (2 * h)
            a = analytic[name].reshape(-1)[idx]
            err = rel_error(a, numeric, floor)
            w = int(np.argmax(err)) if len(err) else 0
            report.checks.append(ParamCheck(
                name=name,
                max_rel_err=float(err[w]) if len(err) else 0.0,
                worst_index=tuple(int(v) for v in np.unravel_index(idx[w], p.shape)) if len(err) else (),
                analytic=float(a[w]) if len(err) else 0.0,
                numeric=float(numeric[w]) if len(err) else 0.0,
                n_checked=len(idx),
            ))
    return report
