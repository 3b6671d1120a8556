"""Empirical convergence orders from refinement sequences (mesh size halves per level)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class RichardsonTriple:
    values: tuple
    order: float | None
    extrapolated: float | None
    error_bound: float | None
    status: str  # "ok" or "inconclusive"
    reason: str = ""


def richardson(q1: float, q2: float, q3: float, ratio: float = 2.0) -> RichardsonTriple:
    """Order and extrapolation from three successive refinements of one quantity.

    p = log((q1 - q2) / (q2 - q3)) / log(ratio). A sign change in the
    differences means the sequence is not yet in the asymptotic range.
    """
    d1, d2 = q1 - q2, q2 - q3
    vals = (q1, q2, q3)
    if d2 == 0.0:
        if d1 == 0.0:
            return RichardsonTriple(vals, math.inf, q3, 0.0, "ok", "converged to round-off")
        return RichardsonTriple(vals, None, None, None, "inconclusive", "last difference vanished")
    r = d1 / d2
    if r <= 1.0:
        why = "differences change sign" if r <= 0 else "differences do not shrink"
        return RichardsonTriple(vals, None, None, None, "inconclusive", why)
    p = math.log(r) / math.log(ratio)
    ext = q3 - d2 / (ratio**p - 1.0)
    return RichardsonTriple(vals, p, ext, abs(q3 - ext), "ok")


def error_orders(errors, ratio: float = 2.0) -> list:
    """Observed orders log(e_k / e_{k+1}) / log(ratio) for errors against an oracle."""
    out = []
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log(a / b) / math.log(ratio) if a > 0 and b > 0 else None)
    return out


@dataclass
class QuantityReport:
    name: str
    levels: list
    values: list
    kind: str  # "value" (Richardson on the values) or "error" (values are errors)
    threshold: float
    orders: list = field(default_factory=list)
    extrapolated: float | None = None
    error_bound: float | None = None
    status: str = "inconclusive"
    reason: str = ""

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("name", "levels", "values", "kind", "threshold", "orders",
                                             "extrapolated", "error_bound", "status", "reason")}


def assess(name: str, levels, values, threshold: float, kind: str = "value") -> QuantityReport:
    """Pass iff the last observed order reaches the threshold; non-monotone -> inconclusive."""
    rep = QuantityReport(name, list(levels), [float(v) for v in values], kind, threshold)
    if len(values) < 3:
        rep.reason = "need at least three levels"
        return rep
    if kind == "error":
        errs = [abs(v) for v in values]
        if any(b >= a for a, b in zip(errs[:-1], errs[1:])):
            rep.orders = error_orders(errs)
            rep.reason = "error sequence is not monotone"
            return rep
        rep.orders = error_orders(errs)
        last = rep.orders[-1]
    else:
        triples = [richardson(*values[k:k + 3]) for k in range(len(values) - 2)]
        rep.orders = [t.order for t in triples]
        if any(t.status != "ok" for t in triples):
            rep.reason = next(t.reason for t in triples if t.status != "ok")
            return rep
        rep.extrapolated = triples[-1].extrapolated
        rep.error_bound = triples[-1].error_bound
        last = triples[-1].order
    rep.status = "pass" if last >= threshold else "fail"
    return rep
