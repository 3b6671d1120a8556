"""Triangle quadrature rules in barycentric form.

All rules come from the collapsed (Duffy) square -> triangle map

    lam = (1 - s) * e_c + s * ((1 - t) * e_a + t * e_b)

with Gauss-Legendre points in ``s`` and ``t``. The Jacobian is proportional
to ``s``, which cancels an ``|x - corner|^-1`` singularity at the collapsed
corner; that is what makes the same construction usable for triangles that
touch a branch point.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def collapsed_rule(order: int, corner: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bary, weights)`` with weights summing to 1 (fraction of area).

    ``bary`` has shape (order**2, 3). ``corner`` is the collapsed vertex.
    Exact for polynomials of total degree ``2*order - 2`` in barycentrics.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    s, t = s.ravel(), t.ravel()
    weights = 2.0 * (ws * wt).ravel() * s
    a, b = [(1, 2), (2, 0), (0, 1)][corner]
    bary = np.zeros((s.size, 3))
    bary[:, corner] = 1.0 - s
    bary[:, a] = s * (1.0 - t)
    bary[:, b] = s * t
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights


def integrate_reference(f, order: int = 8) -> float:
    """Integrate ``f(l0, l1, l2)`` over the unit-area reference triangle (testing aid)."""
    bary, w = collapsed_rule(order)
    return float(np.sum(w * f(bary[:, 0], bary[:, 1], bary[:, 2])))
