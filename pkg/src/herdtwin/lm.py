"""Levenberg-Marquardt for small dense least-squares problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class LMResult:
    params: np.ndarray
    sse: float
    initial_sse: float
    iterations: int
    converged: bool
    grad_norm: float


def levenberg_marquardt(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    p0,
    *,
    lam0: float = 1e-3,
    max_iter: int = 500,
    gtol: float = 1e-8,
    ftol: float = 1e-12,
    valid: Optional[Callable[[np.ndarray], bool]] = None,
) -> LMResult:
    """Minimize ``sum(r**2)`` where ``fun(p)`` returns residuals and Jacobian.

    Damping uses Marquardt's diagonal scaling: lambda starts at ``lam0``, is
    multiplied by 10 after a rejected step and divided by 10 after an
    accepted one.  Steps come from the augmented system
    ``[J; sqrt(lam*D)] dp = [-r; 0]`` solved by SVD, never the normal
    equations.  Only SSE-decreasing steps are accepted.
    """
    p = np.array(p0, dtype=np.float64)
    r, J = fun(p)
    sse = float(r @ r)
    initial = sse
    lam = lam0
    converged = False
    it = 0
    g = J.T @ r
    gnorm = float(np.linalg.norm(g))
    if not np.isfinite(sse):
        return LMResult(p, sse, initial, 0, False, gnorm)
    while it < max_iter:
        if gnorm < gtol:
            converged = True
            break
        it += 1
        d = np.einsum("ij,ij->j", J, J)
        d = np.maximum(d, 1e-12 * max(float(d.max()), 1e-300))
        accepted = False
        while lam < 1e16:
            A = np.vstack([J, np.diag(np.sqrt(lam * d))])
            rhs = np.concatenate([-r, np.zeros(p.size)])
            step = np.linalg.lstsq(A, rhs, rcond=None)[0]
            p_new = p + step
            if np.all(np.isfinite(p_new)) and (valid is None or valid(p_new)):
                r_new, J_new = fun(p_new)
                sse_new = float(r_new @ r_new)
                if np.isfinite(sse_new) and sse_new < sse:
                    rel = (sse - sse_new) / max(sse, 1e-300)
                    p, r, J, sse = p_new, r_new, J_new, sse_new
                    lam = max(lam / 10.0, 1e-15)
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            break
        g = J.T @ r
        gnorm = float(np.linalg.norm(g))
        if rel < ftol or gnorm < gtol:
            converged = True
            break
    return LMResult(p, sse, initial, it, converged, gnorm)
