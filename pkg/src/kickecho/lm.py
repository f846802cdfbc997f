"""Levenberg-Marquardt for small dense least-squares problems.

Two damping policies are provided:

``"marquardt"``
    Damped normal equations ``(J^T J + lam diag(J^T J)) h = -J^T r``; the
    damping is divided by 10 after an accepted step and multiplied by 10
    after a rejected one.  This is the textbook variant and the default.
``"nielsen"``
    ``(J^T J + mu I) h = -J^T r`` with the gain-ratio update of ``mu``
    (``mu *= max(1/3, 1 - (2 rho - 1)^3)`` on success, ``mu *= nu; nu *= 2``
    on failure).

Both stop when the gradient infinity-norm drops below ``gtol``, when the
step is smaller than ``xtol * (|x| + xtol)``, or after ``max_iter`` attempted
steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FitError

POLICIES = ("marquardt", "nielsen")


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # 0.5 * sum of squared residuals
    steps: int
    converged: bool
    reason: str
    policy: str


def _solve(A, g):
    try:
        return np.linalg.solve(A, -g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, -g, rcond=None)[0]


def levenberg_marquardt(fun, jac, x0, policy="marquardt", max_iter=2000, gtol=1e-10, xtol=1e-12,
                        damping0=1e-3) -> LMResult:
    if policy not in POLICIES:
        raise ArgumentError(f"policy must be one of {POLICIES}")
    x = np.asarray(x0, float).copy()
    r = fun(x)
    J = jac(x)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
        raise FitError("residuals not finite at the starting point", last=x)
    cost = 0.5 * r @ r
    A = J.T @ J
    g = J.T @ r
    if policy == "marquardt":
        lam = damping0
    else:
        mu = damping0 * max(np.max(np.diag(A)), 1e-300)
        nu = 2.0
    steps = 0
    reason = "max_iter"
    converged = False
    while steps < max_iter:
        if np.max(np.abs(g)) < gtol:
            reason, converged = "gtol", True
            break
        steps += 1
        if policy == "marquardt":
            h = _solve(A + lam * np.diag(np.diag(A)) + 1e-300 * np.eye(x.size), g)
        else:
            h = _solve(A + mu * np.eye(x.size), g)
        if not np.all(np.isfinite(h)):
            raise FitError("step is not finite", last=x)
        if np.linalg.norm(h) <= xtol * (np.linalg.norm(x) + xtol):
            reason, converged = "xtol", True
            break
        x_new = x + h
        r_new = fun(x_new)
        cost_new = 0.5 * r_new @ r_new if np.all(np.isfinite(r_new)) else np.inf
        if policy == "marquardt":
            if cost_new < cost:
                lam /= 10.0
                accepted = True
            else:
                lam *= 10.0
                accepted = False
        else:
            predicted = 0.5 * h @ (mu * h - g)
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
            if rho > 0:
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                accepted = True
            else:
                mu *= nu
                nu *= 2.0
                accepted = False
        if accepted:
            x, r, cost = x_new, r_new, cost_new
            J = jac(x)
            if not np.all(np.isfinite(J)):
                raise FitError("Jacobian is not finite", last=x)
            A = J.T @ J
            g = J.T @ r
    if not np.isfinite(cost):
        raise FitError("fit diverged", last=x)
    return LMResult(x, float(cost), steps, converged, reason, policy)
