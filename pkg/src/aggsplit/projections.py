"""Projection kernels and a small accelerated projected-gradient minimizer.

The workhorse is the projection onto a box-capped simplex

    argmin_x  sum_j w_j (x_j - v_j)^2   s.t.  0 <= x <= upper,  1'x = total,

solved by bisection on the scalar multiplier theta with
``x_j(theta) = clip(v_j - theta / w_j, 0, upper_j)``.  The sum
``g(theta) = 1'x(theta)`` is continuous and nonincreasing, and the
bracket ``[min_j w_j (v_j - upper_j), max_j w_j v_j]`` pins x to the
upper caps on the left and to zero on the right, so no expansion loop is
needed.  Coordinates that land exactly on a bound resolve to the bound.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import EmptySet, NoConvergence

# |1'x(theta) - total| stopping tolerance for the bisection.
SUM_TOL = 1e-12
MAX_BISECT_STEPS = 200


def project_box_simplex_batch(
    v: np.ndarray,
    upper: np.ndarray,
    total: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Row-wise box-simplex projection of a (B, n) batch.

    Rows are independent problems; a row whose sum gap is already within
    tolerance keeps its multiplier frozen, so batched and one-row calls
    produce bit-identical results.
    """
    v = np.asarray(v, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    total = np.asarray(total, dtype=np.float64)
    if weights is None:
        weights = np.ones_like(v)
    else:
        weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), v.shape)
    if v.ndim != 2 or upper.shape != v.shape:
        raise ValueError("batch projection expects matching (B, n) arrays")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    if np.any(total < 0) or np.any(upper.sum(axis=1) < total):
        raise EmptySet("box caps cannot reach the required total")

    lo = np.min(weights * (v - upper), axis=1)
    hi = np.max(weights * v, axis=1)
    theta = 0.5 * (lo + hi)
    x = np.clip(v - theta[:, None] / weights, 0.0, upper)
    gap = x.sum(axis=1) - total
    for _ in range(MAX_BISECT_STEPS):
        active = np.abs(gap) > SUM_TOL
        if not active.any():
            return x
        go_right = active & (gap > 0)
        go_left = active & ~go_right
        lo = np.where(go_right, theta, lo)
        hi = np.where(go_left, theta, hi)
        theta = np.where(active, 0.5 * (lo + hi), theta)
        x = np.clip(v - theta[:, None] / weights, 0.0, upper)
        gap = x.sum(axis=1) - total
    if np.any(np.abs(gap) > SUM_TOL):
        raise NoConvergence(MAX_BISECT_STEPS, "box-simplex bisection stalled")
    return x


def project_box_simplex(
    v: np.ndarray,
    upper: np.ndarray,
    total: float,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Project ``v`` onto {x : 0 <= x <= upper, 1'x = total} in the
    diagonal metric given by ``weights`` (Euclidean when omitted)."""
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    w = None if weights is None else np.atleast_1d(np.asarray(weights, dtype=np.float64))[None, :]
    out = project_box_simplex_batch(v[None, :], upper[None, :], np.asarray([total]), w)
    return out[0]


def halfspace_projector(a: np.ndarray, r: float) -> Callable[[np.ndarray], np.ndarray]:
    """Euclidean projector onto {z : a'z <= r}."""
    a = np.asarray(a, dtype=np.float64)
    nrm2 = float(a @ a)
    if nrm2 == 0.0:
        if r < 0:
            raise EmptySet("degenerate halfspace 0'z <= r with r < 0")
        return lambda z: z

    def proj(z: np.ndarray) -> np.ndarray:
        excess = float(a @ z) - r
        if excess <= 0.0:
            return z
        return z - (excess / nrm2) * a

    return proj


def dykstra_projection(
    v: np.ndarray,
    projectors: list[Callable[[np.ndarray], np.ndarray]],
    tol: float = 1e-12,
    max_iters: int = 5000,
) -> np.ndarray:
    """Dykstra's alternating projection onto an intersection of convex sets."""
    x = np.asarray(v, dtype=np.float64).copy()
    increments = [np.zeros_like(x) for _ in projectors]
    for _ in range(max_iters):
        x_prev = x.copy()
        for idx, proj in enumerate(projectors):
            y = x + increments[idx]
            x = proj(y)
            increments[idx] = y - x
        if np.linalg.norm(x - x_prev) <= tol:
            return x
    raise NoConvergence(max_iters, "Dykstra projection stalled")


def fista_minimize(
    grad: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    z0: np.ndarray,
    lipschitz: float,
    strong_convexity: float = 0.0,
    tol: float = 1e-10,
    max_iters: int = 50_000,
) -> np.ndarray:
    """Accelerated projected-gradient minimization over a convex set.

    Fixed step 1/L.  With a positive strong-convexity modulus the constant
    momentum (1 - sqrt(q)) / (1 + sqrt(q)) is used, otherwise the classic
    t-sequence with a gradient-based restart.  Stops when the unit-step
    natural residual ``||z - project(z - grad(z))||`` drops below ``tol``.
    """
    L = float(lipschitz)
    if L <= 0:
        raise ValueError("lipschitz bound must be positive")
    z = project(np.asarray(z0, dtype=np.float64))
    y = z.copy()
    t = 1.0
    momentum = None
    if strong_convexity > 0:
        q = min(strong_convexity / L, 1.0)
        momentum = (1.0 - np.sqrt(q)) / (1.0 + np.sqrt(q))
    for _ in range(max_iters):
        g = grad(z)
        if np.linalg.norm(z - project(z - g)) <= tol:
            return z
        z_new = project(y - grad(y) / L)
        if momentum is not None:
            y = z_new + momentum * (z_new - z)
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            # restart the momentum when it points uphill
            if np.dot(y - z_new, z_new - z) > 0:
                t_new, beta = 1.0, 0.0
            y = z_new + beta * (z_new - z)
            t = t_new
        z = z_new
    if np.linalg.norm(z - project(z - grad(z))) <= tol:
        return z
    raise NoConvergence(max_iters, "projected-gradient inner solve stalled")
