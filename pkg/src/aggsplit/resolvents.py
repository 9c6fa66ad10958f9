"""Resolvents of the two halves of the splitting.

The decoupled half resolves into N independent proximal subproblems (one
per agent) plus identity on the central blocks; the coupling half has a
closed form built from one scalar rescaling per multiplier block and a
single positive-orthant projection.  Step sizes enter through a diagonal
preconditioner: per-agent weights gamma_i on the decision and link
blocks, and alpha, beta, delta on the aggregate and multiplier blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidStepSizes
from .game import AgentSpec, GameSpec, QuadraticAgg
from .operators import ExtendedPoint
from .projections import fista_minimize, project_box_simplex_batch

DEFAULT_PROX_TOL = 1e-10


@dataclass(frozen=True)
class StepSizes:
    """Raw preconditioner entries and the equivalent central parameters.

    The raw entries (gamma_i, alpha, beta, delta) are canonical; the two
    central parameters are the bijective reparameterizations

        delta_c = delta / (delta * gamma_hat + 1/N)     in (0, 1/gamma_hat)
        beta_c  = beta / (1 + beta * (alpha + gamma_hat/N))
                                                        in (0, 1/(alpha + gamma_hat/N))
    """

    gamma: np.ndarray
    alpha: float
    beta: float
    delta: float

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "delta", float(self.delta))
        if np.any(gamma <= 0) or self.alpha <= 0 or self.beta <= 0 or self.delta <= 0:
            raise InvalidStepSizes("all raw step sizes must be positive")

    @property
    def N(self) -> int:
        return self.gamma.shape[0]

    @property
    def gamma_hat(self) -> float:
        return float(self.gamma.mean())

    @property
    def delta_c(self) -> float:
        return self.delta / (self.delta * self.gamma_hat + 1.0 / self.N)

    @property
    def beta_c(self) -> float:
        return self.beta / (1.0 + self.beta * (self.alpha + self.gamma_hat / self.N))

    @classmethod
    def from_raw(cls, gamma, alpha: float, beta: float, delta: float) -> "StepSizes":
        return cls(gamma=np.asarray(gamma, dtype=np.float64), alpha=alpha, beta=beta, delta=delta)

    @classmethod
    def from_central(cls, gamma, alpha: float, delta_c: float, beta_c: float) -> "StepSizes":
        """Invert the central parameterization; open intervals are enforced."""
        gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
        if np.any(gamma <= 0) or alpha <= 0:
            raise InvalidStepSizes("gamma and alpha must be positive")
        N = gamma.shape[0]
        gamma_hat = float(gamma.mean())
        if not 0.0 < delta_c < 1.0 / gamma_hat:
            raise InvalidStepSizes(
                f"delta_c must lie in (0, {1.0 / gamma_hat:.6g}), got {delta_c:.6g}"
            )
        beta_bound = 1.0 / (alpha + gamma_hat / N)
        if not 0.0 < beta_c < beta_bound:
            raise InvalidStepSizes(f"beta_c must lie in (0, {beta_bound:.6g}), got {beta_c:.6g}")
        delta = delta_c / (N * (1.0 - delta_c * gamma_hat))
        beta = beta_c / (1.0 - beta_c * (alpha + gamma_hat / N))
        return cls(gamma=gamma, alpha=alpha, beta=beta, delta=delta)

    def gamma_inv_inner(self, u: ExtendedPoint, v: ExtendedPoint) -> float:
        """Inner product weighted by the inverse preconditioner."""
        n = u.sigma.shape[0]
        m = u.lam.shape[0]
        gx = np.repeat(self.gamma, n)
        gy = np.repeat(self.gamma, m)
        return (
            float((u.x / gx) @ v.x)
            + float((u.y / gy) @ v.y)
            + float(u.sigma @ v.sigma) / self.alpha
            + float(u.mu @ v.mu) / self.beta
            + float(u.lam @ v.lam) / self.delta
        )

    def gamma_inv_norm(self, u: ExtendedPoint) -> float:
        return float(np.sqrt(max(self.gamma_inv_inner(u, u), 0.0)))


@dataclass
class ProxProblem:
    """One agent's proximal subproblem.

    minimize over the local set:
        f_i(z, sigma) + linear' z + 0.5 (z - center)' metric (z - center)

    ``metric`` is either a 1-D diagonal (fast path) or a dense SPD matrix.
    """

    i: int
    sigma: np.ndarray
    linear: np.ndarray
    center: np.ndarray
    metric: np.ndarray
    tolerance: float = DEFAULT_PROX_TOL

    @property
    def metric_is_diagonal(self) -> bool:
        return self.metric.ndim == 1


def local_prox(agent: AgentSpec, p: ProxProblem) -> np.ndarray:
    """Solve one agent's proximal subproblem.

    Quadratic cost with a diagonal metric reduces to a single weighted
    box-simplex projection (exact up to the bisection tolerance); anything
    else goes through the accelerated projected-gradient path, stopping at
    the requested natural-residual tolerance.
    """
    cost = agent.cost
    if isinstance(cost, QuadraticAgg) and p.metric_is_diagonal:
        d = p.metric
        if np.any(d <= 0):
            raise InvalidStepSizes("diagonal prox metric must be positive")
        weights = cost.a + d
        v = (cost.a * cost.xtilde + d * p.center - cost.Q @ p.sigma - p.linear) / weights
        return agent.omega.project(v, weights)

    if p.metric_is_diagonal:
        metric_mv = lambda z: p.metric * z
        metric_max = float(p.metric.max())
        metric_min = float(p.metric.min())
    else:
        metric_mv = lambda z: p.metric @ z
        eigs = np.linalg.eigvalsh(0.5 * (p.metric + p.metric.T))
        metric_max, metric_min = float(eigs[-1]), float(eigs[0])
        if metric_min <= 0:
            raise InvalidStepSizes("prox metric must be positive definite")

    curvature = getattr(cost, "curvature", 1.0)
    strong = getattr(cost, "strong_convexity", 0.0)

    def grad(z: np.ndarray) -> np.ndarray:
        return cost.grad(z, p.sigma) + p.linear + metric_mv(z - p.center)

    return fista_minimize(
        grad,
        agent.omega.project,
        p.center,
        lipschitz=curvature + metric_max,
        strong_convexity=strong + metric_min,
        tol=p.tolerance,
    )


def batch_prox_eligible(game: GameSpec) -> bool:
    """True when every agent admits the vectorized projection fast path."""
    return game.all_quadratic and game.all_box_simplex and game.stacks["ata_is_diag"]


def batched_quadratic_prox(
    game: GameSpec,
    sigma: np.ndarray,
    linear: np.ndarray,
    center: np.ndarray,
    metric_diag: np.ndarray,
) -> np.ndarray:
    """All agents' fast-path prox solves at once; bit-identical to the loop."""
    st = game.stacks
    a = st["a"][:, None]
    weights = a + metric_diag
    v = (a * st["xtilde"] + metric_diag * center - st["Q"] @ sigma - linear) / weights
    return project_box_simplex_batch(v, st["upper"], st["total"], weights)


def resolvent_A(
    game: GameSpec, steps: StepSizes, w: ExtendedPoint, tol: float = DEFAULT_PROX_TOL
) -> ExtendedPoint:
    """Resolvent of the decoupled half under the preconditioner.

    Per agent:
        x_i+ = argmin over the local set of
               f_i(v, sigma) + ||v - x_i||^2 / (2 gamma_i)
                             + ||A_i v - b_i - y_i||^2 / (2 gamma_i)
        y_i+ = A_i x_i+ - b_i
    The aggregate and multiplier blocks pass through unchanged.
    """
    dims = game.dims
    w.check_dims(dims)
    X = w.x_blocks(dims.n)
    Y = w.y_blocks(dims.m)
    gamma = steps.gamma[:, None]
    links = np.einsum("imn,in->im", game.A_stack, X) - game.stacks["b"]
    linear = np.einsum("imn,im->in", game.A_stack, links - Y) / gamma
    if batch_prox_eligible(game):
        metric_diag = (1.0 + game.stacks["ata_diag"]) / gamma
        X_new = batched_quadratic_prox(game, w.sigma, linear, X, metric_diag)
    else:
        X_new = np.empty_like(X)
        eye = np.eye(dims.n)
        for i, agent in enumerate(game.agents):
            ata = agent.A.T @ agent.A
            diag = np.diag(ata)
            is_diag = bool(np.all(ata == np.diag(diag)))
            metric = (1.0 + diag) / steps.gamma[i] if is_diag else (eye + ata) / steps.gamma[i]
            problem = ProxProblem(
                i=i, sigma=w.sigma, linear=linear[i], center=X[i], metric=metric, tolerance=tol
            )
            X_new[i] = local_prox(agent, problem)
    Y_new = np.einsum("imn,in->im", game.A_stack, X_new) - game.stacks["b"]
    return ExtendedPoint(
        x=X_new.ravel(),
        y=Y_new.ravel(),
        sigma=w.sigma.copy(),
        mu=w.mu.copy(),
        lam=w.lam.copy(),
    )


def resolvent_B(dims, steps: StepSizes, w: ExtendedPoint) -> ExtendedPoint:
    """Closed-form resolvent of the coupling half under the preconditioner.

    The multiplier rescalings are scalar because the stacked sum map P
    satisfies P P' = N I; the positive-orthant projection is applied after
    the rescaling.
    """
    w.check_dims(dims)
    N = dims.N
    gamma = steps.gamma[:, None]
    gamma_hat = steps.gamma_hat
    X = w.x_blocks(dims.n)
    Y = w.y_blocks(dims.m)
    avg_x = X.mean(axis=0)
    sum_y = Y.sum(axis=0)

    mu_scale = N / ((1.0 + steps.beta * steps.alpha) * N + steps.beta * gamma_hat)
    mu_new = mu_scale * (w.mu + steps.beta * (w.sigma - avg_x))
    lam_new = np.maximum(
        (w.lam + steps.delta * sum_y) / (1.0 + steps.delta * N * gamma_hat), 0.0
    )
    X_new = X + gamma * (mu_new / N)
    Y_new = Y - gamma * lam_new
    sigma_new = w.sigma - steps.alpha * mu_new
    return ExtendedPoint(
        x=X_new.ravel(), y=Y_new.ravel(), sigma=sigma_new, mu=mu_new, lam=lam_new
    )


def reflect(J: Callable[[ExtendedPoint], ExtendedPoint], w: ExtendedPoint) -> ExtendedPoint:
    """Reflected resolvent 2 J(w) - w."""
    return 2.0 * J(w) - w
