"""Game data model: local sets, costs, coupling data, validation.

An instance couples N agents through the average of their decisions and
through m affine constraints ``A x <= b`` with ``A = [A_1 ... A_N]`` and
``b = sum_i b_i``.  Everything here is an immutable value object; the
solver modules treat a ``GameSpec`` as shared read-only data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .errors import DimensionMismatch, EmptyLocalSet, Infeasible, NonSmoothCost
from .projections import project_box_simplex

# Strict-feasibility margin used by the phase-1 search.
SLATER_MARGIN = 1e-9
FEASIBILITY_MAX_ITERS = 10_000


@dataclass(frozen=True)
class Dimensions:
    """Problem sizes: N agents, n decision variables each, m coupling rows."""

    N: int
    n: int
    m: int

    def __post_init__(self):
        if self.N < 1 or self.n < 1 or self.m < 1:
            raise DimensionMismatch("N, n and m must all be at least 1")

    @property
    def d(self) -> int:
        """Extended-space dimension: decisions, links, aggregate, two multipliers."""
        return self.n * self.N + self.m * self.N + 2 * self.n + self.m

    @property
    def d1(self) -> int:
        return self.d - self.n * self.N

    @property
    def d2(self) -> int:
        return self.d1 - self.m * self.N

    @property
    def d3(self) -> int:
        return self.d - self.m


def _as_float_array(value, shape=None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DimensionMismatch(f"expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class BoxSimplex:
    """Capped simplex {x : 0 <= x <= upper, 1'x = total}.

    Nonempty iff ``sum(upper) >= total >= 0``; checked at construction.
    """

    upper: np.ndarray
    total: float = 1.0

    def __post_init__(self):
        upper = np.atleast_1d(_as_float_array(self.upper))
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "total", float(self.total))
        if np.any(upper < 0):
            raise ValueError("upper caps must be nonnegative")
        if self.total < 0 or float(upper.sum()) < self.total:
            raise EmptyLocalSet()

    @property
    def n(self) -> int:
        return self.upper.shape[0]

    def project(self, v: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        return project_box_simplex(v, self.upper, self.total, weights)

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        x = _as_float_array(x, (self.n,))
        return bool(
            np.all(x >= -tol)
            and np.all(x <= self.upper + tol)
            and abs(float(x.sum()) - self.total) <= tol
        )

    def default_point(self) -> np.ndarray:
        return self.project(np.zeros(self.n))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.n), self.upper.copy()


@dataclass(frozen=True)
class GenericConvex:
    """Opaque convex set given through a projection oracle.

    ``project_fn(v, weights)`` must return the projection of ``v`` in the
    diagonal metric ``weights`` (Euclidean when ``weights`` is None).
    """

    n: int
    project_fn: Callable[[np.ndarray, np.ndarray | None], np.ndarray]

    def project(self, v: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        return np.asarray(self.project_fn(np.asarray(v, dtype=np.float64), weights), dtype=np.float64)

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        x = _as_float_array(x, (self.n,))
        return bool(np.linalg.norm(x - self.project(x)) <= tol)

    def default_point(self) -> np.ndarray:
        return self.project(np.zeros(self.n))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        # probe with projected Gaussians; good enough for sampling domains
        rng = np.random.default_rng(0)
        pts = np.stack([self.project(3.0 * rng.standard_normal(self.n)) for _ in range(64)])
        return pts.min(axis=0), pts.max(axis=0)


LocalSet = Union[BoxSimplex, GenericConvex]


@dataclass(frozen=True)
class QuadraticAgg:
    """Cost ``0.5 * a ||x - xtilde||^2 + (Q sigma)' x`` with frozen aggregate sigma."""

    a: float
    xtilde: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        xt = np.atleast_1d(_as_float_array(self.xtilde))
        object.__setattr__(self, "xtilde", xt)
        q = _as_float_array(self.Q, (xt.shape[0], xt.shape[0]))
        object.__setattr__(self, "Q", q)
        if not self.a > 0:
            raise ValueError("quadratic weight a must be positive")
        if not np.all(np.isfinite(q)):
            raise ValueError("aggregate coupling matrix must be finite")

    def value(self, x: np.ndarray, sigma: np.ndarray) -> float:
        dx = x - self.xtilde
        return 0.5 * self.a * float(dx @ dx) + float((self.Q @ sigma) @ x)

    def grad(self, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return self.a * (x - self.xtilde) + self.Q @ sigma

    def grad_sigma(self, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return self.Q.T @ x

    @property
    def curvature(self) -> float:
        return self.a

    @property
    def strong_convexity(self) -> float:
        return self.a


@dataclass(frozen=True)
class GenericSmooth:
    """Cost given through value/gradient oracles.

    ``curvature`` bounds the Hessian of ``x -> value(x, sigma)``; it is
    required by the fixed-step inner solver.  ``grad_sigma_fn`` is only
    needed for the full pseudo-subdifferential.
    """

    value_fn: Callable[[np.ndarray, np.ndarray], float]
    grad_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    curvature: float = 1.0
    strong_convexity: float = 0.0
    grad_sigma_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def value(self, x: np.ndarray, sigma: np.ndarray) -> float:
        return float(self.value_fn(x, sigma))

    def grad(self, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        if self.grad_fn is None:
            raise NonSmoothCost("cost has no gradient oracle")
        return np.asarray(self.grad_fn(x, sigma), dtype=np.float64)

    def grad_sigma(self, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        if self.grad_sigma_fn is None:
            raise NonSmoothCost("cost has no aggregate-gradient oracle")
        return np.asarray(self.grad_sigma_fn(x, sigma), dtype=np.float64)


CostModel = Union[QuadraticAgg, GenericSmooth]


@dataclass(frozen=True)
class AgentSpec:
    """One agent: local set, cost, and its slice of the coupling data."""

    omega: LocalSet
    cost: CostModel
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(_as_float_array(self.A))
        b = np.atleast_1d(_as_float_array(self.b))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch("coupling matrix rows must match b length")

    def check_dims(self, dims: Dimensions) -> None:
        if self.A.shape != (dims.m, dims.n):
            raise DimensionMismatch(
                f"agent coupling block is {self.A.shape}, expected {(dims.m, dims.n)}"
            )
        if getattr(self.omega, "n", dims.n) != dims.n:
            raise DimensionMismatch("local set dimension differs from n")
        if isinstance(self.cost, QuadraticAgg) and self.cost.xtilde.shape != (dims.n,):
            raise DimensionMismatch("cost target dimension differs from n")

    def link_value(self, x_i: np.ndarray) -> np.ndarray:
        """The link variable paired with x_i: A_i x_i - b_i."""
        return self.A @ x_i - self.b


@dataclass(frozen=True)
class GameSpec:
    """Immutable description of the full game."""

    dims: Dimensions
    agents: list[AgentSpec]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.agents) != self.dims.N:
            raise DimensionMismatch("agent list length differs from N")
        for agent in self.agents:
            agent.check_dims(self.dims)

    # -- assembled coupling data -------------------------------------------------

    @property
    def b_total(self) -> np.ndarray:
        if "b_total" not in self._cache:
            b = np.zeros(self.dims.m)
            for agent in self.agents:
                b = b + agent.b
            self._cache["b_total"] = b
        return self._cache["b_total"]

    @property
    def A_stack(self) -> np.ndarray:
        """(N, m, n) stack of the per-agent coupling blocks."""
        if "A_stack" not in self._cache:
            self._cache["A_stack"] = np.stack([agent.A for agent in self.agents])
        return self._cache["A_stack"]

    def full_matrix(self) -> np.ndarray:
        """The assembled (m, n N) coupling matrix."""
        return np.concatenate([agent.A for agent in self.agents], axis=1)

    def coupling_value(self, x: np.ndarray) -> np.ndarray:
        """A x = sum_i A_i x_i, fixed ascending agent order."""
        X = self._as_blocks(x)
        return np.einsum("imn,in->m", self.A_stack, X)

    def _as_blocks(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dims.N * self.dims.n,):
            raise DimensionMismatch(
                f"stacked decision must have length {self.dims.N * self.dims.n}"
            )
        return x.reshape(self.dims.N, self.dims.n)

    # -- uniform-structure fast path ----------------------------------------------

    @property
    def all_box_simplex(self) -> bool:
        return all(isinstance(a.omega, BoxSimplex) for a in self.agents)

    @property
    def all_quadratic(self) -> bool:
        return all(isinstance(a.cost, QuadraticAgg) for a in self.agents)

    @property
    def stacks(self) -> dict:
        """Stacked per-agent arrays for vectorized updates (when uniform)."""
        if "stacks" not in self._cache:
            stacks = {"b": np.stack([a.b for a in self.agents])}
            if self.all_box_simplex:
                stacks["upper"] = np.stack([a.omega.upper for a in self.agents])
                stacks["total"] = np.array([a.omega.total for a in self.agents])
            if self.all_quadratic:
                stacks["a"] = np.array([a.cost.a for a in self.agents])
                stacks["xtilde"] = np.stack([a.cost.xtilde for a in self.agents])
                stacks["Q"] = np.stack([a.cost.Q for a in self.agents])
            ata = np.einsum("imk,iml->ikl", self.A_stack, self.A_stack)
            diag = np.einsum("ikk->ik", ata)
            off = ata - diag[:, :, None] * np.eye(self.dims.n)[None]
            stacks["ata_diag"] = diag
            stacks["ata_is_diag"] = bool(np.all(off == 0.0))
            self._cache["stacks"] = stacks
        return self._cache["stacks"]

    def project_each(self, X: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Per-agent projection of the rows of an (N, n) array onto the local sets."""
        from .projections import project_box_simplex_batch

        if X.shape != (self.dims.N, self.dims.n):
            raise DimensionMismatch("expected an (N, n) block matrix")
        if self.all_box_simplex:
            st = self.stacks
            return project_box_simplex_batch(X, st["upper"], st["total"], weights)
        out = np.empty_like(X)
        for i, agent in enumerate(self.agents):
            w_i = None if weights is None else weights[i]
            out[i] = agent.omega.project(X[i], w_i)
        return out

    # -- serialization -------------------------------------------------------------

    def to_json_dict(self) -> dict:
        if not (self.all_box_simplex and self.all_quadratic):
            raise ValueError("only box-simplex / quadratic games serialize to JSON")
        return {
            "dims": {"N": self.dims.N, "n": self.dims.n, "m": self.dims.m},
            "agents": [
                {
                    "upper": agent.omega.upper.tolist(),
                    "total": agent.omega.total,
                    "a": agent.cost.a,
                    "xtilde": agent.cost.xtilde.tolist(),
                    "Q": agent.cost.Q.tolist(),
                    "A": agent.A.tolist(),
                    "b": agent.b.tolist(),
                }
                for agent in self.agents
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "GameSpec":
        dims = Dimensions(**{k: int(payload["dims"][k]) for k in ("N", "n", "m")})
        agents = []
        for raw in payload["agents"]:
            agents.append(
                AgentSpec(
                    omega=BoxSimplex(np.array(raw["upper"]), float(raw["total"])),
                    cost=QuadraticAgg(float(raw["a"]), np.array(raw["xtilde"]), np.array(raw["Q"])),
                    A=np.array(raw["A"]),
                    b=np.array(raw["b"]),
                )
            )
        return cls(dims=dims, agents=agents)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GameSpec":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- aggregation and feasibility primitives ------------------------------------------


def average(x: np.ndarray, n: int) -> np.ndarray:
    """Arithmetic mean of the n-blocks of a stacked vector, ascending agent order."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] % n != 0:
        raise DimensionMismatch("stacked vector length must be a multiple of n")
    return x.reshape(-1, n).mean(axis=0)


def coupling_violation(game: GameSpec, x: np.ndarray) -> np.ndarray:
    """Componentwise positive part of A x - b; zero iff the coupling holds."""
    return np.maximum(game.coupling_value(x) - game.b_total, 0.0)


def find_feasible_point(
    game: GameSpec,
    margin: float = SLATER_MARGIN,
    max_iters: int = FEASIBILITY_MAX_ITERS,
) -> tuple[np.ndarray, bool]:
    """Phase-1 projected-gradient search for a point with A x <= b - margin.

    Returns ``(x, strict)``.  ``strict`` is False when only a point with
    ``A x <= b`` (no margin) was reached; raises :class:`Infeasible` when
    even that fails within the iteration budget.
    """
    X = np.stack([agent.omega.default_point() for agent in game.agents])
    A_full = game.full_matrix()
    lip = float(np.linalg.norm(A_full, 2)) ** 2
    step = 1.0 / max(lip, 1e-12)
    target = game.b_total - margin
    for _ in range(max_iters):
        resid = np.maximum(game.coupling_value(X.ravel()) - target, 0.0)
        if not resid.any():
            return X.ravel(), True
        grad = np.einsum("imn,m->in", game.A_stack, resid)
        X = game.project_each(X - step * grad)
    x = X.ravel()
    if not coupling_violation(game, x).any():
        return x, False
    raise Infeasible("phase-1 search found no point satisfying the coupling")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the structural and feasibility checks on a game."""

    dims_ok: bool
    nonempty: list[bool]
    gradient_rel_err: list[float]
    feasible: bool
    strictly_feasible: bool
    feasible_point: np.ndarray | None
    messages: list[str]

    @property
    def ok(self) -> bool:
        return self.dims_ok and all(self.nonempty) and self.feasible

    def summary(self) -> str:
        lines = [
            f"dimensions: {'ok' if self.dims_ok else 'MISMATCH'}",
            f"local sets nonempty: {sum(self.nonempty)}/{len(self.nonempty)}",
            f"max gradient check error: {max(self.gradient_rel_err):.3e}"
            if self.gradient_rel_err
            else "gradient check: skipped",
            f"coupling feasible: {self.feasible} (strict: {self.strictly_feasible})",
        ]
        lines.extend(self.messages)
        return "\n".join(lines)


def _fd_gradient_error(cost: CostModel, x: np.ndarray, sigma: np.ndarray) -> float:
    """Relative error between the gradient oracle and central differences."""
    try:
        g = cost.grad(x, sigma)
    except NonSmoothCost:
        return np.inf
    h = 1e-6
    fd = np.empty_like(g)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        fd[j] = (cost.value(x + e, sigma) - cost.value(x - e, sigma)) / (2 * h)
    scale = max(1.0, float(np.linalg.norm(g)))
    return float(np.linalg.norm(fd - g)) / scale


def validate_game(game: GameSpec, check_feasibility: bool = True) -> ValidationReport:
    """Run nonemptiness, gradient, dimension and feasibility checks.

    Pure: repeated calls on the same game produce identical reports.
    """
    dims = game.dims
    messages: list[str] = []
    dims_ok = True
    try:
        for agent in game.agents:
            agent.check_dims(dims)
    except DimensionMismatch as exc:
        dims_ok = False
        messages.append(str(exc))

    nonempty = []
    for i, agent in enumerate(game.agents):
        if isinstance(agent.omega, BoxSimplex):
            ok = float(agent.omega.upper.sum()) >= agent.omega.total >= 0
            if not ok:
                messages.append(f"agent {i}: empty local set")
        else:
            # oracle sets: the projection must be idempotent on a probe point
            p = agent.omega.project(np.full(dims.n, 0.5))
            ok = bool(np.linalg.norm(p - agent.omega.project(p)) <= 1e-12)
            if not ok:
                messages.append(f"agent {i}: projection oracle is not idempotent")
        nonempty.append(ok)

    grad_errs = []
    sigma_probe = np.full(dims.n, 0.25)
    for agent in game.agents:
        x_probe = agent.omega.default_point()
        err = _fd_gradient_error(agent.cost, x_probe, sigma_probe)
        if np.isfinite(err):
            grad_errs.append(err)

    feasible = strictly = False
    point = None
    if check_feasibility and dims_ok and all(nonempty):
        try:
            point, strictly = find_feasible_point(game)
            feasible = True
            if not strictly:
                messages.append("no strictly feasible point found; constraint may be tight")
        except Infeasible as exc:
            messages.append(str(exc))

    return ValidationReport(
        dims_ok=dims_ok,
        nonempty=nonempty,
        gradient_rel_err=grad_errs,
        feasible=feasible,
        strictly_feasible=strictly,
        feasible_point=point,
        messages=messages,
    )
