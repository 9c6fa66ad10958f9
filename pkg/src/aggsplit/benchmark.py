"""Resource-allocation benchmark: generator, references, comparison runs.

Each agent splits one unit of work over n time slots subject to personal
caps, pays a quadratic penalty for deviating from a preferred schedule
plus a price proportional to the average allocation, and the weighted
slot totals are capped.  Parameters are drawn per agent from dedicated
seed streams so instances are reproducible and extensible in N.
"""

from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AggsplitError, GenerationFailed, MaxItersExceeded, NonSmoothCost, NotCertified
from .game import (
    AgentSpec,
    BoxSimplex,
    GameSpec,
    Dimensions,
    QuadraticAgg,
    average,
    validate_game,
)
from .engine import RunConfig, RunTrace, run_dr, run_pfb
from .operators import ExtendedPoint, monotonicity_probe, stationarity_residual
from .projections import dykstra_projection, fista_minimize, halfspace_projector
from .resolvents import StepSizes

# seed-stream tags: (seed, GLOBAL_STREAM) for shared draws, (seed, AGENT_STREAM, i) per agent
GLOBAL_STREAM = 0
AGENT_STREAM = 1
UPPER_RESAMPLE_LIMIT = 100


@dataclass(frozen=True)
class BenchmarkParams:
    """Instance-family parameters; defaults are the full-scale experiment."""

    N: int = 1000
    n: int = 10
    a_range: tuple[float, float] = (1.0, 2.0)
    w_range: tuple[float, float] = (1.0, 2.0)
    q_range: tuple[float, float] = (1.0, 2.0)
    qbar_range: tuple[float, float] = (0.0, 0.1)
    upper_total: float = 2.0
    simplex_total: float = 1.0
    b_fraction: tuple[float, float] = (0.5, 2.0 / 3.0)
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.n < 1:
            raise ValueError("N and n must be at least 1")
        lo, hi = self.b_fraction
        if not (0.5 - 1e-12 <= lo <= hi <= 2.0 / 3.0 + 1e-12):
            raise ValueError("b_fraction must stay within [1/2, 2/3]")
        if self.upper_total <= 0 or self.simplex_total < 0:
            raise ValueError("totals must be positive")


def benchmark_steps(
    N: int, gamma: float = 1.0, alpha: float = 1.0, delta_c: float = 0.5, beta_c: float = 0.5
) -> StepSizes:
    """Default solver step sizes for the benchmark family."""
    return StepSizes.from_central(np.full(N, gamma), alpha, delta_c, beta_c)


def _draw_upper(rng: np.random.Generator, n: int, total: float) -> np.ndarray:
    """Caps summing to ``total`` with every entry in [0, 1]; resamples bad draws."""
    for _ in range(UPPER_RESAMPLE_LIMIT):
        u = rng.random(n)
        s = u.sum()
        if s == 0.0:
            continue
        u = u * (total / s)
        if np.all(u <= 1.0):
            return u
    raise GenerationFailed(f"no cap vector with entries <= 1 after {UPPER_RESAMPLE_LIMIT} draws")


def generate_benchmark(params: BenchmarkParams) -> GameSpec:
    """Draw one benchmark instance; validated before returning."""
    N, n = params.N, params.n
    e1 = np.zeros(n)
    e1[0] = 1.0

    agents = []
    w = np.empty(N)
    uppers = np.empty((N, n))
    for i in range(N):
        rng = np.random.default_rng(np.random.SeedSequence((params.seed, AGENT_STREAM, i)))
        a_i = rng.uniform(*params.a_range)
        w[i] = rng.uniform(*params.w_range)
        q_i = rng.uniform(*params.q_range)
        qbar = rng.uniform(params.qbar_range[0], params.qbar_range[1], size=(n, n))
        uppers[i] = _draw_upper(rng, n, params.upper_total)
        omega = BoxSimplex(uppers[i], params.simplex_total)
        agents.append(
            {
                "omega": omega,
                "cost_a": a_i,
                "Q": q_i * np.eye(n) + qbar,
                "xtilde": omega.project(e1),
            }
        )

    rng_global = np.random.default_rng(np.random.SeedSequence((params.seed, GLOBAL_STREAM)))
    cap_totals = np.einsum("i,ij->j", w, uppers)
    lo, hi = params.b_fraction
    b = rng_global.uniform(lo * cap_totals, hi * cap_totals)

    spec_agents = [
        AgentSpec(
            omega=raw["omega"],
            cost=QuadraticAgg(a=raw["cost_a"], xtilde=raw["xtilde"], Q=raw["Q"]),
            A=w[i] * np.eye(n),
            b=b / N,
        )
        for i, raw in enumerate(agents)
    ]
    game = GameSpec(dims=Dimensions(N=N, n=n, m=n), agents=spec_agents)
    report = validate_game(game)
    if not report.ok:
        raise GenerationFailed("generated instance failed validation:\n" + report.summary())
    return game


# -- reference solutions -----------------------------------------------------------------


def ground_truth_point(
    game: GameSpec,
    tol: float = 1e-9,
    steps: StepSizes | None = None,
    cross_check: bool = True,
    max_iters: int = 1_000_000,
) -> tuple[ExtendedPoint, RunTrace]:
    """High-accuracy solve, certified by its optimality residuals.

    The run targets a stopping tolerance three orders tighter than the
    certificate; certification requires every residual at or below
    ``tol``.  With ``cross_check`` the baseline must reproduce the same
    decisions to within ``10 * tol``.
    """
    probe = monotonicity_probe(game, sample_count=min(200, 50 * game.dims.N), seed=0)
    if not probe.looks_monotone:
        warnings.warn(
            f"monotonicity probe found a negative inner product ({probe.min_inner:.3e}); "
            "the reference run may not converge"
        )
    if steps is None:
        steps = benchmark_steps(game.dims.N)
    config = RunConfig(
        steps=steps,
        stop_tol=max(tol * 1e-3, 1e-13),
        max_iters=max_iters,
        record_every=max_iters,
    )
    try:
        trace = run_dr(game, config, validate=False)
    except MaxItersExceeded as exc:
        trace = exc.trace
    kkt = trace.final_kkt
    if kkt.max_value() > tol:
        raise NotCertified(
            f"reference run residual {kkt.max_value():.3e} exceeds the certificate {tol:.3e}"
        )
    if cross_check:
        pfb_config = RunConfig(
            steps=steps, stop_tol=tol, max_iters=max_iters, record_every=max_iters
        )
        try:
            pfb_trace = run_pfb(game, pfb_config, validate=False)
        except MaxItersExceeded as exc:
            pfb_trace = exc.trace
        gap = float(np.linalg.norm(trace.final_point.x - pfb_trace.final_point.x))
        if gap > 10.0 * tol:
            raise NotCertified(f"independent methods disagree by {gap:.3e} (> {10 * tol:.3e})")
    return trace.final_point, trace


def ground_truth(game: GameSpec, tol: float = 1e-9, **kwargs) -> np.ndarray:
    """Certified reference decision vector (see :func:`ground_truth_point`)."""
    point, _ = ground_truth_point(game, tol=tol, **kwargs)
    return point.x


# -- equilibrium quality -----------------------------------------------------------------


def gae_vi_residual(game: GameSpec, x: np.ndarray, lam: np.ndarray | None = None) -> float:
    """Natural-map residual of the aggregative variational inequality at x.

    ``lam`` is the certified coupling multiplier; omitted it defaults to
    zero, appropriate only when no coupling row is active.
    """
    if lam is None:
        lam = np.zeros(game.dims.m)
    return stationarity_residual(game, np.asarray(x, dtype=np.float64), np.asarray(lam))


def _deviation_set_projector(game: GameSpec, i: int, slack: np.ndarray, x_i: np.ndarray):
    """Euclidean projector onto {z in Omega_i : A_i z <= slack}.

    ``x_i`` is a known member of the set (up to roundoff); the scaled-
    identity fast path widens its tightened caps just enough to keep it.
    """
    agent = game.agents[i]
    A = agent.A
    n = game.dims.n
    w_scalar = A[0, 0] if A.shape[0] == A.shape[1] else None
    if (
        w_scalar is not None
        and w_scalar > 0
        and isinstance(agent.omega, BoxSimplex)
        and np.array_equal(A, w_scalar * np.eye(n))
    ):
        caps = np.minimum(agent.omega.upper, np.maximum(slack, 0.0) / w_scalar)
        caps = np.maximum(caps, np.minimum(x_i, agent.omega.upper))
        tight = BoxSimplex(caps, agent.omega.total)
        return tight.project
    rows = [halfspace_projector(A[r], float(slack[r])) for r in range(A.shape[0])]

    def proj(z: np.ndarray) -> np.ndarray:
        return dykstra_projection(z, [agent.omega.project] + rows)

    return proj


def epsilon_nash_gap(
    game: GameSpec,
    x: np.ndarray,
    samples: int | None = None,
    tol: float = 1e-9,
    seed: int = 0,
) -> np.ndarray:
    """Per-agent suboptimality against unilateral feasible deviations.

    The deviation moves the average along with the deviating agent.  With
    ``samples`` set, the inner problem is estimated by the best of that
    many random feasible candidates (drawn from ``seed``) instead of
    solved.
    """
    dims = game.dims
    x = np.asarray(x, dtype=np.float64)
    X = x.reshape(dims.N, dims.n)
    sigma = average(x, dims.n)
    coupling = game.coupling_value(x)
    eps = np.empty(dims.N)
    for i, agent in enumerate(game.agents):
        cost = agent.cost
        if getattr(cost, "grad_sigma_fn", False) is None:
            raise NonSmoothCost("deviation objective needs an aggregate-gradient oracle")
        slack = game.b_total - (coupling - agent.A @ X[i])
        project = _deviation_set_projector(game, i, slack, X[i])
        sigma_others = sigma - X[i] / dims.N

        def value(z: np.ndarray) -> float:
            return cost.value(z, sigma_others + z / dims.N)

        def grad(z: np.ndarray) -> np.ndarray:
            s = sigma_others + z / dims.N
            return cost.grad(z, s) + cost.grad_sigma(z, s) / dims.N

        base = value(X[i])
        if samples is None:
            if isinstance(cost, QuadraticAgg):
                sym = 0.5 * (cost.Q + cost.Q.T)
                sym_norm = float(np.linalg.norm(sym, 2))
                lipschitz = cost.a + 2.0 * sym_norm / dims.N
                strong = max(cost.a - 2.0 * sym_norm / dims.N, 1e-12)
            else:
                lipschitz = getattr(cost, "curvature", 1.0) * (1.0 + 2.0 / dims.N)
                strong = 0.0
            z_star = fista_minimize(
                grad, project, X[i], lipschitz=lipschitz, strong_convexity=strong, tol=tol
            )
            best = value(z_star)
        else:
            rng = np.random.default_rng(np.random.SeedSequence((seed, 2, i)))
            best = np.inf
            lo, hi = agent.omega.bounding_box()
            for _ in range(samples):
                cand = project(lo + (hi - lo) * rng.random(dims.n))
                best = min(best, value(cand))
        # z = x_i is feasible, so the true minimum never exceeds base
        eps[i] = base - min(best, base)
    return eps


# -- the comparison experiment -----------------------------------------------------------


@dataclass
class MethodResult:
    curve: np.ndarray
    iters_to_tol: int | None
    final_kkt: float
    wall_ms: float


@dataclass
class SeedRecord:
    seed: int
    results: dict[str, MethodResult] = field(default_factory=dict)
    error: str | None = None


@dataclass
class ExperimentReport:
    """Aggregated outcome of the multi-seed method comparison."""

    params: BenchmarkParams
    tol: float
    methods: tuple[str, ...]
    records: list[SeedRecord]
    mean_curves: dict[str, np.ndarray]
    speed_ratio: float | None

    def iters(self, method: str) -> list[int | None]:
        return [r.results[method].iters_to_tol for r in self.records if method in r.results]

    def to_json_dict(self) -> dict:
        return {
            "params": {
                "N": self.params.N,
                "n": self.params.n,
                "seed": self.params.seed,
            },
            "tol": self.tol,
            "methods": list(self.methods),
            "speed_ratio": self.speed_ratio,
            "seeds": [
                {
                    "seed": r.seed,
                    "error": r.error,
                    "results": {
                        name: {
                            "iters_to_tol": res.iters_to_tol,
                            "final_kkt": res.final_kkt,
                            "wall_ms": res.wall_ms,
                        }
                        for name, res in r.results.items()
                    },
                }
                for r in self.records
            ],
        }

    def save(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(json.dumps(self.to_json_dict(), indent=2))
        lines = ["seed,method,iters_to_tol,final_kkt,wall_ms"]
        for rec in self.records:
            for name, res in rec.results.items():
                iters = "" if res.iters_to_tol is None else str(res.iters_to_tol)
                lines.append(
                    f"{rec.seed},{name},{iters},{res.final_kkt:.17g},{res.wall_ms:.3f}"
                )
        (outdir / "summary.csv").write_text("\n".join(lines) + "\n")
        for name, curve in self.mean_curves.items():
            rows = ["iter,mean_normalized_error"]
            rows.extend(f"{k},{v:.17g}" for k, v in enumerate(curve))
            (outdir / f"curve_{name}.csv").write_text("\n".join(rows) + "\n")


def _run_one_seed(
    params: BenchmarkParams,
    seed: int,
    methods: tuple[str, ...],
    tol: float,
    ref_tol: float,
    max_iters: int,
) -> SeedRecord:
    record = SeedRecord(seed=seed)
    try:
        game = generate_benchmark(replace(params, seed=seed))
        xbar = ground_truth(game, tol=ref_tol, cross_check=False)
        steps = benchmark_steps(game.dims.N)
        for name in methods:
            config = RunConfig(
                steps=steps,
                stop_tol=0.0,
                max_iters=max_iters,
                record_every=max_iters,
                ref_stop=tol,
            )
            runner = run_dr if name == "dr" else run_pfb
            t0 = time.perf_counter()
            try:
                trace = runner(game, config, reference=xbar, validate=False)
            except MaxItersExceeded as exc:
                trace = exc.trace
            wall_ms = 1e3 * (time.perf_counter() - t0)
            curve = trace.dist_curve / max(trace.dist_curve[0], 1e-300)
            below = np.nonzero(curve <= tol)[0]
            record.results[name] = MethodResult(
                curve=curve,
                iters_to_tol=int(below[0]) if below.size else None,
                final_kkt=trace.final_kkt.max_value(),
                wall_ms=wall_ms,
            )
    except AggsplitError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def run_comparison(
    params: BenchmarkParams,
    num_seeds: int,
    methods: Sequence[str] = ("dr", "pfb"),
    tol: float = 1e-6,
    ref_tol: float | None = None,
    max_iters: int = 200_000,
    workers: int = 1,
) -> ExperimentReport:
    """Generate instances for consecutive seeds, solve with each method,
    and aggregate normalized error curves and iteration counts.

    Per-seed failures are recorded and skipped; at least one seed must
    succeed.  Seed k uses ``params.seed + k``; results are assembled in
    seed order regardless of worker scheduling.
    """
    if num_seeds < 1:
        raise ValueError("num_seeds must be at least 1")
    methods = tuple(methods)
    for name in methods:
        if name not in ("dr", "pfb"):
            raise ValueError(f"unknown method '{name}'")
    if ref_tol is None:
        ref_tol = min(1e-8, tol * 1e-2)
    seeds = [params.seed + k for k in range(num_seeds)]
    jobs = [(params, s, methods, tol, ref_tol, max_iters) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one_seed_star, jobs))
    else:
        records = [_run_one_seed(*job) for job in jobs]

    good = [r for r in records if r.error is None]
    if not good:
        raise AggsplitError("every seed of the comparison failed")

    mean_curves: dict[str, np.ndarray] = {}
    for name in methods:
        curves = [r.results[name].curve for r in good if name in r.results]
        if not curves:
            continue
        length = max(c.shape[0] for c in curves)
        padded = np.stack(
            [np.concatenate([c, np.full(length - c.shape[0], c[-1])]) for c in curves]
        )
        mean_curves[name] = padded.mean(axis=0)

    speed_ratio = None
    if "dr" in methods and "pfb" in methods:
        pairs = [
            (r.results["dr"].iters_to_tol, r.results["pfb"].iters_to_tol)
            for r in good
            if r.results.get("dr") and r.results.get("pfb")
        ]
        resolved = [(d, p) for d, p in pairs if d is not None and p is not None]
        if resolved:
            speed_ratio = float(np.mean([p / d for d, p in resolved]))

    return ExperimentReport(
        params=params,
        tol=tol,
        methods=methods,
        records=records,
        mean_curves=mean_curves,
        speed_ratio=speed_ratio,
    )


def _run_one_seed_star(job):
    return _run_one_seed(*job)
