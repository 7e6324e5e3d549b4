"""Numerical solution of the limiting mean-field game.

Best response by an explicit backward dynamic-programming sweep on a
uniform (t, x) lattice, forward push-forward of the law by particles, and a
damped Picard iteration on empirical flows.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .game import (
    CostEstimate,
    FeedbackStrategy,
    Strategy,
    StrategyProfile,
    chunk_noise,
    map_chunks,
    path_costs,
    run_chunk,
    uniform_profile,
)
from .measure import MeasureFlow, flow_distance
from .sde import ModelSpec, TimeGrid, build_time_grid, check_jump_resolution, stream_rng

#: Stage tags keep the noise of each solver phase in its own streams.
STAGE_INIT, STAGE_PUSH, STAGE_MIX, STAGE_RESIDUAL, STAGE_MFG_COST = 10, 11, 12, 13, 14

MAX_CFL = 0.5


@dataclass(frozen=True)
class SpaceGrid:
    x0: float
    dx: float
    J: int

    @property
    def nodes(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.J)

    @property
    def x_max(self) -> float:
        return self.x0 + self.dx * (self.J - 1)


def space_box(spec: ModelSpec, T: float, seed: int = 0) -> tuple[float, float]:
    """Truncation box: 0.1% / 99.9% quantiles of the initial law, padded by
    ``6 (M T + A_inf)``, unless the model fixes its own box."""
    if spec.space_box is not None:
        return tuple(map(float, spec.space_box))
    sample = spec.sample_initial(stream_rng(seed, 99, 0), 200_000)
    lo, hi = np.quantile(sample, [0.001, 0.999])
    pad = 6.0 * (spec.M * T + spec.actions.a_inf)
    return float(lo - pad), float(hi + pad)


def build_space_grid(spec: ModelSpec, grid: TimeGrid, nodes: int, box: tuple[float, float] | None = None) -> SpaceGrid:
    if nodes < 2:
        raise ValueError("need at least two space nodes")
    lo, hi = box if box is not None else space_box(spec, grid.T)
    return SpaceGrid(lo, (hi - lo) / (nodes - 1), int(nodes))


@dataclass
class FeedbackPolicy:
    """Action table on the (t, x) lattice, evaluated by clamped bilinear
    interpolation."""

    grid: TimeGrid
    space: SpaceGrid
    table: np.ndarray  # (K+1, J)
    lo: float
    hi: float
    variant: str = "raw"

    def __post_init__(self):
        self.table = np.ascontiguousarray(self.table, dtype=float)

    def evaluate(self, t: float, x) -> np.ndarray:
        xq = np.ascontiguousarray(x, dtype=float)
        sp = self.space
        return kernels.policy_eval(self.table, 0.0, self.grid.dt, sp.x0, sp.dx, float(t), xq, self.lo, self.hi)

    def copy(self) -> "FeedbackPolicy":
        return FeedbackPolicy(self.grid, self.space, self.table.copy(), self.lo, self.hi, self.variant)


@dataclass
class ValueGrid:
    grid: TimeGrid
    space: SpaceGrid
    v: np.ndarray  # (K+1, J)
    jump_clamps: int = 0


@dataclass
class FixedPointReport:
    iterations: int
    gaps: list
    converged: bool
    residual: float
    tol: float
    theta: float
    policy_variant: str = "raw"
    lipschitz: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "gaps": [float(g) for g in self.gaps],
            "converged": self.converged,
            "residual": float(self.residual),
            "tol": self.tol,
            "theta": self.theta,
            "policy_variant": self.policy_variant,
            "lipschitz": float(self.lipschitz),
        }


def _coef(values, shape) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(np.asarray(values, dtype=float), shape))


def check_cfl(spec: ModelSpec, grid: TimeGrid, space: SpaceGrid) -> float:
    """Largest ``sigma^2 dt / dx^2`` over the lattice; raises above 0.5."""
    xs = space.nodes[None, :]
    worst = 0.0
    for t in grid.nodes[:-1]:
        s2 = _coef(spec.sigma(t, xs), xs.shape) ** 2
        worst = max(worst, float(s2.max()) * grid.dt / space.dx**2)
    if worst > MAX_CFL + 1e-12:
        raise ValueError(f"CFL condition violated: sigma^2 dt / dx^2 = {worst:.4g} > {MAX_CFL}")
    return worst


def solve_hjb(
    spec: ModelSpec,
    flow: MeasureFlow,
    space: SpaceGrid,
    action_nodes: int = 65,
    terminal=None,
) -> tuple[ValueGrid, FeedbackPolicy]:
    """Backward sweep for the best response to a frozen flow.

    ``terminal`` overrides the terminal layer (array over the space nodes);
    by default it is ``g(x_j, mu_T)``.
    """
    grid = flow.grid
    check_jump_resolution(grid, spec.lam_max)
    check_cfl(spec, grid, space)
    xs = space.nodes
    X = xs[None, :]
    acts = spec.actions.grid(action_nodes)
    A = acts[:, None]
    K, dt, J = grid.K, grid.dt, space.J
    v = np.empty((K + 1, J))
    table = np.empty((K + 1, J))
    if terminal is None:
        v[K] = _coef(spec.g(X, flow.row(K)), X.shape)[0]
    else:
        v[K] = np.asarray(terminal, dtype=float)
    clamps = 0
    for k in range(K - 1, -1, -1):
        t = grid.nodes[k]
        mu = flow.row(k)
        drift_dt = _coef(spec.b(t, X, mu), X.shape)[0] * dt
        half_var_dt = 0.5 * _coef(spec.sigma(t, X), X.shape)[0] ** 2 * dt
        beta = _coef(spec.beta(mu, A), (acts.size, J))
        run = _coef(spec.f(t, X, mu, A), (acts.size, J)) * dt
        lam_dt = float(np.asarray(spec.lam(np.asarray(float(t))))) * dt
        vk, idx, c = kernels.hjb_layer(v[k + 1], space.x0, space.dx, drift_dt, half_var_dt, beta, lam_dt, run)
        v[k] = vk
        table[k] = acts[idx]
        clamps += int(c)
    table[K] = table[K - 1]
    policy = FeedbackPolicy(grid, space, table, spec.actions.lo, spec.actions.hi)
    return ValueGrid(grid, space, v, clamps), policy


def lipschitz_estimate(policy: FeedbackPolicy) -> float:
    """Largest adjacent-node slope of the action table in x."""
    if policy.space.J < 2:
        raise ValueError("need at least two space nodes")
    return float(np.max(np.abs(np.diff(policy.table, axis=1))) / policy.space.dx)


def smooth_policy(policy: FeedbackPolicy) -> FeedbackPolicy:
    """One pass of a 3-node moving average along x in every time layer."""
    t = policy.table
    padded = np.concatenate((t[:, :1], t, t[:, -1:]), axis=1)
    out = (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0
    return FeedbackPolicy(policy.grid, policy.space, np.clip(out, policy.lo, policy.hi), policy.lo, policy.hi, "smoothed")


def cap_lipschitz(policy: FeedbackPolicy, cap: float | None) -> FeedbackPolicy:
    if cap is not None and lipschitz_estimate(policy) > cap:
        return smooth_policy(policy)
    return policy


def push_forward(
    spec: ModelSpec,
    policy: FeedbackPolicy | Strategy,
    flow: MeasureFlow,
    m: int,
    seed: int,
    *,
    stage: int = STAGE_PUSH,
    min_particles: int = 1000,
) -> MeasureFlow:
    """Empirical flow of m i.i.d. copies of the representative player, driven
    by ``policy`` against the frozen input ``flow``."""
    if m < min_particles:
        raise ValueError(f"push-forward needs at least {min_particles} particles, got {m}")
    strat = policy if isinstance(policy, Strategy) else FeedbackStrategy(policy)
    grid = flow.grid
    noise = chunk_noise(spec, grid, m, seed, stage, 0, 1)
    paths = run_chunk(spec, grid, uniform_profile(strat, m), noise, flow=flow)
    return MeasureFlow(grid, np.sort(paths.X[0].T, axis=1))


def zero_control_flow(spec: ModelSpec, grid: TimeGrid, m: int, seed: int, stage: int = STAGE_INIT) -> MeasureFlow:
    """Interacting m-particle system under the action closest to zero."""
    from .game import ConstantStrategy

    a0 = float(spec.actions.clip(0.0))
    noise = chunk_noise(spec, grid, m, seed, stage, 0, 1)
    paths = run_chunk(spec, grid, uniform_profile(ConstantStrategy(a0), m), noise)
    return MeasureFlow(grid, paths.sorted_X[0].T.copy())


def _mix(new: MeasureFlow, old: MeasureFlow, theta: float, rng: np.random.Generator) -> MeasureFlow:
    if theta >= 1.0:
        return new
    m = new.m
    take = int(math.ceil(theta * m))
    rows = np.empty_like(new.atoms)
    for k in range(new.atoms.shape[0]):
        pick_new = rng.choice(m, size=take, replace=False)
        pick_old = rng.choice(m, size=m - take, replace=False)
        rows[k] = np.sort(np.concatenate((new.atoms[k, pick_new], old.atoms[k, pick_old])))
    return MeasureFlow(new.grid, rows)


def picard_iterate(
    spec: ModelSpec,
    space: SpaceGrid,
    init: MeasureFlow,
    *,
    theta: float = 1.0,
    tol: float = 0.01,
    max_iter: int = 30,
    m: int = 20_000,
    seed: int = 0,
    action_nodes: int = 65,
    lipschitz_cap: float | None = None,
    residual_factor: int = 5,
) -> tuple[FeedbackPolicy, MeasureFlow, FixedPointReport]:
    """Damped fixed-point iteration ``flow -> best response -> push-forward``.

    The first best response to ``init`` only warms the flow up; gap k is
    ``sup_t d_W(flow_{k+1}, flow_k)`` from there on. Push-forwards reuse the
    same noise in every iteration, so the gap measures the change in the
    policy and the flow rather than resampling noise. On non-convergence
    the iterate with the smallest gap is returned.

    The residual compares the final flow with a fresh push-forward of
    ``residual_factor * m`` particles on an unused noise stage, so its own
    sampling error stays below that of the flow.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if init.m != m:
        raise ValueError("initial flow must carry m atoms per node")

    def best_response(flow):
        _, pol = solve_hjb(spec, flow, space, action_nodes)
        return cap_lipschitz(pol, lipschitz_cap)

    policy = best_response(init)
    flow = push_forward(spec, policy, init, m, seed)
    gaps: list[float] = []
    best = (np.inf, policy, flow)
    converged = False
    for it in range(1, max_iter + 1):
        policy = best_response(flow)
        pushed = push_forward(spec, policy, flow, m, seed)
        nxt = _mix(pushed, flow, theta, stream_rng(seed, STAGE_MIX, it))
        gap = float(np.max(flow_distance(nxt, flow)))
        gaps.append(gap)
        flow = nxt
        if gap < best[0]:
            best = (gap, policy, flow)
        if gap <= tol:
            converged = True
            break
    if not converged:
        _, policy, flow = best
    policy = best_response(flow)
    fresh = push_forward(spec, policy, flow, max(1, residual_factor) * m, seed, stage=STAGE_RESIDUAL)
    residual = float(np.max(flow_distance(fresh, flow)))
    report = FixedPointReport(len(gaps), gaps, converged, residual, tol, theta, policy.variant, lipschitz_estimate(policy))
    return policy, flow, report


def estimate_mfg_cost(
    spec: ModelSpec,
    strategy: Strategy | FeedbackPolicy,
    flow: MeasureFlow,
    reps: int,
    seed: int,
    *,
    stage: int = STAGE_MFG_COST,
    threads: int = 1,
) -> CostEstimate:
    """Cost of one representative player against the frozen ``flow``."""
    strat = strategy if isinstance(strategy, Strategy) else FeedbackStrategy(strategy)
    grid = flow.grid
    prof = StrategyProfile([strat])

    def work(r0, r1):
        p = run_chunk(spec, grid, prof, chunk_noise(spec, grid, 1, seed, stage, r0, r1), flow=flow)
        return path_costs(spec, grid, p.X[:, 0, :], p.A[:, 0, :], flow.row)

    return CostEstimate.from_samples(np.concatenate(map_chunks(work, reps, 1, threads)))


# ---------------------------------------------------------------------------
# Serialisation: policy.csv (t, x, action) and flow.npy + flow_times.csv
# ---------------------------------------------------------------------------


def policy_to_csv(policy: FeedbackPolicy) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "action"])
    ts, xs = policy.grid.nodes, policy.space.nodes
    for k, t in enumerate(ts):
        for j, x in enumerate(xs):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(policy.table[k, j]))])
    return buf.getvalue()


def policy_from_csv(text: str, lo: float, hi: float, variant: str = "raw") -> FeedbackPolicy:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    ts = np.unique(data[:, 0])
    xs = np.unique(data[:, 1])
    table = data[:, 2].reshape(ts.size, xs.size)
    grid = build_time_grid(float(ts[-1]), ts.size - 1)
    space = SpaceGrid(float(xs[0]), float((xs[-1] - xs[0]) / (xs.size - 1)), xs.size)
    return FeedbackPolicy(grid, space, table, lo, hi, variant)


@dataclass
class SolverArtifacts:
    policy: FeedbackPolicy
    flow: MeasureFlow
    report: FixedPointReport
    meta: dict = field(default_factory=dict)


def save_artifacts(out: Path, policy: FeedbackPolicy, flow: MeasureFlow) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "policy.csv").write_text(policy_to_csv(policy))
    np.save(out / "flow.npy", np.ascontiguousarray(flow.atoms))
    (out / "flow_times.csv").write_text("t\n" + "".join(f"{float(t)!r}\n" for t in flow.grid.nodes))


def load_artifacts(out: Path, lo: float, hi: float, variant: str = "raw") -> tuple[FeedbackPolicy, MeasureFlow]:
    out = Path(out)
    policy = policy_from_csv((out / "policy.csv").read_text(), lo, hi, variant)
    atoms = np.load(out / "flow.npy")
    flow = MeasureFlow(policy.grid, atoms)
    return policy, flow
