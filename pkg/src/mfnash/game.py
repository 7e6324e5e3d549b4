"""Interacting n-player system: strategies, simulation and cost estimation."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .measure import EmpiricalMeasure, MeasureFlow, fit_rate
from .sde import DrivingNoise, ModelSpec, TimeGrid, check_jump_resolution, sample_noise

#: Upper bound on reps * players simulated at once; fixes the chunking so
#: results do not depend on the thread count.
CHUNK_BUDGET = 100_000


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


class Strategy:
    """An admissible control. ``actions`` returns raw (unclipped) actions."""

    label = "strategy"

    def actions(self, k: int, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ConstantStrategy(Strategy):
    def __init__(self, a: float, label: str | None = None):
        self.a = float(a)
        self.label = label or f"const({self.a:g})"

    def actions(self, k, t, x):
        return np.full(x.shape, self.a)


class OpenLoopStrategy(Strategy):
    """Deterministic action path, one action per time step."""

    def __init__(self, path, label: str = "open-loop"):
        self.path = np.asarray(path, dtype=float)
        self.label = label

    def actions(self, k, t, x):
        return np.full(x.shape, self.path[k])


class FeedbackStrategy(Strategy):
    """Markov feedback on the player's own state at the start of the step."""

    def __init__(self, policy, label: str = "feedback"):
        self.policy = policy
        self.label = label

    def actions(self, k, t, x):
        return self.policy.evaluate(t, x)


def bang_bang(grid: TimeGrid, a_first: float, a_second: float, t_switch: float) -> OpenLoopStrategy:
    path = np.where(grid.nodes[:-1] < t_switch, a_first, a_second)
    return OpenLoopStrategy(path, label=f"bang({a_first:g}->{a_second:g}@{t_switch:g})")


def random_open_loop(grid: TimeGrid, lo: float, hi: float, seed: int) -> OpenLoopStrategy:
    rng = np.random.default_rng(seed)
    return OpenLoopStrategy(rng.uniform(lo, hi, grid.K), label=f"random-open-loop({seed})")


class StrategyProfile:
    """Strategies of all n players; slots may share one strategy object."""

    def __init__(self, strategies):
        self.strategies = list(strategies)
        if not self.strategies:
            raise ValueError("a profile needs at least one player")
        self._groups = None

    def __len__(self):
        return len(self.strategies)

    def __getitem__(self, i):
        return self.strategies[i]

    @property
    def n(self) -> int:
        return len(self.strategies)

    def groups(self) -> list[tuple[Strategy, np.ndarray]]:
        """(strategy, player indices) for every distinct strategy object."""
        if self._groups is None:
            order: dict[int, list] = {}
            objs: dict[int, Strategy] = {}
            for i, s in enumerate(self.strategies):
                order.setdefault(id(s), []).append(i)
                objs[id(s)] = s
            self._groups = [(objs[key], np.asarray(idx)) for key, idx in order.items()]
        return self._groups


def uniform_profile(strategy: Strategy, n: int) -> StrategyProfile:
    return StrategyProfile([strategy] * n)


def deviate(profile: StrategyProfile, i: int, eta: Strategy) -> StrategyProfile:
    if not 0 <= i < profile.n:
        raise IndexError(f"player index {i} out of range for {profile.n} players")
    slots = list(profile.strategies)
    slots[i] = eta
    return StrategyProfile(slots)


# ---------------------------------------------------------------------------
# Simulation engine
# ---------------------------------------------------------------------------


@dataclass
class ChunkPaths:
    """Paths of one block of replications (arrays indexed [rep, player, step])."""

    X: np.ndarray  # (R, n, K+1)
    A: np.ndarray  # (R, n, K) clipped actions
    sorted_X: np.ndarray | None  # (R, n, K+1) when the system measure is its own
    out_of_range: int


def _profile_actions(profile: StrategyProfile, k: int, t: float, x: np.ndarray) -> np.ndarray:
    groups = profile.groups()
    if len(groups) == 1:
        return np.asarray(groups[0][0].actions(k, t, x), dtype=float)
    a = np.empty_like(x)
    for strat, idx in groups:
        a[:, idx] = strat.actions(k, t, x[:, idx])
    return a


def run_chunk(
    spec: ModelSpec,
    grid: TimeGrid,
    profile: StrategyProfile,
    noise: DrivingNoise,
    flow: MeasureFlow | None = None,
    strict: bool = False,
) -> ChunkPaths:
    """Advance all players of every replication in ``noise`` in lockstep.

    With ``flow=None`` the drift and jump size see the empirical measure of
    the system at the start of each step; otherwise they see ``flow``
    (decoupled players, as in the limiting game).
    """
    R, n, K = noise.dW.shape
    if profile.n != n:
        raise ValueError(f"profile has {profile.n} players, noise has {n} paths")
    X = np.empty((R, n, K + 1))
    A = np.empty((R, n, K))
    S = np.empty((R, n, K + 1)) if flow is None else None
    x = np.array(noise.xi, dtype=float)
    X[:, :, 0] = x
    lo, hi = spec.actions.lo, spec.actions.hi
    bad = 0
    nodes, dt = grid.nodes, grid.dt
    for k in range(K):
        t = nodes[k]
        if flow is None:
            atoms = np.sort(x, axis=1)
            S[:, :, k] = atoms
        else:
            atoms = flow.row(k)
        a = _profile_actions(profile, k, t, x)
        outside = (a < lo) | (a > hi)
        if outside.any():
            bad += int(outside.sum())
            if strict:
                raise ValueError(f"strategy produced {int(outside.sum())} actions outside [{lo}, {hi}] at step {k}")
            a = np.clip(a, lo, hi)
        A[:, :, k] = a
        lam_t = float(np.asarray(spec.lam(np.asarray(float(t)))))
        x = (
            x
            + spec.b(t, x, atoms) * dt
            + spec.sigma(t, x) * noise.dW[:, :, k]
            + spec.beta(atoms, a) * (noise.dN[:, :, k] - lam_t * dt)
        )
        X[:, :, k + 1] = x
    if S is not None:
        S[:, :, K] = np.sort(x, axis=1)
    return ChunkPaths(X, A, S, bad)


def chunk_bounds(reps: int, n: int, budget: int = CHUNK_BUDGET) -> list[tuple[int, int]]:
    size = max(1, min(reps, budget // max(n, 1)))
    return [(r0, min(reps, r0 + size)) for r0 in range(0, reps, size)]


def map_chunks(fn, reps: int, n: int, threads: int = 1):
    """Apply ``fn(r0, r1)`` to every replication block; results in block order."""
    bounds = chunk_bounds(reps, n)
    if threads <= 1 or len(bounds) == 1:
        return [fn(r0, r1) for r0, r1 in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def chunk_noise(spec: ModelSpec, grid: TimeGrid, n: int, seed: int, stage: int, r0: int, r1: int) -> DrivingNoise:
    return sample_noise(
        grid,
        spec.lam,
        n,
        seed,
        reps=r1 - r0,
        lam_max=spec.lam_max,
        init_sampler=spec.sample_initial,
        stage=stage,
        first_rep=r0,
    )


def path_costs(spec: ModelSpec, grid: TimeGrid, x: np.ndarray, a: np.ndarray, measure_at) -> np.ndarray:
    """Per-replication cost of one player's path.

    ``x`` is (R, K+1), ``a`` is (R, K); ``measure_at(k)`` returns the atom rows
    (R or 1, m) to charge at node k. Left-endpoint rule for the running cost.
    """
    nodes, dt = grid.nodes, grid.dt
    total = np.zeros(x.shape[0])
    for k in range(grid.K):
        total += np.broadcast_to(spec.f(nodes[k], x[:, k : k + 1], measure_at(k), a[:, k : k + 1]), (x.shape[0], 1))[:, 0] * dt
    total += np.broadcast_to(spec.g(x[:, -1:], measure_at(grid.K)), (x.shape[0], 1))[:, 0]
    return total


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


@dataclass
class SystemPaths:
    """States ``X[rep, player, step]`` and the empirical flow of each rep."""

    grid: TimeGrid
    X: np.ndarray
    actions: np.ndarray
    seed_record: tuple
    diagnostics: dict = field(default_factory=dict)

    def measure(self, rep: int, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(np.sort(self.X[rep, :, k]))

    def flow(self, rep: int) -> MeasureFlow:
        return MeasureFlow.from_states(self.grid, self.X[rep].T)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "player", "step", "state"])
        R, n, K1 = self.X.shape
        for r in range(R):
            for i in range(n):
                for k in range(K1):
                    w.writerow([r, i, k, repr(float(self.X[r, i, k]))])
        return buf.getvalue()


@dataclass
class CostEstimate:
    mean: float
    stderr: float
    reps: int
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, samples) -> "CostEstimate":
        s = np.asarray(samples, dtype=float)
        se = float(s.std(ddof=1) / np.sqrt(s.size)) if s.size > 1 else 0.0
        return cls(float(s.mean()), se, int(s.size), s)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "reps": self.reps}


def simulate_system(
    spec: ModelSpec,
    profile: StrategyProfile,
    grid: TimeGrid,
    n: int,
    reps: int,
    seed: int,
    *,
    stage: int = 0,
    threads: int = 1,
    strict: bool = False,
) -> SystemPaths:
    if n < 1 or profile.n != n:
        raise ValueError("profile length must equal the number of players n >= 1")
    check_jump_resolution(grid, spec.lam_max)

    def work(r0, r1):
        return run_chunk(spec, grid, profile, chunk_noise(spec, grid, n, seed, stage, r0, r1), strict=strict)

    parts = map_chunks(work, reps, n, threads)
    X = np.concatenate([p.X for p in parts])
    A = np.concatenate([p.A for p in parts])
    diag = {"actions_clamped": sum(p.out_of_range for p in parts)}
    return SystemPaths(grid, X, A, (int(seed), int(stage)), diag)


def estimate_cost(
    i: int,
    spec: ModelSpec,
    profile: StrategyProfile,
    grid: TimeGrid,
    n: int,
    reps: int,
    seed: int,
    *,
    stage: int = 0,
    threads: int = 1,
) -> CostEstimate:
    """Monte-Carlo estimate of player i's expected cost in the n-player game."""
    if not 0 <= i < n:
        raise IndexError(f"player index {i} out of range for {n} players")
    check_jump_resolution(grid, spec.lam_max)

    def work(r0, r1):
        p = run_chunk(spec, grid, profile, chunk_noise(spec, grid, n, seed, stage, r0, r1))
        return path_costs(spec, grid, p.X[:, i, :], p.A[:, i, :], lambda k: p.sorted_X[:, :, k])

    return CostEstimate.from_samples(np.concatenate(map_chunks(work, reps, n, threads)))


@dataclass
class MomentBoundReport:
    n: list
    profiles: list
    sup_state_sq: dict  # label -> list over n of (mean, stderr)
    sup_dw0_sq: dict
    slopes: dict  # label -> {"state": slope, "measure": slope}
    max_abs_slope: float = 0.0
    tolerance: float = 0.05
    max_slope: float = 0.0

    @property
    def passed(self) -> bool:
        """No estimate grows in n faster than ``n^tolerance``."""
        return self.max_slope <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "n": list(self.n),
            "profiles": list(self.profiles),
            "sup_state_sq": self.sup_state_sq,
            "sup_dw0_sq": self.sup_dw0_sq,
            "slopes": self.slopes,
            "max_abs_slope": self.max_abs_slope,
            "max_slope": self.max_slope,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def moment_bound_check(
    spec: ModelSpec,
    profiles: dict,
    grid: TimeGrid,
    n_ladder,
    reps: int,
    seed: int,
    *,
    tolerance: float = 0.05,
    threads: int = 1,
) -> MomentBoundReport:
    """Estimate ``E sup_t |X^1_t|^2`` and ``E sup_t d_W(mu^n_t, delta_0)^2``.

    ``profiles`` maps a label to a callable ``n -> StrategyProfile``. The
    log-log slope in n of each estimate should be flat.
    """
    check_jump_resolution(grid, spec.lam_max)
    n_ladder = [int(v) for v in n_ladder]
    st, ms, slopes = {}, {}, {}
    worst, top = 0.0, -np.inf
    for label, make in profiles.items():
        st[label], ms[label] = [], []
        for j, n in enumerate(n_ladder):
            prof = make(n)

            def work(r0, r1, prof=prof, n=n, j=j):
                p = run_chunk(spec, grid, prof, chunk_noise(spec, grid, n, seed, 100 + j, r0, r1))
                # every player is exchangeable within a profile family member
                sup_x = np.max(p.X**2, axis=2).mean(axis=1)
                sup_m = np.max(np.mean(p.X**2, axis=1), axis=1)
                return sup_x, sup_m

            parts = map_chunks(work, reps, n, threads)
            sx = np.concatenate([a for a, _ in parts])
            sm = np.concatenate([b for _, b in parts])
            st[label].append((float(sx.mean()), float(sx.std(ddof=1) / np.sqrt(sx.size))))
            ms[label].append((float(sm.mean()), float(sm.std(ddof=1) / np.sqrt(sm.size))))
        ys = np.array([v for v, _ in st[label]])
        ym = np.array([v for v, _ in ms[label]])
        s1 = fit_rate(n_ladder, ys).slope if np.all(ys > 0) else 0.0
        s2 = fit_rate(n_ladder, ym).slope if np.all(ym > 0) else 0.0
        slopes[label] = {"state": s1, "measure": s2}
        worst = max(worst, abs(s1), abs(s2))
        top = max(top, s1, s2)
    return MomentBoundReport(n_ladder, list(profiles), st, ms, slopes, worst, tolerance, float(top))
