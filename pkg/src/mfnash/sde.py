"""Jump-diffusion primitives: time grids, driving noise, the Euler step and
empirical checks of the coefficient assumptions.

Coefficient calling convention
------------------------------
Every coefficient of a :class:`ModelSpec` is a vectorised numpy callable.
Measures are passed as a 2-D array ``atoms`` of shape ``(B, m)``: row ``r``
holds the atoms of the empirical measure that applies to row ``r`` of the
state array. States ``x`` and actions ``a`` broadcast against ``(B, k)``.
Measure-dependent coefficients must be symmetric functions of a row (the
simulator passes sorted rows, so they are canonical anyway)::

    b(t, x, atoms)      drift
    sigma(t, x)         volatility
    beta(atoms, a)      jump size
    lam(t)              jump intensity, vectorised over t
    f(t, x, atoms, a)   running cost
    g(x, atoms)         terminal cost
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

#: Largest allowed expected number of jumps per step, ``||lambda||_inf * dt``.
MAX_JUMPS_PER_STEP = 0.1


@dataclass(frozen=True)
class TimeGrid:
    T: float
    K: int

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.K + 1) * self.dt
        t[-1] = self.T
        return t


def build_time_grid(T: float, K: int) -> TimeGrid:
    if not T > 0:
        raise ValueError(f"horizon must be positive, got T={T}")
    if int(K) != K or K < 1:
        raise ValueError(f"need at least one step, got K={K}")
    return TimeGrid(float(T), int(K))


@dataclass(frozen=True)
class ActionSpace:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise ValueError(f"action interval must be finite and ordered, got [{self.lo}, {self.hi}]")

    @property
    def a_inf(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def grid(self, n: int) -> np.ndarray:
        if n == 1 or self.lo == self.hi:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, n)

    def clip(self, a):
        return np.clip(a, self.lo, self.hi)


Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass
class ModelSpec:
    """Coefficients of the symmetric game plus their declared constants.

    ``L`` is the common Lipschitz constant and ``M`` the bound on
    ``||b|| + ||sigma|| + ||beta|| + ||lambda||``; both are declarations that
    :func:`validate_coefficients` checks empirically. ``lam_max`` is the
    thinning envelope for the intensity (defaults to ``M``).
    """

    name: str
    b: Callable
    sigma: Callable
    beta: Callable
    lam: Callable
    f: Callable
    g: Callable
    L: float
    M: float
    actions: ActionSpace
    init_sampler: Sampler
    q: float
    lam_max: float | None = None
    space_box: tuple[float, float] | None = None
    description: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.q > 2 or self.q == 4:
            raise ValueError(f"initial law needs a finite moment of order q > 2, q != 4; got q={self.q}")
        if self.lam_max is None:
            self.lam_max = float(self.M)

    def sample_initial(self, rng: np.random.Generator, size: int) -> np.ndarray:
        x = np.asarray(self.init_sampler(rng, size), dtype=float)
        if x.shape != (size,):
            x = np.broadcast_to(x, (size,)).copy()
        return x


def check_jump_resolution(grid: TimeGrid, lam_max: float) -> None:
    ratio = lam_max * grid.dt
    if ratio > MAX_JUMPS_PER_STEP + 1e-12:
        raise ValueError(
            f"||lambda||_inf * dt = {ratio:.4g} exceeds {MAX_JUMPS_PER_STEP}; increase K"
        )


# ---------------------------------------------------------------------------
# Driving noise
# ---------------------------------------------------------------------------


def stream_rng(seed: int, stage: int, rep: int) -> np.random.Generator:
    """Counter-based generator for one (stage, replication) stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stage), int(rep)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class DrivingNoise:
    """Brownian increments and jump counts, shape ``(reps, paths, K)``.

    ``xi`` holds the initial states ``(reps, paths)`` when an initial law was
    supplied. ``seed_record`` is ``(seed, stage, first_rep)``: replication
    ``first_rep + r`` was drawn from :func:`stream_rng` ``(seed, stage, .)``.
    """

    dW: np.ndarray
    dN: np.ndarray
    xi: np.ndarray | None
    seed_record: tuple[int, int, int]

    @property
    def reps(self) -> int:
        return self.dW.shape[0]

    @property
    def paths(self) -> int:
        return self.dW.shape[1]

    def select(self, reps=slice(None), paths=slice(None)) -> "DrivingNoise":
        xi = None if self.xi is None else self.xi[reps][:, paths]
        return DrivingNoise(self.dW[reps][:, paths], self.dN[reps][:, paths], xi, self.seed_record)


def _intensity_on(lam: Callable, t) -> np.ndarray:
    return np.broadcast_to(np.asarray(lam(np.asarray(t, dtype=float)), dtype=float), np.shape(t))


def _thinned_counts(rng, grid: TimeGrid, lam: Callable, lam_max: float, n: int) -> np.ndarray:
    K, dt = grid.K, grid.dt
    counts = np.zeros((n, K), dtype=np.int64)
    if lam_max <= 0:
        return counts
    cand = rng.poisson(lam_max * dt, size=(n, K))
    total = int(cand.sum())
    if total == 0:
        return counts
    cell = np.repeat(np.arange(n * K), cand.ravel())
    tau = grid.nodes[cell % K] + dt * rng.random(total)
    keep = rng.random(total) * lam_max <= _intensity_on(lam, tau)
    return np.bincount(cell[keep], minlength=n * K).reshape(n, K)


def sample_noise(
    grid: TimeGrid,
    lam: Callable,
    n_paths: int,
    seed: int,
    *,
    reps: int = 1,
    lam_max: float | None = None,
    init_sampler: Sampler | None = None,
    stage: int = 0,
    first_rep: int = 0,
) -> DrivingNoise:
    """Draw Brownian increments and thinned Poisson counts for every path.

    Each replication comes from its own counter-based stream, so any subset
    of replications can be regenerated independently of the others.
    Jump counts are produced by thinning a homogeneous Poisson process of
    rate ``lam_max`` against ``lam(t)``.
    """
    nodes = grid.nodes
    probe = np.concatenate((nodes, nodes[:-1] + grid.dt / 2))
    lam_vals = _intensity_on(lam, probe)
    if np.any(lam_vals < 0):
        raise ValueError("jump intensity must be nonnegative")
    bound = float(lam_vals.max()) if lam_max is None else float(lam_max)
    if lam_vals.max() > bound * (1 + 1e-12):
        raise ValueError(f"intensity reaches {lam_vals.max():.4g}, above the declared bound {bound:.4g}")
    sq = np.sqrt(grid.dt)
    dW = np.empty((reps, n_paths, grid.K))
    dN = np.empty((reps, n_paths, grid.K), dtype=np.int64)
    xi = None if init_sampler is None else np.empty((reps, n_paths))
    for r in range(reps):
        rng = stream_rng(seed, stage, first_rep + r)
        if xi is not None:
            x0 = np.asarray(init_sampler(rng, n_paths), dtype=float)
            xi[r] = np.broadcast_to(x0, (n_paths,))
        dW[r] = sq * rng.standard_normal((n_paths, grid.K))
        dN[r] = _thinned_counts(rng, grid, lam, bound, n_paths)
    return DrivingNoise(dW, dN, xi, (int(seed), int(stage), int(first_rep)))


# ---------------------------------------------------------------------------
# Euler transition
# ---------------------------------------------------------------------------


def euler_step(x, t, atoms, a, dW, dN, spec: ModelSpec, dt: float):
    """Advance ``x`` one step of the compensated-jump Euler scheme.

    ``atoms`` is the left-limit measure (the states at the start of the
    step), used both in the drift and in the jump size.
    """
    atoms = np.atleast_2d(atoms)
    lam_t = float(np.asarray(spec.lam(np.asarray(float(t)))))
    drift = spec.b(t, x, atoms)
    vol = spec.sigma(t, x)
    jump = spec.beta(atoms, a)
    return x + drift * dt + vol * dW + jump * (dN - lam_t * dt)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------


@dataclass
class ProbePlan:
    t: np.ndarray
    x: np.ndarray
    measures: list
    actions: np.ndarray


def default_probe(spec: ModelSpec, T: float = 1.0, seed: int = 0) -> ProbePlan:
    rng = np.random.default_rng(seed)
    lo, hi = spec.space_box if spec.space_box is not None else (-5.0, 5.0)
    base = rng.standard_normal(400)
    measures = [np.sort(mu + s * base) for mu in (-1.0, 0.0, 0.5, 2.0) for s in (0.2, 1.0)]
    return ProbePlan(
        t=np.linspace(0.0, T, 5),
        x=np.linspace(lo, hi, 201),
        measures=measures,
        actions=spec.actions.grid(17),
    )


@dataclass
class ValidationReport:
    lipschitz: dict
    sup: dict
    declared_L: float
    declared_M: float
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "lipschitz": self.lipschitz,
            "sup": self.sup,
            "declared_L": self.declared_L,
            "declared_M": self.declared_M,
            "violations": list(self.violations),
            "passed": self.passed,
        }


def _adjacent_ratio(vals: np.ndarray, x: np.ndarray) -> float:
    # vals (..., J) along sorted x
    dv = np.abs(np.diff(vals, axis=-1))
    dx = np.diff(x)
    return float(np.max(dv / dx)) if dv.size else 0.0


def validate_coefficients(spec: ModelSpec, probe: ProbePlan | None = None, slack: float = 0.05) -> ValidationReport:
    """Empirical Lipschitz ratios and sup-norms on a finite probe set.

    Violations of the declared ``L`` or ``M`` by more than ``slack``
    (relative) are listed in the report; nothing is raised.
    """
    from .measure import wasserstein2_sorted

    probe = probe or default_probe(spec)
    x = np.sort(np.asarray(probe.x, dtype=float))
    acts = np.asarray(probe.actions, dtype=float)
    mus = [np.sort(np.asarray(m, dtype=float)) for m in probe.measures]
    X = x[None, :]

    ratio = {k: 0.0 for k in ("b_x", "b_mu", "sigma_x", "beta_mu", "beta_a", "f_x", "f_mu", "g_x", "g_mu")}
    sup = {"b": 0.0, "sigma": 0.0, "beta": 0.0, "lambda": 0.0}

    pairs = [(i, j, wasserstein2_sorted(mus[i], mus[j])) for i in range(len(mus)) for j in range(i + 1, len(mus))]
    pairs = [p for p in pairs if p[2] > 0]

    for t in probe.t:
        bvals = [np.broadcast_to(spec.b(t, X, m[None, :]), X.shape)[0] for m in mus]
        sv = np.broadcast_to(spec.sigma(t, X), X.shape)[0]
        ratio["sigma_x"] = max(ratio["sigma_x"], _adjacent_ratio(sv, x))
        sup["sigma"] = max(sup["sigma"], float(np.max(np.abs(sv))))
        for bv in bvals:
            ratio["b_x"] = max(ratio["b_x"], _adjacent_ratio(bv, x))
            sup["b"] = max(sup["b"], float(np.max(np.abs(bv))))
        for i, j, d in pairs:
            ratio["b_mu"] = max(ratio["b_mu"], float(np.max(np.abs(bvals[i] - bvals[j]))) / d)
        fvals = []
        for m in mus:
            fv = np.broadcast_to(spec.f(t, X, m[None, :], acts[:, None]), (acts.size, x.size))
            fvals.append(fv)
            ratio["f_x"] = max(ratio["f_x"], _adjacent_ratio(fv, x))
        for i, j, d in pairs:
            ratio["f_mu"] = max(ratio["f_mu"], float(np.max(np.abs(fvals[i] - fvals[j]))) / d)
    lam_t = np.asarray(spec.lam(np.asarray(probe.t, dtype=float)), dtype=float)
    sup["lambda"] = float(np.max(np.abs(lam_t)))

    acts_sorted = np.sort(acts)
    betas = [np.broadcast_to(spec.beta(m[None, :], acts_sorted[None, :]), (1, acts.size))[0] for m in mus]
    for bv in betas:
        sup["beta"] = max(sup["beta"], float(np.max(np.abs(bv))))
        if acts_sorted.size > 1:
            ratio["beta_a"] = max(ratio["beta_a"], _adjacent_ratio(bv, acts_sorted))
    for i, j, d in pairs:
        ratio["beta_mu"] = max(ratio["beta_mu"], float(np.max(np.abs(betas[i] - betas[j]))) / d)

    gvals = [np.broadcast_to(spec.g(X, m[None, :]), X.shape)[0] for m in mus]
    for gv in gvals:
        ratio["g_x"] = max(ratio["g_x"], _adjacent_ratio(gv, x))
    for i, j, d in pairs:
        ratio["g_mu"] = max(ratio["g_mu"], float(np.max(np.abs(gvals[i] - gvals[j]))) / d)

    sup["sum"] = sup["b"] + sup["sigma"] + sup["beta"] + sup["lambda"]
    violations = []
    for k, r in ratio.items():
        if r > spec.L * (1 + slack):
            violations.append(f"{k}: empirical Lipschitz ratio {r:.4g} > declared L={spec.L:g}")
    if sup["sum"] > spec.M * (1 + slack):
        violations.append(f"sup-norm sum {sup['sum']:.4g} > declared M={spec.M:g}")
    if np.any(lam_t < 0):
        violations.append("lambda takes negative values")
    return ValidationReport(ratio, sup, float(spec.L), float(spec.M), violations)
