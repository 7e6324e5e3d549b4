"""One-dimensional empirical measures and the order-2 Wasserstein distance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .sde import TimeGrid, stream_rng


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform empirical measure ``(1/n) sum_i delta_{atoms[i]}``."""

    atoms: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("an empirical measure needs a nonempty 1-D atom array")
        if a.size > 1 and np.any(a[1:] < a[:-1]):
            raise ValueError("atoms must be sorted ascending; build measures with empirical()")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def n(self) -> int:
        return self.atoms.size

    def __eq__(self, other):
        return isinstance(other, EmpiricalMeasure) and np.array_equal(self.atoms, other.atoms)

    __hash__ = None

    def mean(self) -> float:
        return float(self.atoms.mean())


def empirical(samples) -> EmpiricalMeasure:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot build an empirical measure from no samples")
    return EmpiricalMeasure(np.sort(x))


def wasserstein2_sorted(x: np.ndarray, y: np.ndarray) -> float:
    """W2 between uniform measures on already sorted atom arrays."""
    return float(np.sqrt(max(kernels.w2_sq_sorted(np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=float)), 0.0)))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Order-2 Wasserstein distance via the monotone quantile coupling."""
    return wasserstein2_sorted(mu.atoms, nu.atoms)


def moment_q(mu: EmpiricalMeasure, q: float) -> float:
    if not q > 0:
        raise ValueError("moment order must be positive")
    return float(np.mean(np.abs(mu.atoms) ** q))


def dw_to_dirac0(mu: EmpiricalMeasure) -> float:
    return float(np.sqrt(moment_q(mu, 2)))


@dataclass
class MeasureFlow:
    """Sorted atom arrays ``atoms[k]`` for every node of ``grid``."""

    grid: TimeGrid
    atoms: np.ndarray  # (K+1, m), each row sorted

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        if self.atoms.ndim != 2 or self.atoms.shape[0] != self.grid.K + 1:
            raise ValueError("flow needs one atom row per grid node")

    @property
    def m(self) -> int:
        return self.atoms.shape[1]

    def at(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.atoms[k])

    def row(self, k: int) -> np.ndarray:
        """Atoms at node ``k`` as a ``(1, m)`` array for coefficient calls."""
        return self.atoms[k][None, :]

    def means(self) -> np.ndarray:
        return self.atoms.mean(axis=1)

    @classmethod
    def from_states(cls, grid: TimeGrid, states: np.ndarray) -> "MeasureFlow":
        """``states`` has shape (m, K+1) or (K+1, m) with K+1 matching the grid."""
        s = np.asarray(states, dtype=float)
        if s.shape[0] != grid.K + 1:
            s = s.T
        return cls(grid, np.sort(s, axis=1))


def flow_distance(a: MeasureFlow, b: MeasureFlow) -> np.ndarray:
    """``d_W(a_t, b_t)`` at every grid node."""
    return np.array([wasserstein2_sorted(a.atoms[k], b.atoms[k]) for k in range(a.atoms.shape[0])])


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------


@dataclass
class RateFit:
    n: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    residual: float
    excluded: list = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "n": [float(v) for v in self.n],
            "y": [float(v) for v in self.y],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "excluded": list(self.excluded),
            "note": self.note,
        }


def fit_rate(n, y, *, guard: bool = False) -> RateFit:
    """Least-squares slope of ``log y`` against ``log n``.

    With ``guard`` the smallest rung is dropped when, against the line fitted
    to the other rungs, its absolute residual exceeds twice the largest
    residual of the others (pre-asymptotic rung). A leave-one-out line is
    used because an outlying rung drags the full fit towards itself.
    """
    n = np.asarray(n, dtype=float)
    y = np.asarray(y, dtype=float)
    if n.shape != y.shape or n.size < 3:
        raise ValueError("need at least three (n, value) points")
    if np.any(~np.isfinite(y)) or np.any(y <= 0) or np.any(n <= 0):
        raise ValueError("rate fitting needs positive, finite values")
    if np.any(np.diff(n) <= 0):
        raise ValueError("n values must be strictly increasing")
    lx, ly = np.log(n), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + intercept)
    excluded = []
    if guard and n.size >= 4:
        keep = np.ones(n.size, bool)
        keep[0] = False  # n is increasing, so rung 0 is the smallest
        s1, c1 = np.polyfit(lx[keep], ly[keep], 1)
        r1 = ly - (s1 * lx + c1)
        if abs(r1[0]) > max(2 * np.abs(r1[keep]).max(), 1e-9):
            slope, intercept = s1, c1
            res = r1[keep]
            excluded.append(float(n[0]))
    resid = float(np.sqrt(np.mean(res**2)))
    return RateFit(n, y, float(slope), float(intercept), resid, excluded)


def read_rate_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``n,value`` rows (header optional, extra columns ignored)."""
    ns, vs = [], []
    for row in csv.reader(io.StringIO(text)):
        if not row or row[0].strip().startswith("#"):
            continue
        try:
            n, v = float(row[0]), float(row[1])
        except ValueError:
            continue  # header
        ns.append(n)
        vs.append(v)
    return np.array(ns), np.array(vs)


# ---------------------------------------------------------------------------
# i.i.d. sampling-rate experiment
# ---------------------------------------------------------------------------


def theoretical_alpha(q: float) -> float:
    return min(0.5, (q - 2.0) / q)


@dataclass
class IIDRateResult:
    fit: RateFit | None
    n: np.ndarray
    mean_sq: np.ndarray
    stderr: np.ndarray
    alpha: float
    reference_size: int
    diagnostic: str = ""

    def csv_rows(self) -> list[tuple[int, float, float]]:
        return [(int(n), float(m), float(s)) for n, m, s in zip(self.n, self.mean_sq, self.stderr)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean_sq_distance", "stderr"])
        for n, m, s in self.csv_rows():
            w.writerow([n, repr(m), repr(s)])
        return buf.getvalue()


def iid_rate_experiment(sampler, q: float, n_ladder, reps: int, seed: int, *, ref_factor: int = 100) -> IIDRateResult:
    """Mean squared W2 between n i.i.d. samples and a large reference sample.

    The reference (``ref_factor`` times the largest n) stands in for the law;
    its own sampling error biases the estimates by roughly ``1/reference``.
    """
    n_ladder = np.asarray(n_ladder, dtype=int)
    if n_ladder.size < 4 or np.any(np.diff(n_ladder) <= 0):
        raise ValueError("need an increasing ladder with at least four rungs")
    if reps < 50:
        raise ValueError("need at least 50 replications per rung")
    m_ref = int(ref_factor * n_ladder.max())
    ref = np.sort(np.asarray(sampler(stream_rng(seed, 1, 0), m_ref), dtype=float))
    if not np.all(np.isfinite(ref)):
        raise ValueError("sampler produced non-finite values")
    means, errs = [], []
    for i, n in enumerate(n_ladder):
        rows = np.empty((reps, n))
        for r in range(reps):
            rows[r] = sampler(stream_rng(seed, 2 + i, r), int(n))
        if not np.all(np.isfinite(rows)):
            raise ValueError("sampler produced non-finite values")
        rows.sort(axis=1)
        d2 = kernels.w2_sq_rows_to_ref(rows, ref)
        means.append(d2.mean())
        errs.append(d2.std(ddof=1) / np.sqrt(reps))
    means, errs = np.array(means), np.array(errs)
    alpha = theoretical_alpha(q)
    if np.all(means <= 1e-300):
        return IIDRateResult(None, n_ladder, means, errs, alpha, m_ref, "zero variance: all distances vanish (degenerate law)")
    try:
        fit = fit_rate(n_ladder, means)
    except ValueError as exc:
        return IIDRateResult(None, n_ladder, means, errs, alpha, m_ref, f"fit rejected: {exc}")
    return IIDRateResult(fit, n_ladder, means, errs, alpha, m_ref)
