"""Independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment, linprog


def w2_permutation(x, y) -> float:
    """Equal sizes: minimum over all n! pairings."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    best = min(np.sum((x - y[list(p)]) ** 2) for p in itertools.permutations(range(y.size)))
    return math.sqrt(best / x.size)


def w2_assignment(x, y) -> float:
    """Any sizes: replicate atoms to the common multiple and solve the
    assignment problem exactly (optimal couplings of uniform measures are
    attained at permutations of the replicated atoms)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    L = math.lcm(x.size, y.size)
    xe = np.repeat(x, L // x.size)
    ye = np.repeat(y, L // y.size)
    cost = (xe[:, None] - ye[None, :]) ** 2
    r, c = linear_sum_assignment(cost)
    return math.sqrt(cost[r, c].sum() / L)


def w2_linprog(x, y) -> float:
    """Transport LP between uniform measures."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n, m = x.size, y.size
    cost = ((x[:, None] - y[None, :]) ** 2).ravel()
    A = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i] = 1
        A.append(row.ravel())
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1
        A.append(col.ravel())
    b = np.r_[np.full(n, 1 / n), np.full(m, 1 / m)]
    res = linprog(cost, A_eq=np.array(A), b_eq=b, bounds=(0, None), method="highs")
    return math.sqrt(max(res.fun, 0.0))


def riccati_value(theta: float, vol: float, T: float, t: float = 0.0):
    """(P(t), r(t)) for P' = -2 theta P - 1, P(T) = 1, r' = -vol^2 P / 2, r(T) = 0,
    integrated backwards with a tight-tolerance adaptive integrator."""

    def rhs(s, y):
        P, r = y
        return [-2 * theta * P - 1.0, -0.5 * vol**2 * P]

    sol = solve_ivp(rhs, (T, t), [1.0, 0.0], rtol=1e-12, atol=1e-14, method="DOP853")
    return sol.y[0, -1], sol.y[1, -1]
