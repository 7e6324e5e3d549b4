"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module are bound to one of the two
variants according to :data:`mfnash._accel.USE_NUMBA`. Both variants are
always importable (``*_nb`` / ``*_np``) so tests and the benchmark can compare
them directly.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Order-2 Wasserstein distance between two sorted 1-D atom arrays
# ---------------------------------------------------------------------------


def w2_sq_sorted_np(x: np.ndarray, y: np.ndarray) -> float:
    """Squared W2 between uniform empirical measures on sorted ``x`` and ``y``.

    Integrates the squared difference of the two quantile functions over the
    common refinement of their breakpoints ``i/n`` and ``j/m``.
    """
    n, m = x.size, y.size
    if n == m:
        d = x - y
        return float(np.dot(d, d) / n)
    # breakpoints as integers on the common denominator n*m
    cuts = np.union1d(np.arange(1, n + 1) * m, np.arange(1, m + 1) * n)
    widths = np.diff(np.concatenate(([0], cuts)))
    left = cuts - widths  # interval (left, cut]
    ix = left // m
    iy = left // n
    d = x[ix] - y[iy]
    return float(np.dot(widths, d * d) / (n * m))


@njit
def w2_sq_sorted_nb(x, y):
    n = x.size
    m = y.size
    if n == m:
        acc = 0.0
        for i in range(n):
            d = x[i] - y[i]
            acc += d * d
        return acc / n
    # walk both quantile functions on the integer scale n*m
    i = 0
    j = 0
    pos = 0
    acc = 0.0
    while i < n and j < m:
        nx = (i + 1) * m
        ny = (j + 1) * n
        nxt = nx if nx < ny else ny
        d = x[i] - y[j]
        acc += (nxt - pos) * d * d
        pos = nxt
        if nx == nxt:
            i += 1
        if ny == nxt:
            j += 1
    return acc / (n * m)


# ---------------------------------------------------------------------------
# Batched squared W2 from many sorted rows to one large sorted reference
# ---------------------------------------------------------------------------


def _merge_segments(n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Common refinement of the quantile partitions of an n-atom and an
    m-atom uniform measure, in integer units of 1/(n m): segment weights and
    the owning atom on either side."""
    ends = np.union1d(np.arange(1, n + 1, dtype=np.int64) * m, np.arange(1, m + 1, dtype=np.int64) * n)
    w = np.diff(np.concatenate((np.zeros(1, dtype=np.int64), ends)))
    start = ends - w
    return w, start // m, start // n


def w2_sq_rows_to_ref_np(xs: np.ndarray, ref: np.ndarray, budget: int = 4_000_000) -> np.ndarray:
    """Squared W2 from each sorted row of ``xs`` (R, n) to sorted ``ref`` (m,).

    Quantile coupling evaluated segment by segment on the merged partition,
    O(n + m) per row. Weights are exact integers, so identical measures give
    exactly zero.
    """
    xs = np.atleast_2d(xs)
    n, m = xs.shape[1], ref.size
    w, ix, jx = _merge_segments(n, m)
    wf = w.astype(float)
    out = np.empty(xs.shape[0])
    step = max(1, budget // w.size)
    for r0 in range(0, xs.shape[0], step):
        d = xs[r0 : r0 + step, ix] - ref[jx]
        out[r0 : r0 + step] = (d * d) @ wf
    return out / (n * m)


@njit
def w2_sq_rows_to_ref_nb(xs, ref):
    nrow, n = xs.shape
    m = ref.size
    total = n * m
    out = np.empty(nrow)
    for k in range(nrow):
        i = 0
        j = 0
        pos = 0
        acc = 0.0
        while pos < total:
            ex = (i + 1) * m
            ey = (j + 1) * n
            nxt = min(ex, ey)
            d = xs[k, i] - ref[j]
            acc += (nxt - pos) * d * d
            pos = nxt
            if ex == nxt:
                i += 1
            if ey == nxt:
                j += 1
        out[k] = acc / total
    return out


# ---------------------------------------------------------------------------
# Piecewise-linear interpolation on a uniform grid, clamped to the end nodes
# ---------------------------------------------------------------------------


def interp_uniform_np(xq: np.ndarray, x0: float, dx: float, fp: np.ndarray) -> np.ndarray:
    xp = x0 + dx * np.arange(fp.size)
    return np.interp(xq, xp, fp)


@njit
def interp_uniform_nb(xq, x0, dx, fp):
    flat = xq.ravel()
    out = np.empty(flat.size)
    last = fp.size - 1
    for q in range(flat.size):
        s = (flat[q] - x0) / dx
        if s <= 0.0:
            out[q] = fp[0]
        elif s >= last:
            out[q] = fp[last]
        else:
            j = int(s)
            w = s - j
            out[q] = (1.0 - w) * fp[j] + w * fp[j + 1]
    return out.reshape(xq.shape)


# ---------------------------------------------------------------------------
# One backward layer of the explicit HJB scheme
# ---------------------------------------------------------------------------


def hjb_layer_np(v_next, x0, dx, drift_dt, half_var_dt, beta, lam_dt, run_cost):
    """Minimise the one-step dynamic-programming candidates over actions.

    ``drift_dt``, ``half_var_dt`` have shape (J,); ``beta`` and ``run_cost``
    have shape (n_actions, J). Returns (v, argmin index, jump clamp count).
    The no-jump branch uses the three-point central stencil around the node
    when it is monotone, otherwise around the drift-shifted point
    (semi-Lagrangian). The jump branch interpolates at the displaced point.
    """
    nj = v_next.size
    x = x0 + dx * np.arange(nj)
    p = half_var_dt / (dx * dx)
    s = drift_dt[None, :] - beta * lam_dt
    vm = np.concatenate((v_next[:1], v_next[:-1]))
    vp = np.concatenate((v_next[1:], v_next[-1:]))
    central = np.abs(s) * dx <= 2.0 * half_var_dt[None, :]
    pp = p + s / (2.0 * dx)
    pm = p - s / (2.0 * dx)
    v_central = pp * vp[None, :] + (1.0 - 2.0 * p) * v_next[None, :] + pm * vm[None, :]
    xs = x[None, :] + s
    v_sl = (
        p * interp_uniform_np(xs + dx, x0, dx, v_next)
        + (1.0 - 2.0 * p) * interp_uniform_np(xs, x0, dx, v_next)
        + p * interp_uniform_np(xs - dx, x0, dx, v_next)
    )
    v_nojump = np.where(central, v_central, v_sl)
    xj = x[None, :] + drift_dt[None, :] + beta * (1.0 - lam_dt)
    v_jump = interp_uniform_np(xj, x0, dx, v_next)
    hi = x0 + dx * (nj - 1)
    clamped = int(np.count_nonzero((xj < x0) | (xj > hi))) if lam_dt > 0 else 0
    cand = run_cost + (1.0 - lam_dt) * v_nojump + lam_dt * v_jump
    idx = np.argmin(cand, axis=0)
    return cand[idx, np.arange(nj)], idx, clamped


@njit
def _interp1(xq, x0, dx, fp):
    last = fp.size - 1
    s = (xq - x0) / dx
    if s <= 0.0:
        return fp[0]
    if s >= last:
        return fp[last]
    j = int(s)
    w = s - j
    return (1.0 - w) * fp[j] + w * fp[j + 1]


@njit
def hjb_layer_nb(v_next, x0, dx, drift_dt, half_var_dt, beta, lam_dt, run_cost):
    na, nj = beta.shape
    v = np.empty(nj)
    idx = np.zeros(nj, dtype=np.int64)
    hi = x0 + dx * (nj - 1)
    clamped = 0
    for j in range(nj):
        x = x0 + dx * j
        p = half_var_dt[j] / (dx * dx)
        vm = v_next[j - 1] if j > 0 else v_next[0]
        vp = v_next[j + 1] if j < nj - 1 else v_next[nj - 1]
        best = np.inf
        for ia in range(na):
            s = drift_dt[j] - beta[ia, j] * lam_dt
            if abs(s) * dx <= 2.0 * half_var_dt[j]:
                pp = p + s / (2.0 * dx)
                pm = p - s / (2.0 * dx)
                vn = pp * vp + (1.0 - 2.0 * p) * v_next[j] + pm * vm
            else:
                xs = x + s
                vn = (
                    p * _interp1(xs + dx, x0, dx, v_next)
                    + (1.0 - 2.0 * p) * _interp1(xs, x0, dx, v_next)
                    + p * _interp1(xs - dx, x0, dx, v_next)
                )
            xj = x + drift_dt[j] + beta[ia, j] * (1.0 - lam_dt)
            if lam_dt > 0 and (xj < x0 or xj > hi):
                clamped += 1
            c = run_cost[ia, j] + (1.0 - lam_dt) * vn + lam_dt * _interp1(xj, x0, dx, v_next)
            if c < best:
                best = c
                idx[j] = ia
        v[j] = best
    return v, idx, clamped


# ---------------------------------------------------------------------------
# Bilinear policy evaluation at a fixed time
# ---------------------------------------------------------------------------


def policy_eval_np(table, t0, dt, x0, dx, t, xq, lo, hi):
    nt = table.shape[0]
    s = min(max((t - t0) / dt, 0.0), nt - 1.0)
    k = min(int(np.floor(s)), nt - 2) if nt > 1 else 0
    w = s - k
    a = interp_uniform_np(xq, x0, dx, table[k])
    if w > 0.0:
        a = (1.0 - w) * a + w * interp_uniform_np(xq, x0, dx, table[k + 1])
    return np.clip(a, lo, hi)


@njit
def policy_eval_nb(table, t0, dt, x0, dx, t, xq, lo, hi):
    nt = table.shape[0]
    s = min(max((t - t0) / dt, 0.0), nt - 1.0)
    k = min(int(np.floor(s)), nt - 2) if nt > 1 else 0
    w = s - k
    flat = xq.ravel()
    out = np.empty(flat.size)
    row0 = table[k]
    for q in range(flat.size):
        a = _interp1(flat[q], x0, dx, row0)
        if w > 0.0:
            a = (1.0 - w) * a + w * _interp1(flat[q], x0, dx, table[k + 1])
        out[q] = min(max(a, lo), hi)
    return out.reshape(xq.shape)


if USE_NUMBA:
    w2_sq_sorted = w2_sq_sorted_nb
    w2_sq_rows_to_ref = w2_sq_rows_to_ref_nb
    interp_uniform = interp_uniform_nb
    hjb_layer = hjb_layer_nb
    policy_eval = policy_eval_nb
else:
    w2_sq_sorted = w2_sq_sorted_np
    w2_sq_rows_to_ref = w2_sq_rows_to_ref_np
    interp_uniform = interp_uniform_np
    hjb_layer = hjb_layer_np
    policy_eval = policy_eval_np
