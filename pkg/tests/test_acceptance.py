"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The toy-model solve and certification run once per session and are shared
by criteria 4 to 8 and 10; the second certification (8 threads) reuses the
first run's solver output. Expect about eight minutes on one core.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from mfnash.cert import build_dictionary, run_rung
from mfnash.cli import EXIT_CERT_FAIL, EXIT_OK, main
from mfnash.game import (
    ConstantStrategy,
    FeedbackStrategy,
    moment_bound_check,
    random_open_loop,
    uniform_profile,
)
from mfnash.measure import MeasureFlow, iid_rate_experiment, theoretical_alpha, wasserstein2, empirical
from mfnash.mfg import build_space_grid, load_artifacts, solve_hjb
from mfnash.models import get_model
from mfnash.sde import build_time_grid

from oracles import riccati_value, w2_assignment

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: list[str] = []


def report(capsys, number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    with capsys.disabled():
        print("\n" + line)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("toy")
    out = base / "t1"
    t0 = time.perf_counter()
    solve_code = main(["solve", "--config", str(CONFIGS / "toy.ini"), "--out", str(out)])
    t1 = time.perf_counter()
    cert_code = main(["certify", "--config", str(CONFIGS / "toy.ini"), "--out", str(out), "--threads", "1"])
    t2 = time.perf_counter()
    return {
        "out": out,
        "base": base,
        "solve_code": solve_code,
        "cert_code": cert_code,
        "fixed_point": json.loads((out / "solver" / "fixed_point.json").read_text()),
        "report": json.loads((out / "certification.json").read_text()),
        "solve_seconds": t1 - t0,
        "certify_seconds": t2 - t1,
    }


def _alpha(rep):
    return theoretical_alpha(rep["q"])


# 1 -------------------------------------------------------------------------


def test_01_wasserstein_exact(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(size=rng.integers(1, 9)) * rng.uniform(0.1, 10)
        y = rng.normal(size=rng.integers(1, 9)) * rng.uniform(0.1, 10) + rng.normal()
        worst = max(worst, abs(wasserstein2(empirical(x), empirical(y)) - w2_assignment(x, y)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 10
    report(capsys, 1, "W2 vs assignment oracle, 1000 pairs of <= 8 atoms", ok, f"max error {worst:.2e}, {dt:.1f} s")
    assert ok


# 2 -------------------------------------------------------------------------


def test_02_iid_sampling_rate(capsys):
    ladder = [100 * 2**k for k in range(8)]  # 100 ... 12800
    t0 = time.perf_counter()
    res = iid_rate_experiment(lambda rng, size: rng.uniform(0.0, 1.0, size), 50.0, ladder, 200, seed=11)
    dt = time.perf_counter() - t0
    slope = res.fit.slope
    ok = slope <= -0.5 + 0.1 and dt < 120
    report(capsys, 2, "i.i.d. Uniform(0,1) sampling rate", ok, f"slope {slope:.3f} (bound -0.4), {dt:.1f} s")
    assert ok


# 3 -------------------------------------------------------------------------


def _lq_error(K, J):
    spec = get_model("lq-riccati")
    grid = build_time_grid(1.0, K)
    space = build_space_grid(spec, grid, J)
    flow = MeasureFlow(grid, np.zeros((K + 1, 2)))
    v, _ = solve_hjb(spec, flow, space, action_nodes=3)
    P, r = riccati_value(spec.params["theta"], spec.params["vol"], 1.0)
    x = space.nodes
    inner = np.abs(x) <= 2.0
    exact = 0.5 * P * x[inner] ** 2 + r
    return float(np.max(np.abs(v.v[0][inner] - exact) / exact))


def test_03_hjb_riccati(capsys):
    t0 = time.perf_counter()
    e1 = _lq_error(400, 401)
    # halve dt and dx^2: 800 steps, dx / sqrt(2)
    e2 = _lq_error(800, 1 + round(400 * math.sqrt(2)))
    dt = time.perf_counter() - t0
    ratio = e1 / e2
    ok = e1 <= 0.01 and 2 * 0.7 <= ratio <= 2 * 1.3 and dt < 60
    report(capsys, 3, "HJB vs Riccati ODE", ok, f"rel. error {e1:.2e} at K=400, halving ratio {ratio:.2f}, {dt:.1f} s")
    assert ok


# 4 -------------------------------------------------------------------------


def test_04_fixed_point(capsys, toy_run):
    fp = toy_run["fixed_point"]["report"]
    ok = (toy_run["solve_code"] == EXIT_OK and fp["converged"] and fp["iterations"] <= 30
          and fp["residual"] <= 0.02 and toy_run["solve_seconds"] < 300)
    report(capsys, 4, "Picard fixed point", ok,
           f"{fp['iterations']} iterations, residual {fp['residual']:.4f} (bound 0.02), {toy_run['solve_seconds']:.0f} s")
    assert ok


# 5 -------------------------------------------------------------------------


def test_05_coupling_rate(capsys, toy_run):
    rep = toy_run["report"]
    slope = rep["coupling"]["coupling_gap"]["fit"]["slope"]
    bound = -_alpha(rep) + 0.2
    ok = rep["coupling"]["n"] == [100, 200, 400, 800, 1600, 3200] and slope <= bound
    report(capsys, 5, "coupling gap rate", ok, f"slope {slope:.3f} (bound {bound:.2f})")
    assert ok


# 6 -------------------------------------------------------------------------


def test_06_deviation_rate(capsys, toy_run):
    rep = toy_run["report"]
    slope = rep["coupling"]["deviation_stability"]["fit"]["slope"]
    spec = get_model("toy-interbank")
    policy, flow = load_artifacts(toy_run["out"] / "solver", spec.actions.lo, spec.actions.hi)
    cand = FeedbackStrategy(policy, label="candidate")
    d = build_dictionary(spec, cand, flow, policy.space)
    r = run_rung(spec, policy, flow, d, 200, 20, 0, 1000)
    zero = bool(np.all(r.dev_stab[d.candidate_index] == 0.0))
    ok = -1.25 <= slope <= -0.75 and zero
    report(capsys, 6, "deviation stability rate", ok, f"slope {slope:.3f} (window [-1.25, -0.75]), zero at eta = candidate: {zero}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_07_surrogate_rates(capsys, toy_run):
    rep = toy_run["report"]
    bound = -_alpha(rep) / 2 + 0.2
    s1 = rep["surrogate"]["game_vs_surrogate"]["fit"]["slope"]
    s2 = rep["surrogate"]["surrogate_vs_limit"]["fit"]["slope"]
    ok = s1 <= bound and s2 <= bound
    report(capsys, 7, "surrogate cost gaps", ok, f"slopes {s1:.3f} and {s2:.3f} (bound {bound:.2f})")
    assert ok


# 8 -------------------------------------------------------------------------


def test_08_epsilon_nash(capsys, toy_run):
    rep = toy_run["report"]
    eps = rep["epsilon"]
    est, se = eps["estimate"], eps["stderr"]
    comb = math.hypot(se[0], se[-1])
    a = est[-1] <= est[0] - 3 * comb
    bound = -_alpha(rep) / 2 + 0.25
    slope = eps["fit"]["slope"]
    b = slope <= bound
    c = rep["chain"]["holds"] and rep["chain"]["n"] == 1600 and rep["chain"]["k_stderr"] == 3.0
    setup = eps["n"] == [50, 100, 200, 400, 800, 1600] and len(rep["dictionary"]) >= 12
    ok = a and b and c and setup and toy_run["cert_code"] == EXIT_OK and toy_run["certify_seconds"] < 1800
    report(capsys, 8, "epsilon-Nash gap", ok,
           f"eps {est[0]:.2e} -> {est[-1]:.2e} (3 x se {3 * comb:.1e}): {a}; slope {slope:.2f} (bound {bound:.2f}): {b}; "
           f"chain: {c}; {len(rep['dictionary'])} strategies; {toy_run['certify_seconds']:.0f} s")
    assert ok


# 9 -------------------------------------------------------------------------


def test_09_negative_control(capsys, toy_run):
    out = toy_run["base"] / "negative"
    code = main(["certify", "--config", str(CONFIGS / "negative_control.ini"), "--out", str(out),
                 "--artifacts", str(toy_run["out"] / "solver")])
    rep = json.loads((out / "certification.json").read_text())
    slope = rep["epsilon"]["fit"]["slope"]
    ok = code == EXIT_CERT_FAIL and slope > -0.1 and rep["policy_variant"] == "corrupted"
    failed = sorted(k for k, v in rep["checks"].items() if not v["passed"])
    report(capsys, 9, "negative control", ok, f"eps slope {slope:.3f} (must exceed -0.1), exit {code}, failed checks {failed}")
    assert ok


# 10 ------------------------------------------------------------------------


def test_10_thread_determinism(capsys, toy_run):
    out8 = toy_run["base"] / "t8"
    code = main(["certify", "--config", str(CONFIGS / "toy.ini"), "--out", str(out8), "--threads", "8",
                 "--artifacts", str(toy_run["out"] / "solver")])
    names = ["certification.json", "certification.csv", "certification_plot.csv", "manifest_certify.json"]
    same = {n: (toy_run["out"] / n).read_bytes() == (out8 / n).read_bytes() for n in names}
    ok = code == toy_run["cert_code"] and all(same.values())
    report(capsys, 10, "thread-count determinism (1 vs 8)", ok, ", ".join(f"{n}: {'identical' if s else 'DIFFERS'}" for n, s in same.items()))
    assert ok


# 11 ------------------------------------------------------------------------


def test_11_moment_bounds(capsys, toy_run):
    spec = get_model("toy-interbank")
    policy, _ = load_artifacts(toy_run["out"] / "solver", spec.actions.lo, spec.actions.hi)
    grid = policy.grid
    ol = random_open_loop(grid, spec.actions.lo, spec.actions.hi, seed=11)
    families = {
        "candidate": lambda n: uniform_profile(FeedbackStrategy(policy, label="candidate"), n),
        "constant": lambda n: uniform_profile(ConstantStrategy(0.5), n),
        "random-open-loop": lambda n: uniform_profile(ol, n),
    }
    res = moment_bound_check(spec, families, grid, [100, 200, 400, 800, 1600, 3200], 200, seed=1)
    ok = res.max_abs_slope <= 0.05
    detail = "; ".join(f"{k}: state {v['state']:+.3f}, measure {v['measure']:+.3f}" for k, v in res.slopes.items())
    report(capsys, 11, "moment bounds flat in n (3 families)", ok, f"{detail} (window [-0.05, 0.05])")
    assert ok
