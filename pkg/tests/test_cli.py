import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfnash.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main
from mfnash.config import ConfigError, ExperimentConfig, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
[model]
name = {model}

[solver]
m = 1000
tol = {tol}
max_iter = 3

[ladder]
coupling_n = 20, 40, 80, 160
coupling_reps = 10
epsilon_n = 20, 40, 80, 160
epsilon_reps = 10

[reference]
size = 2000
steps = 1
atoms = 1000
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- config ------------------------------------------------------------------


def test_shipped_configs_parse_and_validate():
    for path in CONFIGS.glob("*.ini"):
        cfg = parse_config(path.read_text())
        cfg.validate()


def test_config_round_trip():
    cfg = parse_config((CONFIGS / "toy.ini").read_text())
    again = parse_config(cfg.to_ini())
    assert again == cfg
    assert again.to_ini() == cfg.to_ini()


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**63 - 1),
    K=st.integers(10, 400),
    theta=st.floats(0.01, 1.0),
    rho=st.floats(0.0, 50.0),
    ladder=st.lists(st.integers(1, 10_000), min_size=3, max_size=8, unique=True).map(sorted),
)
def test_config_round_trip_fuzz(seed, K, theta, rho, ladder):
    cfg = ExperimentConfig(overrides={"rho": rho})
    cfg.seeds.seed = seed
    cfg.grid.K = K
    cfg.solver.theta = theta
    cfg.ladder.coupling_n = tuple(ladder)
    again = parse_config(cfg.to_ini())
    assert again == cfg
    assert again.hash() == cfg.hash()


def test_unknown_entries_rejected():
    with pytest.raises(ConfigError, match="section"):
        parse_config("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError, match="solver.mm"):
        parse_config("[solver]\nmm = 3\n")
    with pytest.raises(ConfigError, match="unknown model"):
        parse_config("[model]\nname = nope\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("[grid]\nK = ten\n")


def test_validation_lists_every_problem():
    cfg = parse_config("[solver]\ntheta = 0\nm = 10\n[ladder]\ncoupling_n = 5, 4, 3\n")
    with pytest.raises(ConfigError) as info:
        cfg.validate()
    msg = str(info.value)
    assert "theta" in msg and "solver.m" in msg and "coupling_n" in msg


def test_jump_resolution_enforced():
    cfg = parse_config("[grid]\nK = 5\n")  # lambda_max * T / K = 0.3
    with pytest.raises(ConfigError, match="lambda_max"):
        cfg.validate()


def test_hash_ignores_output_dir():
    a = ExperimentConfig()
    assert a.hash() == a.with_output("elsewhere").hash()
    assert a.hash() != a.with_seed(1).hash()
    assert a.solver_hash() != a.with_seed(1).solver_hash()


# -- subcommands -------------------------------------------------------------


def test_list_models(capsys):
    assert main(["list-models"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("frozen", "ou-nojump", "lq-riccati", "toy-interbank", "decoupled"):
        assert name in out


def test_rate_fit(tmp_path, capsys):
    csv = tmp_path / "r.csv"
    csv.write_text("n,value\n" + "".join(f"{n},{3.0 / n!r}\n" for n in (10, 20, 40, 80)))
    assert main(["rate-fit", str(csv), "--out", str(tmp_path / "o")]) == EXIT_OK
    fit = json.loads((tmp_path / "o" / "rate_fit.json").read_text())
    assert abs(fit["slope"] + 1.0) < 1e-10
    capsys.readouterr()
    csv.write_text("n,value\n10,1\n20,0\n40,0.5\n")
    assert main(["rate-fit", str(csv)]) == EXIT_CONFIG


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", str(CONFIGS / "toy.ini")]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["problems"] == []
    bad = _write(tmp_path, "[solver]\ntheta = 2\n")
    assert main(["validate", "--config", bad]) == EXIT_CONFIG
    assert main(["validate", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_bad_flags(tmp_path):
    cfg = _write(tmp_path, SMALL.format(model="frozen", tol=0.01))
    assert main(["solve", "--config", cfg, "--threads", "0"]) == EXIT_CONFIG
    assert main(["solve", "--config", cfg, "--seed", "-1"]) == EXIT_CONFIG


def test_solve_decoupled_converges(tmp_path):
    out = tmp_path / "dec"
    assert main(["solve", "--config", str(CONFIGS / "decoupled.ini"), "--out", str(out)]) == EXIT_OK
    fp = json.loads((out / "solver" / "fixed_point.json").read_text())
    assert fp["report"]["converged"] and fp["report"]["iterations"] == 1
    for name in ("policy.csv", "flow.npy", "flow_times.csv"):
        assert (out / "solver" / name).exists()
    assert (out / "manifest_solve.json").exists() and (out / "timings_solve.json").exists()


def test_solve_tol_zero_not_converged(tmp_path):
    cfg = _write(tmp_path, SMALL.format(model="toy-interbank", tol=0.0))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_NOT_CONVERGED
    fp = json.loads((tmp_path / "o" / "solver" / "fixed_point.json").read_text())
    assert len(fp["report"]["gaps"]) == 3


def test_certify_needs_matching_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.format(model="frozen", tol=0.01))
    out = str(tmp_path / "o")
    assert main(["certify", "--config", cfg, "--out", out]) == EXIT_CONFIG
    assert main(["solve", "--config", cfg, "--out", out]) == EXIT_OK
    capsys.readouterr()
    assert main(["certify", "--config", cfg, "--out", out, "--seed", "7"]) == EXIT_CONFIG
    assert "different" in capsys.readouterr().err


def test_frozen_pipeline_passes_and_is_reproducible(tmp_path):
    cfg = _write(tmp_path, SMALL.format(model="frozen", tol=0.01))
    outputs = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        assert main(["solve", "--config", cfg, "--out", str(out), "--threads", threads]) == EXIT_OK
        assert main(["certify", "--config", cfg, "--out", str(out), "--threads", threads]) == EXIT_OK
        outputs.append(out)
    names = ["certification.json", "certification.csv", "certification_plot.csv", "manifest_certify.json",
             "solver/policy.csv", "solver/flow.npy", "solver/fixed_point.json"]
    for name in names:
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes(), name
    doc = json.loads((outputs[0] / "certification.json").read_text())
    assert doc["passed"] and doc["schema"].startswith("mfnash.certification/")
