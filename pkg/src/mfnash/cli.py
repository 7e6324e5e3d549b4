"""Command-line runner.

Subcommands: ``solve``, ``certify``, ``rate-fit``, ``validate``,
``list-models``. Exit codes: 0 pass, 2 solver did not converge,
3 certification failed, 4 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, cert_config, load_config
from .measure import fit_rate, read_rate_csv
from .models import MODELS, get_model
from .sde import build_time_grid, validate_coefficients

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CERT_FAIL, EXIT_CONFIG = 0, 2, 3, 4
SOLVER_SCHEMA = "mfnash.solver/1"
MANIFEST_SCHEMA = "mfnash.manifest/1"

log = logging.getLogger("mfnash")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    solver_hash: str
    seed: int
    stages: dict = field(default_factory=dict)  # stage -> wall-clock seconds
    files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        # wall-clock times live in timings_<command>.json so that this file is
        # reproducible byte for byte
        return {
            "schema": MANIFEST_SCHEMA,
            "command": self.command,
            "version": __version__,
            "config_hash": self.config_hash,
            "solver_hash": self.solver_hash,
            "seed_record": {"seed": self.seed, "rng": "Philox, SeedSequence(seed, spawn_key=(stage, replication))"},
            "files": sorted(self.files),
        }

    def write(self, out: Path) -> None:
        (out / f"manifest_{self.command}.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        timings = {k: round(v, 3) for k, v in self.stages.items()}
        (out / f"timings_{self.command}.json").write_text(json.dumps(timings, indent=2) + "\n")


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, *exc):
        self.manifest.stages[self.name] = time.perf_counter() - self.t0
        return False


def _write(out: Path, name: str, text: str, manifest: RunManifest) -> None:
    (out / name).write_text(text)
    manifest.files.append(name)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def run_solve(cfg: ExperimentConfig, threads: int = 1) -> int:
    from .mfg import build_space_grid, picard_iterate, save_artifacts, zero_control_flow

    spec = cfg.validate()
    g, s = cfg.grid, cfg.solver
    grid = build_time_grid(g.T, g.K)
    out = Path(cfg.output.dir)
    sol = out / "solver"
    sol.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("solve", cfg.hash(), cfg.solver_hash(), cfg.seeds.seed)
    try:
        space = build_space_grid(spec, grid, g.space_nodes)
        from .mfg import check_cfl

        check_cfl(spec, grid, space)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with _Stage(manifest, "init"):
        init = zero_control_flow(spec, grid, s.m, cfg.seeds.seed)
    with _Stage(manifest, "picard"):
        policy, flow, report = picard_iterate(
            spec,
            space,
            init,
            theta=s.theta,
            tol=s.tol,
            max_iter=s.max_iter,
            m=s.m,
            seed=cfg.seeds.seed,
            action_nodes=g.action_nodes,
            lipschitz_cap=s.lipschitz_cap or None,
            residual_factor=s.residual_factor,
        )
    save_artifacts(sol, policy, flow)
    manifest.files += ["solver/policy.csv", "solver/flow.npy", "solver/flow_times.csv"]
    doc = {
        "schema": SOLVER_SCHEMA,
        "model": spec.name,
        "solver_hash": cfg.solver_hash(),
        "space": {"x0": space.x0, "dx": space.dx, "nodes": space.J},
        "actions": [spec.actions.lo, spec.actions.hi],
        "report": report.to_dict(),
        "residual_within_2tol": bool(report.residual <= 2 * s.tol),
    }
    _write(out, "solver/fixed_point.json", json.dumps(doc, indent=2, sort_keys=True) + "\n", manifest)
    _write(out, "config.ini", cfg.to_ini(), manifest)
    manifest.write(out)
    log.info("picard: %d iterations, converged=%s, residual=%.4g", report.iterations, report.converged, report.residual)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def run_certify(cfg: ExperimentConfig, threads: int = 1, artifacts: Path | None = None) -> int:
    from .cert import certify, corrupt_policy
    from .mfg import load_artifacts

    spec = cfg.validate()
    out = Path(cfg.output.dir)
    sol = Path(artifacts) if artifacts else out / "solver"
    meta_path = sol / "fixed_point.json"
    if not meta_path.exists():
        raise ConfigError(f"no solver artifacts in {sol}; run `mfnash solve` with the same config first")
    meta = json.loads(meta_path.read_text())
    if meta.get("solver_hash") != cfg.solver_hash():
        raise ConfigError(
            f"solver artifacts in {sol} were produced by a different model/grid/solver/seed configuration "
            f"(artifact hash {str(meta.get('solver_hash'))[:12]}, config hash {cfg.solver_hash()[:12]}); "
            "re-run `mfnash solve` or point --config at the matching file"
        )
    variant = meta["report"].get("policy_variant", "raw")
    policy, flow = load_artifacts(sol, spec.actions.lo, spec.actions.hi, variant)
    if cfg.control.corrupt_amplitude > 0:
        policy = corrupt_policy(policy, cfg.control.corrupt_amplitude, cfg.control.corrupt_wavelength)
    manifest = RunManifest("certify", cfg.hash(), cfg.solver_hash(), cfg.seeds.seed)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage(manifest, "certify"):
        report = certify(spec, policy, flow, cert_config(cfg, threads), policy.space, log=log.info)
    doc = report.to_dict()
    doc["config_hash"] = cfg.hash()
    doc["solver_hash"] = cfg.solver_hash()
    doc["fixed_point"] = meta["report"]
    _write(out, "certification.json", json.dumps(doc, indent=2, sort_keys=True) + "\n", manifest)
    _write(out, "certification.csv", report.to_csv(), manifest)
    _write(out, "certification_plot.csv", report.to_plot_csv(), manifest)
    manifest.write(out)
    for name, chk in report.checks.items():
        log.info("%-30s %s", name, "pass" if chk["passed"] else "FAIL")
    return EXIT_OK if report.passed else EXIT_CERT_FAIL


# ---------------------------------------------------------------------------
# rate-fit, validate, list-models
# ---------------------------------------------------------------------------


def run_rate_fit(path: Path, out: Path | None, guard: bool) -> int:
    try:
        n, y = read_rate_csv(Path(path).read_text())
        fit = fit_rate(n, y, guard=guard)
    except (OSError, ValueError) as exc:
        print(f"rate-fit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(fit.to_dict(), indent=2, sort_keys=True) + "\n"
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "rate_fit.json").write_text(text)
    print(text, end="")
    return EXIT_OK


def run_validate(cfg: ExperimentConfig) -> int:
    from .mfg import build_space_grid, check_cfl

    spec = cfg.validate()
    grid = build_time_grid(cfg.grid.T, cfg.grid.K)
    problems = []
    try:
        space = build_space_grid(spec, grid, cfg.grid.space_nodes)
        cfl = check_cfl(spec, grid, space)
    except ValueError as exc:
        problems.append(str(exc))
        cfl = None
    rep = validate_coefficients(spec)
    problems += rep.violations
    doc = {"model": spec.name, "q": spec.q, "cfl": cfl, "coefficients": rep.to_dict(), "problems": problems}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK if not problems else EXIT_CONFIG


def run_list_models() -> int:
    for name in sorted(MODELS):
        spec = get_model(name)
        print(f"{name:15s} q={spec.q:g}  {spec.description}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfnash", description="epsilon-Nash certification for mean-field games with jumps")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment config (INI)")
        sp.add_argument("--seed", type=int, help="override [seeds] seed")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("solve", help="solve the MFG and write policy + flow"))
    c = sub.add_parser("certify", help="certify solver output over the n-ladder")
    common(c)
    c.add_argument("--artifacts", help="solver artifact directory (default <out>/solver)")
    r = sub.add_parser("rate-fit", help="log-log slope of an (n, value) CSV")
    r.add_argument("csv")
    r.add_argument("--guard", action="store_true", help="drop a pre-asymptotic first rung")
    r.add_argument("--out")
    common(sub.add_parser("validate", help="check config and model coefficients"))
    sub.add_parser("list-models", help="list built-in models")
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = cfg.with_output(args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "list-models":
            return run_list_models()
        if args.command == "rate-fit":
            return run_rate_fit(args.csv, args.out, args.guard)
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = _load(args)
        if args.command == "solve":
            return run_solve(cfg, args.threads)
        if args.command == "certify":
            return run_certify(cfg, args.threads, args.artifacts)
        if args.command == "validate":
            return run_validate(cfg)
    except ConfigError as exc:
        print(f"mfnash {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG  # unreachable with required subcommands


if __name__ == "__main__":
    sys.exit(main())
