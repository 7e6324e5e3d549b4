"""Experiment configuration: a sectioned key-value text file.

Example::

    [model]
    name = toy-interbank
    rho = 10.0

    [grid]
    T = 1.0
    K = 20
    space_nodes = 113
    action_nodes = 65

    [solver]
    m = 20000
    theta = 1.0
    tol = 0.01
    max_iter = 30

    [ladder]
    coupling_n = 100, 200, 400, 800, 1600, 3200
    coupling_reps = 200
    epsilon_n = 50, 100, 200, 400, 800, 1600
    epsilon_reps = 400

    [seeds]
    seed = 0

Every key other than ``name`` in ``[model]`` is a float override passed to
the model factory. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .models import MODELS, get_model
from .sde import MAX_JUMPS_PER_STEP, ModelSpec, build_time_grid

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 4 on the command line)."""


@dataclass
class GridConfig:
    T: float = 1.0
    K: int = 20
    space_nodes: int = 113
    action_nodes: int = 65


@dataclass
class SolverConfig:
    m: int = 20_000
    theta: float = 1.0
    tol: float = 0.01
    max_iter: int = 30
    lipschitz_cap: float = 0.0  # 0 disables smoothing
    residual_factor: int = 5


@dataclass
class LadderConfig:
    coupling_n: tuple = (100, 200, 400, 800, 1600, 3200)
    coupling_reps: int = 200
    epsilon_n: tuple = (50, 100, 200, 400, 800, 1600)
    epsilon_reps: int = 400


@dataclass
class DictionaryConfig:
    constants: int = 13
    switch_fractions: tuple = (0.25, 0.5, 0.75)
    fine_action_nodes: int = 257
    bootstrap: int = 200


@dataclass
class ReferenceConfig:
    size: int = 1_000_000
    steps: int = 2
    atoms: int = 20_000


@dataclass
class ThresholdConfig:
    prop35_slack: float = 0.2
    prop36_low: float = -1.25
    prop36_high: float = -0.75
    surrogate_slack: float = 0.2
    epsilon_slack: float = 0.25
    k_stderr: float = 3.0


@dataclass
class ControlConfig:
    """Negative control: oscillation added to the policy before certifying."""

    corrupt_amplitude: float = 0.0
    corrupt_wavelength: float = 0.5


@dataclass
class SeedConfig:
    seed: int = 0


@dataclass
class OutputConfig:
    dir: str = "out"


_SECTIONS = {
    "grid": GridConfig,
    "solver": SolverConfig,
    "ladder": LadderConfig,
    "dictionary": DictionaryConfig,
    "reference": ReferenceConfig,
    "thresholds": ThresholdConfig,
    "control": ControlConfig,
    "seeds": SeedConfig,
    "output": OutputConfig,
}

# sections that determine the solver output
_SOLVER_SECTIONS = ("model", "grid", "solver", "seeds")


@dataclass
class ExperimentConfig:
    model: str = "toy-interbank"
    overrides: dict = field(default_factory=dict)
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- construction ------------------------------------------------------

    def spec(self) -> ModelSpec:
        try:
            return get_model(self.model, **self.overrides)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        except TypeError as exc:
            raise ConfigError(f"bad override for model {self.model!r}: {exc}") from None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=SeedConfig(int(seed)))

    def with_output(self, path: str) -> "ExperimentConfig":
        return replace(self, output=OutputConfig(str(path)))

    # -- validation --------------------------------------------------------

    def validate(self) -> ModelSpec:
        """Raise :class:`ConfigError` listing every problem found."""
        problems = []
        spec = None
        try:
            spec = self.spec()
        except (ConfigError, ValueError) as exc:
            problems.append(str(exc))
        g = self.grid
        try:
            grid = build_time_grid(g.T, g.K)
        except ValueError as exc:
            problems.append(str(exc))
            grid = None
        if g.space_nodes < 3:
            problems.append("grid.space_nodes must be at least 3")
        if g.action_nodes < 2:
            problems.append("grid.action_nodes must be at least 2")
        s = self.solver
        if not 0.0 < s.theta <= 1.0:
            problems.append(f"solver.theta must lie in (0, 1], got {s.theta}")
        if s.tol < 0:
            problems.append("solver.tol must be nonnegative")
        if s.max_iter < 1:
            problems.append("solver.max_iter must be at least 1")
        if s.m < 1000:
            problems.append(f"solver.m must be at least 1000, got {s.m}")
        for name in ("coupling_n", "epsilon_n"):
            ns = getattr(self.ladder, name)
            if len(ns) < 3 or any(b <= a for a, b in zip(ns, ns[1:])) or ns[0] < 1:
                problems.append(f"ladder.{name} must be an increasing list of at least three positive sizes")
        if self.ladder.coupling_reps < 2 or self.ladder.epsilon_reps < 2:
            problems.append("ladder reps must be at least 2")
        r = self.reference
        if r.steps > 0 and r.atoms and r.size % r.atoms:
            problems.append("reference.size must be a multiple of reference.atoms")
        if self.thresholds.prop36_low >= self.thresholds.prop36_high:
            problems.append("thresholds.prop36_low must be below thresholds.prop36_high")
        if spec is not None:
            if not (spec.q > 2 and spec.q != 4):
                problems.append(f"model moment order q={spec.q} must satisfy q > 2, q != 4")
            if grid is not None and spec.lam_max * grid.dt > MAX_JUMPS_PER_STEP:
                problems.append(
                    f"lambda_max * T/K = {spec.lam_max * grid.dt:.4g} exceeds {MAX_JUMPS_PER_STEP}; increase grid.K"
                )
        if problems:
            raise ConfigError("; ".join(problems))
        return spec

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = {"model": {"name": self.model, **{k: float(v) for k, v in sorted(self.overrides.items())}}}
        for name in _SECTIONS:
            d[name] = asdict(getattr(self, name))
        return d

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, values in self.to_dict().items():
            cp[section] = {k: _fmt(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self, sections=None) -> str:
        d = self.to_dict()
        d.pop("output")
        if sections is not None:
            d = {k: v for k, v in d.items() if k in sections}
        blob = json.dumps(_plain(d), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def solver_hash(self) -> str:
        return self.hash(_SOLVER_SECTIONS)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def _parse_value(raw: str, default, where: str):
    try:
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v.strip()) if kind is not int else int(v.strip()) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - set(_SECTIONS) - {"model"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig()
    if cp.has_section("model"):
        sec = dict(cp["model"])
        cfg.model = sec.pop("name", cfg.model)
        if cfg.model not in MODELS:
            raise ConfigError(f"unknown model {cfg.model!r}; available: {', '.join(sorted(MODELS))}")
        cfg.overrides = {k: _parse_value(v, 0.0, f"model.{k}") for k, v in sec.items()}
    for name, cls in _SECTIONS.items():
        if not cp.has_section(name):
            continue
        defaults = cls()
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _parse_value(raw, getattr(defaults, key), f"{name}.{key}")
        setattr(cfg, name, replace(defaults, **values))
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def cert_config(cfg: ExperimentConfig, threads: int = 1):
    from .cert import CertConfig

    t = cfg.thresholds
    return CertConfig(
        coupling_ladder=tuple(cfg.ladder.coupling_n),
        coupling_reps=cfg.ladder.coupling_reps,
        epsilon_ladder=tuple(cfg.ladder.epsilon_n),
        epsilon_reps=cfg.ladder.epsilon_reps,
        n_constants=cfg.dictionary.constants,
        switch_fractions=tuple(cfg.dictionary.switch_fractions),
        fine_action_nodes=cfg.dictionary.fine_action_nodes,
        bootstrap=cfg.dictionary.bootstrap,
        reference_size=cfg.reference.size,
        reference_steps=cfg.reference.steps,
        reference_atoms=cfg.reference.atoms,
        seed=cfg.seeds.seed,
        threads=threads,
        prop35_slack=t.prop35_slack,
        prop36_window=(t.prop36_low, t.prop36_high),
        surrogate_slack=t.surrogate_slack,
        epsilon_slack=t.epsilon_slack,
        k_stderr=t.k_stderr,
    )
