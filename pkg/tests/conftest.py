import sys

import numpy as np
import pytest

from mfnash.sde import ActionSpace, ModelSpec


def _zero(*args):
    return np.zeros(np.broadcast_shapes(*[np.shape(a) for a in args]))


def make_spec(**kw):
    """Model with every coefficient zero unless overridden."""
    base = dict(
        name="test",
        b=lambda t, x, atoms: _zero(x),
        sigma=lambda t, x: _zero(x),
        beta=lambda atoms, a: _zero(a),
        lam=lambda t: _zero(t),
        f=lambda t, x, atoms, a: _zero(x, a),
        g=lambda x, atoms: _zero(x),
        L=1.0,
        M=1.0,
        actions=ActionSpace(-1.0, 1.0),
        init_sampler=lambda rng, size: np.zeros(size),
        q=6.0,
        lam_max=0.0,
    )
    base.update(kw)
    return ModelSpec(**base)


@pytest.fixture
def spec_factory():
    return make_spec


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
