"""Built-in model library, addressed by name from the command line.

``toy-interbank`` and ``decoupled`` are invented test models: mean reversion
towards the population mean, a controlled jump size ``beta(mu, a) = a``, a
quadratic activity cost and a penalty on the dispersion of the whole system.
They are not taken from any published calibration.
"""

from __future__ import annotations

from functools import partial

import numpy as np

from .sde import ActionSpace, ModelSpec


def _mean(atoms):
    return np.mean(atoms, axis=-1, keepdims=True)


def _logcosh(u):
    u = np.abs(u)
    return u + np.log1p(np.exp(-2.0 * u)) - np.log(2.0)


def _zeros_like(*args):
    return np.zeros(np.broadcast_shapes(*[np.shape(a) for a in args]))


def _gauss(mean, sd, rng, size):
    return mean + sd * rng.standard_normal(size)


def _dirac(c, rng, size):
    return np.full(size, float(c))


def frozen(c: float = 1.5) -> ModelSpec:
    """No motion at all; the initial law is a point mass at ``c``."""
    return ModelSpec(
        name="frozen",
        b=lambda t, x, atoms: _zeros_like(x),
        sigma=lambda t, x: _zeros_like(x),
        beta=lambda atoms, a: _zeros_like(a),
        lam=lambda t: _zeros_like(t),
        f=lambda t, x, atoms, a: 0.5 * a**2 + 0.0 * x,
        g=lambda x, atoms: 0.5 * x**2 + 0.0 * _mean(atoms),
        L=1.0,
        M=1.0,
        actions=ActionSpace(-1.0, 1.0),
        init_sampler=partial(_dirac, c),
        q=6.0,
        lam_max=0.0,
        description="frozen dynamics, point-mass initial law",
        params={"c": c},
    )


def ou_nojump(theta: float = 1.0, vol: float = 1.0, x0: float = 1.0, sd0: float = 0.5) -> ModelSpec:
    """Ornstein-Uhlenbeck state ``dX = -theta X dt + vol dW``, no jumps."""
    return ModelSpec(
        name="ou-nojump",
        b=lambda t, x, atoms: -theta * x,
        sigma=lambda t, x: vol + 0.0 * x,
        beta=lambda atoms, a: _zeros_like(a),
        lam=lambda t: _zeros_like(t),
        f=lambda t, x, atoms, a: 0.5 * a**2 + 0.5 * x**2,
        g=lambda x, atoms: 0.5 * x**2,
        L=max(theta, 1.0),
        M=10.0,
        actions=ActionSpace(-1.0, 1.0),
        init_sampler=partial(_gauss, x0, sd0),
        q=6.0,
        lam_max=0.0,
        space_box=(-8.0, 8.0),
        description="OU dynamics without jumps (linear drift, unbounded)",
        params={"theta": theta, "vol": vol, "x0": x0, "sd0": sd0},
    )


def lq_riccati(theta: float = -1.0, vol: float = 0.3, sd0: float = 0.5) -> ModelSpec:
    """Linear drift ``theta x``, constant vol, quadratic costs, no jumps.

    With ``beta = 0`` the control has no effect and the value is
    ``0.5 P(t) x^2 + r(t)`` with ``P' = -2 theta P - 1``, ``P(T) = 1`` and
    ``r' = -0.5 vol^2 P``, ``r(T) = 0``.
    """
    return ModelSpec(
        name="lq-riccati",
        b=lambda t, x, atoms: theta * x,
        sigma=lambda t, x: vol + 0.0 * x,
        beta=lambda atoms, a: _zeros_like(a),
        lam=lambda t: _zeros_like(t),
        f=lambda t, x, atoms, a: 0.5 * a**2 + 0.5 * x**2,
        g=lambda x, atoms: 0.5 * x**2,
        L=1.0,
        M=10.0,
        actions=ActionSpace(-1.0, 1.0),
        init_sampler=partial(_gauss, 0.0, sd0),
        q=6.0,
        lam_max=0.0,
        space_box=(-6.0, 6.0),
        description="linear-quadratic check model with a closed-form value",
        params={"theta": theta, "vol": vol, "sd0": sd0},
    )


def _intensity(lam0, T):
    return lambda t: lam0 * (1.0 + 0.5 * np.sin(2.0 * np.pi * np.asarray(t) / T))


def toy_interbank(
    kappa: float = 1.0,
    clip: float = 2.0,
    vol: float = 0.4,
    lam0: float = 1.0,
    cost_a: float = 0.02,
    target: float = 1.0,
    q_run: float = 0.01,
    q_term: float = 0.01,
    rho: float = 10.0,
    x0: float = 0.5,
    sd0: float = 0.5,
    T: float = 1.0,
    a_max: float = 3.0,
) -> ModelSpec:
    """Invented interbank-style model.

    Reserves revert to the population mean at rate ``kappa`` (drift clipped
    at ``clip``); each bank chooses the size ``a`` of its lending jumps,
    which arrive at rate ``lam0 (1 + sin(2 pi t / T) / 2)``. Running cost
    ``cost_a/2 (a - target)^2 + q_run logcosh(x - mean)``, terminal cost
    ``q_term logcosh(x - mean) + rho * dispersion(mu)`` where dispersion is
    the mean logcosh distance of the atoms to their mean. Actions lie in
    ``[-a_max, a_max]``; the optimum sits near ``target`` so that the extreme
    actions move a deviating bank well outside the population.
    """

    def b(t, x, atoms):
        return kappa * np.clip(_mean(atoms) - x, -clip, clip)

    def f(t, x, atoms, a):
        return 0.5 * cost_a * (a - target) ** 2 + q_run * _logcosh(x - _mean(atoms))

    def g(x, atoms):
        m = _mean(atoms)
        disp = np.mean(_logcosh(atoms - m), axis=-1, keepdims=True)
        return q_term * _logcosh(x - m) + rho * disp

    lam_max = 1.5 * lam0
    return ModelSpec(
        name="toy-interbank",
        b=b,
        sigma=lambda t, x: vol + 0.0 * x,
        beta=lambda atoms, a: a + 0.0 * _mean(atoms),
        lam=_intensity(lam0, T),
        f=f,
        g=g,
        L=max(kappa, 2.0 * rho, 1.0),
        M=kappa * clip + vol + a_max + lam_max,
        actions=ActionSpace(-a_max, a_max),
        init_sampler=partial(_gauss, x0, sd0),
        q=6.0,
        lam_max=lam_max,
        space_box=(x0 - 8.0, x0 + 8.0),
        description="invented interbank-style toy model (not from the literature)",
        params=dict(kappa=kappa, clip=clip, vol=vol, lam0=lam0, cost_a=cost_a, target=target,
                    q_run=q_run, q_term=q_term, rho=rho, x0=x0, sd0=sd0, T=T, a_max=a_max),
    )


def decoupled(
    kappa: float = 1.0,
    clip: float = 2.0,
    vol: float = 0.4,
    lam0: float = 1.0,
    cost_a: float = 0.02,
    target: float = 1.0,
    q_run: float = 0.01,
    q_term: float = 0.01,
    anchor: float = 0.5,
    x0: float = 0.5,
    sd0: float = 0.5,
    T: float = 1.0,
) -> ModelSpec:
    """The toy model with the population mean replaced by a fixed anchor and
    no dispersion penalty: no coefficient depends on the measure."""

    def b(t, x, atoms):
        return kappa * np.clip(anchor - x, -clip, clip)

    def f(t, x, atoms, a):
        return 0.5 * cost_a * (a - target) ** 2 + q_run * _logcosh(x - anchor)

    def g(x, atoms):
        return q_term * _logcosh(x - anchor)

    lam_max = 1.5 * lam0
    return ModelSpec(
        name="decoupled",
        b=b,
        sigma=lambda t, x: vol + 0.0 * x,
        beta=lambda atoms, a: a + 0.0,
        lam=_intensity(lam0, T),
        f=f,
        g=g,
        L=max(kappa, 1.0),
        M=kappa * clip + vol + 1.0 + lam_max,
        actions=ActionSpace(-1.0, 1.0),
        init_sampler=partial(_gauss, x0, sd0),
        q=6.0,
        lam_max=lam_max,
        description="measure-independent variant of the toy model",
        params=dict(kappa=kappa, clip=clip, vol=vol, lam0=lam0, cost_a=cost_a, target=target,
                    q_run=q_run, q_term=q_term, anchor=anchor, x0=x0, sd0=sd0, T=T),
    )


MODELS = {
    "frozen": frozen,
    "ou-nojump": ou_nojump,
    "lq-riccati": lq_riccati,
    "toy-interbank": toy_interbank,
    "decoupled": decoupled,
}


def get_model(name: str, **overrides) -> ModelSpec:
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {', '.join(sorted(MODELS))}") from None
    return factory(**overrides)
