"""Shared fixtures: well-conditioned random parameter draws for every builder."""

import numpy as np

from pburg import expr as ex
from pburg.transforms import (C2Params, CUsualParams, GBEParams, Group, P2LinearParams, P2Params, P3Params,
                              UsualPotParams, build)

BOX = ex.SampleBox.of(t=(0.1, 1.0), x=(0.5, 1.5))

# a representative arbitrary element for each group
SOURCE_F = {
    Group.USUAL_POT: "x^3 + t + 1",
    Group.P3: "-1",
    Group.P2: "x^2 + t*x + 2",
    Group.P2_LINEAR: "t*x + 2",
    Group.C_USUAL: "x^3 + t + 1",
    Group.C2: "x^2 + t*x + 2",
    Group.GBE: "x^2 + t + 1",
}

HEAT_KINDS = [None, {"kind": "constant", "value": 0.5}, {"kind": "linear", "scale": 0.3},
              {"kind": "quadratic", "scale": 0.2}, {"kind": "exponential", "a": 0.5, "scale": 0.1}]


def _sign(rng):
    return 1.0 if rng.random() < 0.5 else -1.0


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _mobius(rng):
    alpha = _u(rng, 0.5, 2.0) * _sign(rng)
    beta = _u(rng, -0.5, 0.5)
    gamma = _u(rng, -0.5, 0.5)
    delta = _u(rng, 1.0, 2.0)
    return alpha, beta, gamma, delta


def random_params(group, rng):
    group = Group.of(group)
    kappa = _u(rng, 0.5, 2.0) * _sign(rng)
    if group in (Group.USUAL_POT, Group.C_USUAL):
        common = dict(alpha=_u(rng, 0.5, 2.0) * _sign(rng), beta=_u(rng, -0.5, 0.5), kappa=kappa,
                      mu1=_u(rng, -1, 1), mu0=_u(rng, -1, 1))
        if group is Group.USUAL_POT:
            return UsualPotParams(nu=_u(rng, -1, 1), **common)
        return CUsualParams(**common)
    if group in (Group.P3, Group.P2_LINEAR, Group.GBE):
        a, b, g, d = _mobius(rng)
        if group is Group.GBE:
            return GBEParams(a, b, g, d, kappa, _u(rng, -1, 1), _u(rng, -1, 1))
        if group is Group.P2_LINEAR:
            return P2LinearParams(a, b, g, d, kappa, _u(rng, -1, 1), _u(rng, -1, 1), _u(rng, -1, 1))
        heat = HEAT_KINDS[int(rng.integers(len(HEAT_KINDS)))]
        return P3Params(a, b, g, d, kappa, _u(rng, -1, 1), _u(rng, -1, 1), _u(rng, 0.5, 2.0) * _sign(rng), heat)
    c0 = _u(rng, 0.5, 2.0) * _sign(rng)
    c1 = _u(rng, -0.5, 0.5)
    c2 = _u(rng, 0.5, 1.5)
    rest = [_u(rng, -0.5, 0.5) for _ in range(4 if group is Group.P2 else 3)]
    if group is Group.P2:
        return P2Params(c0, c1, c2, *rest)
    return C2Params(c0, c1, c2, *rest)


def random_transformation(group, rng, f=None):
    group = Group.of(group)
    f = SOURCE_F[group] if f is None else f
    return build(random_params(group, rng), f), f
