"""Independent oracles for Burgers' equation.

Hopf-Lax: W(x, t) = min_y U0(y) + (x - y)^2 / (2t), with U0 the antiderivative of the
initial interpolant, is a potential of the entropy solution, so cell averages are
differences of W.
"""

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import solve_ivp

from shockparticles.flux import builtin_flux
from shockparticles.particles import ParticleField, normalize

burgers = builtin_flux("burgers")


# W(x, t) = min_y U0(y) + (x - y)^2 / (2t), with U0 the antiderivative of the initial interpolant,
# is a potential of the entropy solution, so cell averages are differences of W.

def pieces(f):
    """Initial data as (a, b, u_a, slope, U0(a)) pieces with infinite far fields."""
    x, um, up = f.x, f.um, f.up
    out = [(-np.inf, x[0], um[0], 0.0, None)]
    for k in range(len(x) - 1):
        w = x[k + 1] - x[k]
        m = (um[k + 1] - up[k]) / w if w > 0 else 0.0
        out.append((x[k], x[k + 1], up[k], m, None))
    out.append((x[-1], np.inf, up[-1], 0.0, None))
    acc, res = 0.0, []
    for a, b, ua, m, _ in out:
        if np.isfinite(a):
            res.append((a, b, ua, m, acc))
            if np.isfinite(b):
                acc += ua * (b - a) + 0.5 * m * (b - a) ** 2
        else:
            res.append((a, b, ua, m, -ua * b))  # U0(y) = ua (y - b) on the left tail, anchored U0(x0) = 0
    return res


def potential(f, xs, t):
    best = np.full(len(xs), np.inf)
    for a, b, ua, m, Ua in pieces(f):
        if not np.isfinite(a):
            U = lambda y: ua * y + Ua
            cands = [np.minimum(xs - ua * t, b), np.full(len(xs), b)]
        else:
            U = lambda y, a=a, ua=ua, m=m, Ua=Ua: Ua + ua * (y - a) + 0.5 * m * (y - a) ** 2
            hi = b if np.isfinite(b) else np.inf
            y = a + (xs - a - ua * t) / (1 + m * t)
            cands = [np.clip(y, a, hi), np.full(len(xs), a)]
            if np.isfinite(b):
                cands.append(np.full(len(xs), b))
        for y in cands:
            best = np.minimum(best, U(y) + (xs - y) ** 2 / (2 * t))
    return best


def random_field(rng):
    x = np.sort(rng.uniform(0, 1, 5))
    x = x[0] + np.cumsum(np.r_[0, np.maximum(np.diff(x), 0.05)])
    um = rng.uniform(0, 1, 5)
    up = np.where(rng.uniform(size=5) < 0.5, um, rng.uniform(0, 1, 5))
    return normalize(ParticleField(x, um, up, burgers))


def c_oracle(tau, beta, v, w):
    """Sonic correction coefficient; f'' = 1, so c = int psi / int (s - v), both polynomial."""
    psi = Polynomial([0, 1]) * Polynomial([1, -1]) * Polynomial([-beta, 1]) / tau
    num = psi.integ()(w) - psi.integ()(v)
    return num / (0.5 * (w - v) ** 2)


def gap_oracle(tau, beta, u, g0, t_end):
    """The corrected neighbour ODE on its own: g' = |f'(beta) - f'(u)| - |c| g."""
    c = abs(c_oracle(tau, beta, u, beta))
    sol = solve_ivp(lambda _, g: abs(beta - u) - c * g, (0, t_end), [g0], rtol=1e-12, atol=1e-14)
    return sol.y[0, -1]
