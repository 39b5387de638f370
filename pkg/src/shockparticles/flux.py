"""Flux functions f(u) for scalar conservation laws u_t + f(u)_x = 0.

Only fluxes with a strictly signed second derivative on their value range
are supported; the similarity interpolant relies on f' being invertible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError

#: Below this separation |u - v| the shock speed uses a Taylor expansion.
SHOCK_SPEED_EPS = 1e-8

#: Tolerance of the bisection fallback for the inverse derivative.
INV_DERIV_TOL = 1e-14

# slack for values that drifted out of range by rounding only
_RANGE_SLACK = 1e-12


@dataclass(frozen=True)
class FluxFunction:
    """A convex or concave flux with the derivatives the particle method needs.

    ``inv_deriv`` maps a characteristic speed back to a state. When it is
    omitted, a vectorized bisection on ``range`` is used instead.
    ``polynomial`` marks fluxes whose second derivative is a polynomial, so
    that integrals of polynomial weights against ``deriv2`` can be done
    exactly by Gauss-Legendre quadrature.
    """

    value: Callable
    deriv: Callable
    deriv2: Callable
    range: tuple[float, float]
    inv_deriv: Callable | None = None
    convexity: str | None = None
    name: str = "custom"
    polynomial: bool = False

    def __post_init__(self):
        lo, hi = (float(r) for r in self.range)
        if not lo < hi:
            raise ConfigError(f"flux range must be an interval with lo < hi, got {self.range}")
        object.__setattr__(self, "range", (lo, hi))

        probe = np.linspace(lo, hi, 17)
        curv = np.asarray(self.deriv2(probe), dtype=float)
        interior = curv[1:-1]
        if np.all(interior > 0):
            detected = "convex"
        elif np.all(interior < 0):
            detected = "concave"
        else:
            raise ConfigError(f"flux {self.name!r} has no strict sign of f'' on {self.range}")
        if self.convexity is None:
            object.__setattr__(self, "convexity", detected)
        elif self.convexity != detected:
            raise ConfigError(f"flux {self.name!r} declared {self.convexity} but f'' says {detected}")

        if self.inv_deriv is None:
            object.__setattr__(self, "inv_deriv", self._bisect_inv_deriv)

    @property
    def sign(self) -> float:
        return 1.0 if self.convexity == "convex" else -1.0

    def check_range(self, *values) -> None:
        lo, hi = self.range
        slack = _RANGE_SLACK * max(1.0, abs(lo), abs(hi))
        for v in values:
            arr = np.asarray(v, dtype=float)
            if arr.size and (np.any(~np.isfinite(arr)) or arr.min() < lo - slack or arr.max() > hi + slack):
                raise DomainError(
                    f"value(s) outside range [{lo}, {hi}] of flux {self.name!r}: "
                    f"min={arr.min()}, max={arr.max()}"
                )

    def _bisect_inv_deriv(self, w):
        w = np.asarray(w, dtype=float)
        lo, hi = self.range
        a = np.full(w.shape, lo)
        b = np.full(w.shape, hi)
        increasing = self.convexity == "convex"
        # f' is monotone, so plain bisection converges on the bracketing range
        while np.max(b - a, initial=0.0) > INV_DERIV_TOL:
            m = 0.5 * (a + b)
            below = (np.asarray(self.deriv(m)) < w) == increasing
            a = np.where(below, m, a)
            b = np.where(below, b, m)
        out = 0.5 * (a + b)
        return out if out.ndim else float(out)

    def shock_speed(self, u, v):
        """Rankine-Hugoniot speed, the difference quotient (f(u)-f(v))/(u-v).

        For |u - v| <= SHOCK_SPEED_EPS the quotient is replaced by
        f'(a) + (b - a) f''(a) / 2 with a = min(u, v), b = max(u, v), which
        keeps the function exactly symmetric in its arguments.
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        d = u - v
        close = np.abs(d) <= SHOCK_SPEED_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            quotient = (self.value(u) - self.value(v)) / np.where(close, 1.0, d)
        a = np.minimum(u, v)
        taylor = self.deriv(a) + 0.5 * np.abs(d) * self.deriv2(a)
        out = np.where(close, taylor, quotient)
        return out if out.ndim else float(out)


def shock_speed(flux: FluxFunction, u, v):
    """Range-checked shock speed between states ``u`` and ``v``."""
    flux.check_range(u, v)
    return flux.shock_speed(u, v)


def _burgers() -> FluxFunction:
    return FluxFunction(
        value=lambda u: 0.5 * np.asarray(u) ** 2,
        deriv=lambda u: np.asarray(u, dtype=float) * 1.0,
        deriv2=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        inv_deriv=lambda w: np.asarray(w, dtype=float) * 1.0,
        range=(0.0, 1.0),
        name="burgers",
        polynomial=True,
    )


def _quartic() -> FluxFunction:
    # f''(0) = 0, so the range stops short of zero to keep strict convexity
    return FluxFunction(
        value=lambda u: 0.25 * np.asarray(u) ** 4,
        deriv=lambda u: np.asarray(u, dtype=float) ** 3,
        deriv2=lambda u: 3.0 * np.asarray(u, dtype=float) ** 2,
        inv_deriv=lambda w: np.cbrt(np.asarray(w, dtype=float)),
        range=(0.05, 1.0),
        name="quartic",
        polynomial=True,
    )


_BUILTIN = {"burgers": _burgers, "quartic": _quartic}


def builtin_flux(name: str) -> FluxFunction:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise ConfigError(f"unknown flux {name!r}; choose one of {sorted(_BUILTIN)}") from None
