"""Similarity interpolation between particles.

Between two neighbouring particles the solution is reconstructed so that
f'(U) is linear in x. Such a profile is itself an exact solution of the
conservation law (a rarefaction or compression wave), which is what makes
areas, cell averages and initial-condition sampling exact for this class.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .flux import FluxFunction

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)

# spans below this use quadrature for the nonlinear average (no cancellation)
_AVERAGE_SPLIT = 0.05
_X_SLACK = 1e-12


class SamplingWarning(UserWarning):
    """Initial-condition sampling stopped before reaching its tolerance."""


@dataclass(frozen=True)
class Segment:
    """The interval between two particles, carrying the inner states."""

    x_left: float
    x_right: float
    u_left: float
    u_right: float
    flux: FluxFunction

    def __post_init__(self):
        if self.x_right < self.x_left:
            raise DomainError(f"segment has x_right={self.x_right} < x_left={self.x_left}")

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    @property
    def empty(self) -> bool:
        return self.x_right == self.x_left

    def _check_x(self, x):
        slack = _X_SLACK * max(1.0, abs(self.x_left), abs(self.x_right))
        if np.any(x < self.x_left - slack) or np.any(x > self.x_right + slack):
            raise DomainError(f"x outside segment [{self.x_left}, {self.x_right}]")

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if self.empty:
            raise DomainError("cannot evaluate an empty segment")
        self._check_x(x)
        if self.u_left == self.u_right:
            out = np.full(x.shape, float(self.u_left))
        else:
            out = _similarity(self.flux, self.x_left, self.x_right, self.u_left, self.u_right, x)
        return out if out.ndim else float(out)

    def inverse(self, u):
        """Position at which the interpolant takes the value ``u``."""
        u = np.asarray(u, dtype=float)
        if self.u_left == self.u_right:
            raise DomainError("inverse of a constant segment is not defined")
        lo, hi = sorted((self.u_left, self.u_right))
        if np.any(u < lo) or np.any(u > hi):
            raise DomainError(f"u outside [{lo}, {hi}]")
        fl = self.flux.deriv(self.u_left)
        fr = self.flux.deriv(self.u_right)
        theta = (self.flux.deriv(u) - fl) / (fr - fl)
        out = self.x_left + self.width * theta
        return out if np.ndim(out) else float(out)

    def area(self) -> float:
        return self.width * float(segment_average(self.flux, self.u_left, self.u_right))


def _similarity(flux, xl, xr, ul, ur, x):
    # vectorized over any of the arguments; assumes xr > xl and ul != ur
    fl = flux.deriv(ul)
    fr = flux.deriv(ur)
    theta = np.clip((x - xl) / (xr - xl), 0.0, 1.0)
    w = fl + theta * (fr - fl)
    return flux.inv_deriv(w)


def segment_average(flux: FluxFunction, v, w):
    """The nonlinear average [f'(u) u - f(u)]_v^w / [f'(u)]_v^w.

    Equivalently the f''-weighted mean of u over [v, w], which is how short
    spans are evaluated to avoid cancellation. Returns ``v`` where v == w.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    v, w = np.broadcast_arrays(v, w)
    d = w - v
    wide = np.abs(d) > _AVERAGE_SPLIT

    out = np.empty(v.shape)
    if np.any(wide):
        vw, ww = v[wide], w[wide]
        g = lambda u: flux.deriv(u) * u - flux.value(u)
        out[wide] = (g(ww) - g(vw)) / (flux.deriv(ww) - flux.deriv(vw))
    narrow = ~wide
    if np.any(narrow):
        vn, wn = v[narrow], w[narrow]
        mid = 0.5 * (vn + wn)
        half = 0.5 * (wn - vn)
        u = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        weight = _GL_WEIGHTS[None, :] * flux.deriv2(u)
        out[narrow] = np.sum(weight * u, axis=1) / np.sum(weight, axis=1)
    return out if out.ndim else float(out)


def _field_arrays(field):
    return (np.asarray(field.x, dtype=float), np.asarray(field.um, dtype=float),
            np.asarray(field.up, dtype=float), field.flux)


def evaluate(field, x):
    """Value of the interpolant at ``x``, with constant far-field extension.

    At a particle position the right state is returned.
    """
    xp, um, up, flux = _field_arrays(field)
    x = np.asarray(x, dtype=float)
    k = np.searchsorted(xp, x, side="right") - 1
    out = np.empty(x.shape)
    left = k < 0
    right = k >= len(xp) - 1
    mid = ~(left | right)
    out[left] = um[0]
    out[right] = up[-1]
    if np.any(mid):
        km = k[mid]
        ul, ur = up[km], um[km + 1]
        vals = _similarity(flux, xp[km], xp[km + 1], ul, ur, x[mid])
        out[mid] = np.where(ul == ur, ul, vals)
    return out if out.ndim else float(out)


def cumulative_area(field, xs):
    """Integral of the interpolant from the first particle to each ``xs``."""
    xp, um, up, flux = _field_arrays(field)
    xs = np.asarray(xs, dtype=float)
    n = len(xp)
    prefix = np.zeros(n)
    if n > 1:
        prefix[1:] = np.cumsum(np.diff(xp) * segment_average(flux, up[:-1], um[1:]))

    k = np.searchsorted(xp, xs, side="right") - 1
    out = np.empty(xs.shape)
    left = k < 0
    right = k >= n - 1
    mid = ~(left | right)
    out[left] = (xs[left] - xp[0]) * um[0]
    out[right] = prefix[-1] + (xs[right] - xp[-1]) * up[-1]
    if np.any(mid):
        km = k[mid]
        ul, ur = up[km], um[km + 1]
        u_at = np.where(ul == ur, ul, _similarity(flux, xp[km], xp[km + 1], ul, ur, xs[mid]))
        out[mid] = prefix[km] + (xs[mid] - xp[km]) * segment_average(flux, ul, u_at)
    return out


def total_area(field, window: tuple[float, float]) -> float:
    a, b = window
    lo, hi = cumulative_area(field, np.array([a, b], dtype=float))
    return float(hi - lo)


def cell_edges(x_min: float, x_max: float, n_cells: int) -> np.ndarray:
    return np.linspace(x_min, x_max, n_cells + 1)


def cell_averages(field, x_min: float, x_max: float, n_cells: int) -> np.ndarray:
    edges = cell_edges(x_min, x_max, n_cells)
    dx = (x_max - x_min) / n_cells
    return np.diff(cumulative_area(field, edges)) / dx


def l1_error(a, b, dx: float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(dx * np.sum(np.abs(a - b)))


@dataclass
class SampleResult:
    field: object
    converged: bool
    error_estimate: float


def sample_initial_condition(
    u0: Callable,
    flux: FluxFunction,
    domain: tuple[float, float],
    *,
    discontinuities: Sequence[float] = (),
    spacing: float | None = None,
    max_particles: int = 2000,
    tol: float | None = None,
) -> SampleResult:
    """Place particles on ``u0`` and refine until the interpolant matches it.

    Particles sit exactly on u0. Declared discontinuities become shock
    particles carrying the one-sided limits. Starting from a uniform layout
    (``spacing``, or two intervals per smooth piece), intervals are bisected
    largest-error-first while the mismatch between u0 and the interpolant at
    the interval midpoint exceeds ``tol`` and the particle budget lasts.
    """
    from .particles import ParticleField, normalize

    a, b = map(float, domain)
    cuts = sorted(float(d) for d in discontinuities)
    if any(not a < d < b for d in cuts):
        raise DomainError(f"discontinuities must lie inside the open domain ({a}, {b})")
    f = lambda x: float(u0(x))
    bounds = [a, *cuts, b]

    # one-sided limits at the piece ends
    pieces = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        m = 2 if spacing is None else max(1, int(np.ceil((hi - lo) / spacing - 1e-9)))
        xs = np.linspace(lo, hi, m + 1)
        us = [f(x) for x in xs]
        us[0] = f(np.nextafter(lo, np.inf)) if lo != a else f(lo)
        us[-1] = f(np.nextafter(hi, -np.inf)) if hi != b else f(hi)
        pieces.append((list(xs), us))

    # each cut ends one piece and starts the next but becomes a single shock particle
    n_particles = sum(len(xs) for xs, _ in pieces) - len(cuts)

    def interval_error(xl, xr, ul, ur):
        xm = 0.5 * (xl + xr)
        approx = ul if ul == ur else float(_similarity(flux, xl, xr, ul, ur, np.array(xm)))
        return abs(f(xm) - approx)

    # heap over (negative error, piece index, left x, right x, ul, ur)
    nodes = [dict(zip(xs, us)) for xs, us in pieces]
    heap = []
    for p, (xs, us) in enumerate(pieces):
        for j in range(len(xs) - 1):
            err = interval_error(xs[j], xs[j + 1], us[j], us[j + 1])
            heapq.heappush(heap, (-err, p, xs[j], xs[j + 1], us[j], us[j + 1]))

    if tol is not None:
        while heap and -heap[0][0] > tol and n_particles < max_particles:
            _, p, xl, xr, ul, ur = heapq.heappop(heap)
            xm = 0.5 * (xl + xr)
            um_ = f(xm)
            nodes[p][xm] = um_
            n_particles += 1
            heapq.heappush(heap, (-interval_error(xl, xm, ul, um_), p, xl, xm, ul, um_))
            heapq.heappush(heap, (-interval_error(xm, xr, um_, ur), p, xm, xr, um_, ur))

    estimate = -heap[0][0] if heap else 0.0
    converged = tol is None or estimate <= tol
    if not converged:
        warnings.warn(
            f"sampling hit max_particles={max_particles} with midpoint error {estimate:.3e} > tol={tol:.3e}",
            SamplingWarning,
            stacklevel=2,
        )

    particles = []
    for p, piece in enumerate(nodes):
        xs = sorted(piece)
        for j, x in enumerate(xs):
            u = piece[x]
            if j == 0 and p > 0:
                continue  # the shock particle at this cut was added by the previous piece
            if j == len(xs) - 1 and p < len(nodes) - 1:
                right_piece = nodes[p + 1]
                particles.append((x, u, right_piece[min(right_piece)]))
            else:
                particles.append((x, u, u))

    flux.check_range([q[1] for q in particles], [q[2] for q in particles])
    field = normalize(ParticleField.from_particles(particles, flux))
    return SampleResult(field=field, converged=converged, error_estimate=float(estimate))
