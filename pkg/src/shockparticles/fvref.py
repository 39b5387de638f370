"""Finite-volume baseline: Godunov flux, optional minmod MUSCL, split source.

Used as the fixed-grid comparison for the particle method. Cell averages
live on a uniform grid with outflow ghost cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, SolverError
from .flux import FluxFunction
from .interpolant import cell_averages, cell_edges


@dataclass
class FvGrid:
    x_min: float
    x_max: float
    averages: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.averages = np.asarray(self.averages, dtype=float).copy()
        if not self.x_max > self.x_min:
            raise ConfigError("grid window must have x_max > x_min")
        if self.averages.ndim != 1 or len(self.averages) == 0:
            raise ConfigError("grid needs a non-empty 1D array of averages")

    @property
    def n_cells(self) -> int:
        return len(self.averages)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return cell_edges(self.x_min, self.x_max, self.n_cells)

    def mass(self) -> float:
        return float(np.sum(self.averages) * self.dx)

    @classmethod
    def from_function(cls, u0: Callable, x_min: float, x_max: float, n_cells: int, points: int = 8) -> "FvGrid":
        """Cell averages of u0 by Gauss-Legendre quadrature in every cell."""
        nodes, weights = np.polynomial.legendre.leggauss(points)
        edges = cell_edges(x_min, x_max, n_cells)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * np.diff(edges)
        xs = mid[:, None] + half[:, None] * nodes[None, :]
        vals = np.asarray(u0(xs), dtype=float)
        return cls(x_min, x_max, 0.5 * np.sum(weights[None, :] * vals, axis=1))

    @classmethod
    def from_field(cls, field, x_min: float, x_max: float, n_cells: int) -> "FvGrid":
        """Exact cell averages of a particle field's interpolant."""
        return cls(x_min, x_max, cell_averages(field, x_min, x_max, n_cells), float(field.time))


def _sonic_state(flux: FluxFunction) -> float | None:
    lo, hi = flux.range
    dlo, dhi = float(flux.deriv(lo)), float(flux.deriv(hi))
    if dlo * dhi > 0:
        return None
    return float(flux.inv_deriv(0.0))


def godunov_flux(u_left, u_right, flux: FluxFunction):
    """Exact Riemann flux: min of f on [uL, uR] if uL <= uR, else max of f on [uR, uL]."""
    ul = np.asarray(u_left, dtype=float)
    ur = np.asarray(u_right, dtype=float)
    fl, fr = flux.value(ul), flux.value(ur)
    lo, hi = np.minimum(ul, ur), np.maximum(ul, ur)
    rising = ul <= ur
    out = np.where(rising, np.minimum(fl, fr), np.maximum(fl, fr))
    us = _sonic_state(flux)
    if us is not None:
        fs = float(flux.value(us))
        inside = (lo < us) & (us < hi)
        # the interior extremum of f is a minimum for convex and a maximum for concave f
        if flux.convexity == "convex":
            out = np.where(inside & rising, np.minimum(out, fs), out)
        else:
            out = np.where(inside & ~rising, np.maximum(out, fs), out)
    return out if out.ndim else float(out)


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _interface_fluxes(u: np.ndarray, flux: FluxFunction, order: int) -> np.ndarray:
    """Numerical fluxes at all n + 1 cell interfaces, with outflow ghosts."""
    g = np.concatenate([[u[0], u[0]], u, [u[-1], u[-1]]])
    if order == 1:
        return godunov_flux(g[1:-2], g[2:-1], flux)
    slope = _minmod(g[1:-1] - g[:-2], g[2:] - g[1:-1])  # per cell of g[1:-1]
    left = g[1:-2] + 0.5 * slope[:-1]   # right edge of the left cell
    right = g[2:-1] - 0.5 * slope[1:]   # left edge of the right cell
    return godunov_flux(left, right, flux)


def advect_step(u: np.ndarray, flux: FluxFunction, dt: float, dx: float, order: int = 2):
    """One conservative update; returns (new averages, time-integrated boundary fluxes).

    Order 1 is forward Euler, order 2 is minmod MUSCL with the midpoint rule.
    """
    lam = dt / dx
    if order == 1:
        F = _interface_fluxes(u, flux, 1)
        return u - lam * np.diff(F), (dt * F[0], dt * F[-1])
    F0 = _interface_fluxes(u, flux, 2)
    u_half = u - 0.5 * lam * np.diff(F0)
    F = _interface_fluxes(u_half, flux, 2)
    return u - lam * np.diff(F), (dt * F[0], dt * F[-1])


@dataclass
class FvResult:
    grid: FvGrid
    steps: int
    boundary_in: float   # time-integrated flux entering at the left edge
    boundary_out: float  # time-integrated flux leaving at the right edge
    snapshots: dict = None


def fv_solve(grid: FvGrid, flux: FluxFunction, t_end: float, *, order: int = 2, cfl: float = 0.8,
             source=None, snapshots=(), max_steps: int = 10_000_000) -> FvResult:
    """Advance cell averages to ``t_end`` with dt = cfl dx / max|f'|.

    A source with an exact ``flow(u, h)`` is applied by Strang splitting:
    half a step of the source, the advection step, half a step of the source.
    Copies of the grid at the requested ``snapshots`` times are returned too.
    """
    if not 0 < cfl < 1:
        raise ConfigError(f"cfl must lie in (0, 1), got {cfl}")
    if order not in (1, 2):
        raise ConfigError(f"order must be 1 or 2, got {order}")
    u = grid.averages.copy()
    t = float(grid.time)
    dx = grid.dx
    steps = 0
    b_in = b_out = 0.0
    pending = sorted(float(s) for s in snapshots if s > t)
    snaps = {float(s): FvGrid(grid.x_min, grid.x_max, u, t) for s in snapshots if s <= t}
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        speed = float(np.max(np.abs(flux.deriv(u))))
        dt = cfl * dx / speed if speed > 0 else t_end - t
        target = pending[0] if pending else t_end
        dt = min(dt, target - t)
        if source is not None:
            u = source.flow(u, 0.5 * dt)
        u, (fin, fout) = advect_step(u, flux, dt, dx, order)
        b_in += fin
        b_out += fout
        if source is not None:
            u = source.flow(u, 0.5 * dt)
        t = target if abs(t + dt - target) <= 1e-14 * max(1.0, abs(target)) else t + dt
        steps += 1
        if steps > max_steps:
            raise SolverError("step limit exceeded")
        while pending and pending[0] <= t + 1e-14:
            snaps[pending.pop(0)] = FvGrid(grid.x_min, grid.x_max, u, t)
    return FvResult(FvGrid(grid.x_min, grid.x_max, u, t), steps, b_in, b_out, snaps)


def front_position(grid: FvGrid, level: float, *, rising: bool = True) -> float | None:
    """Leftmost x where the linear interpolant of the cell averages crosses ``level``.

    With ``rising`` only upward crossings count, which locates a detonation
    front on the left flank of a hump.
    """
    x = grid.centers
    u = grid.averages
    a, b = u[:-1], u[1:]
    hit = (a < level) & (b >= level) if rising else (a > level) & (b <= level)
    idx = np.flatnonzero(hit)
    if not len(idx):
        return None
    k = idx[0]
    return float(x[k] + (level - a[k]) / (b[k] - a[k]) * (x[k + 1] - x[k]))
