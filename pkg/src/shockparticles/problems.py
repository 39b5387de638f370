"""Benchmark problems and the experiment drivers built on them.

Two setups are provided: the quartic-flux problem whose initial data is a
handful of characteristic particles, used for convergence studies, and the
stiff Burgers balance law with a smooth hump, used for detonation runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .flux import FluxFunction, builtin_flux
from .fvref import FvGrid, fv_solve
from .integrator import EvolveOptions, evolve
from .interpolant import cell_averages, l1_error, sample_initial_condition
from .particles import ParticleField
from .reaction import BistableSource, ReactionOptions, evolve_reaction, sonic_markers

QUARTIC_P0 = [(0.0, 0.1), (0.1, 0.1), (0.2, 0.9), (0.4, 0.9), (0.5, 0.7), (0.6, 0.7), (0.7, 0.1), (1.0, 0.1)]
QUARTIC_SNAPSHOTS = (0.0, 0.3, 0.6, 1.0)

HUMP_AMPLITUDE = 0.9
HUMP_CENTER = 0.5
HUMP_STEEPNESS = 150.0
DETONATION_BETA = 0.8
DETONATION_TAUS = (0.024, 0.008, 0.004)
DETONATION_SNAPSHOTS = (0.1, 0.2, 0.3, 0.4)

#: Errors at or below this are treated as the round-off plateau when fitting orders.
PLATEAU_FLOOR = 1e-12


def quartic_field() -> ParticleField:
    return ParticleField.from_particles(QUARTIC_P0, builtin_flux("quartic"))


def hump(x, amplitude: float = HUMP_AMPLITUDE, center: float = HUMP_CENTER, steepness: float = HUMP_STEEPNESS):
    x = np.asarray(x, dtype=float)
    return amplitude * np.exp(-steepness * (x - center) ** 4)


def hump_front(level: float = DETONATION_BETA, amplitude: float = HUMP_AMPLITUDE, center: float = HUMP_CENTER,
               steepness: float = HUMP_STEEPNESS) -> float:
    """Left-flank position where the hump equals ``level``."""
    return center - (np.log(amplitude / level) / steepness) ** 0.25


def hump_field(spacing: float = 0.02, tol: float | None = None, flux: FluxFunction | None = None) -> ParticleField:
    flux = flux or builtin_flux("burgers")
    return sample_initial_condition(hump, flux, (0.0, 1.0), spacing=spacing, tol=tol).field


def fit_order(resolutions, errors, floor: float = PLATEAU_FLOOR) -> float:
    """Least-squares slope of log(error) against log(resolution) before the plateau.

    Resolutions are given from coarse to fine. Points at or below ``floor``
    belong to the round-off plateau, and so does everything from the first
    refinement that fails to reduce the error; both are dropped. At least two
    points must remain.
    """
    r = np.asarray(resolutions, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = e > floor
    stalled = np.flatnonzero(e[1:] >= e[:-1])
    if len(stalled):
        keep[stalled[0] + 1:] = False
    if keep.sum() < 2:
        raise ValueError("fewer than two errors above the plateau floor")
    slope, _ = np.polyfit(np.log(r[keep]), np.log(e[keep]), 1)
    return float(slope)


def local_orders(resolutions, errors) -> list[float | None]:
    out: list[float | None] = [None]
    for k in range(1, len(errors)):
        e0, e1 = errors[k - 1], errors[k]
        if e0 > 0 and e1 > 0:
            out.append(float(np.log(e0 / e1) / np.log(resolutions[k - 1] / resolutions[k])))
        else:
            out.append(None)
    return out


@dataclass
class SweepRow:
    resolution: float
    error: float
    local_order: float | None
    seconds: float


def particle_solution(field: ParticleField, order: int, dt: float, t_end: float, **kw) -> ParticleField:
    return evolve(field, EvolveOptions(order=order, dt=dt, t_end=t_end, **kw)).field


def particle_sweep(field: ParticleField, dts, *, order: int, t_end: float, reference: np.ndarray,
                   window=(0.0, 1.0), n_cells: int = 1000, **kw) -> list[SweepRow]:
    """L1 errors of particle solutions at each dt against reference cell averages."""
    dx = (window[1] - window[0]) / n_cells
    rows, errs = [], []
    for dt in dts:
        t0 = time.perf_counter()
        sol = particle_solution(field, order, dt, t_end, **kw)
        err = l1_error(cell_averages(sol, window[0], window[1], n_cells), reference, dx)
        errs.append(err)
        rows.append(SweepRow(float(dt), err, None, time.perf_counter() - t0))
    for row, p in zip(rows, local_orders([r.resolution for r in rows], errs)):
        row.local_order = p
    return rows


def reference_averages(field: ParticleField, dt: float, t_end: float, window=(0.0, 1.0), n_cells: int = 1000,
                       order: int = 4) -> np.ndarray:
    sol = particle_solution(field, order, dt, t_end)
    return cell_averages(sol, window[0], window[1], n_cells)


def fv_sweep(field: ParticleField, cells, *, t_end: float, reference_field: ParticleField, order: int = 2,
             cfl: float = 0.8, window=(0.0, 1.0)) -> list[SweepRow]:
    """L1 errors of the finite-volume baseline against exact averages of a particle reference."""
    rows, errs, dxs = [], [], []
    for n in cells:
        t0 = time.perf_counter()
        grid = FvGrid.from_field(field, window[0], window[1], n)
        out = fv_solve(grid, field.flux, t_end, order=order, cfl=cfl).grid
        ref = cell_averages(reference_field, window[0], window[1], n)
        err = l1_error(out.averages, ref, out.dx)
        errs.append(err)
        dxs.append(out.dx)
        rows.append(SweepRow(out.dx, err, None, time.perf_counter() - t0))
    for row, p in zip(rows, local_orders(dxs, errs)):
        row.local_order = p
    return rows


@dataclass
class DetonationRun:
    tau: float
    marker_positions: dict          # snapshot time -> sonic marker x (None if absent)
    left_gaps: dict                 # snapshot time -> gap to the left neighbour
    right_gaps: dict
    neighbor_states: dict           # snapshot time -> (u left, u right)
    expected_front: dict            # snapshot time -> x_front(0) + f'(beta) t
    fv_front: float | None          # nearest upward beta crossing of the baseline at t_end, None if lost
    fv_crossings: list              # every upward beta crossing of the baseline at t_end
    fv_fronts: dict                 # snapshot time -> nearest upward beta crossing of the baseline
    particle_seconds: float
    fv_seconds: float
    field: ParticleField

    def marker_speed(self, t0: float, t1: float) -> float | None:
        a, b = self.marker_positions.get(t0), self.marker_positions.get(t1)
        if a is None or b is None:
            return None
        return (b - a) / (t1 - t0)


def _crossings(grid: FvGrid, level: float) -> list[float]:
    x, u = grid.centers, grid.averages
    idx = np.flatnonzero((u[:-1] < level) & (u[1:] >= level))
    return [float(x[k] + (level - u[k]) / (u[k + 1] - u[k]) * (x[k + 1] - x[k])) for k in idx]


def detonation_run(tau: float, *, beta: float = DETONATION_BETA, spacing: float = 0.02, t_end: float = 0.4,
                   snapshots=DETONATION_SNAPSHOTS, fv_cells: int = 50, opts: ReactionOptions | None = None,
                   with_fv: bool = True) -> DetonationRun:
    """Particle method and finite-volume baseline on the stiff hump problem."""
    flux = builtin_flux("burgers")
    source = BistableSource(tau, beta)
    opts = opts or ReactionOptions()
    opts = replace(opts, evolve=replace(opts.evolve, t_end=t_end))
    x0 = hump_front(beta)
    speed = float(flux.deriv(beta))

    t0 = time.perf_counter()
    field = hump_field(spacing, flux=flux)
    res = evolve_reaction(field, source, opts, snapshots=snapshots)
    t_particle = time.perf_counter() - t0

    markers, lgaps, rgaps, states = {}, {}, {}, {}
    for t, snap in res.result.snapshots.items():
        ms = sonic_markers(snap)
        # the detonation is the sonic marker nearest to where it should be
        m = min(ms, key=lambda m: abs(m.x - (x0 + speed * t)), default=None)
        markers[t] = m.x if m else None
        lgaps[t] = m.left_gap if m else None
        rgaps[t] = m.right_gap if m else None
        states[t] = (float(snap.up[m.index - 1]), float(snap.um[m.index + 1])) if m and m.left_gap is not None and m.right_gap is not None else None

    fv_front, fronts, fv_fronts, t_fv = None, [], {}, 0.0
    if with_fv:
        t0 = time.perf_counter()
        out = fv_solve(FvGrid.from_function(hump, 0.0, 1.0, fv_cells), flux, t_end, source=source, snapshots=snapshots)
        t_fv = time.perf_counter() - t0
        for t, g in out.snapshots.items():
            fv_fronts[t] = min(_crossings(g, beta), key=lambda x: abs(x - (x0 + speed * t)), default=None)
        fronts = _crossings(out.grid, beta)
        fv_front = min(fronts, key=lambda x: abs(x - (x0 + speed * t_end)), default=None)

    return DetonationRun(
        tau=tau,
        marker_positions=markers,
        left_gaps=lgaps,
        right_gaps=rgaps,
        neighbor_states=states,
        expected_front={t: x0 + speed * t for t in snapshots},
        fv_front=fv_front,
        fv_crossings=fronts,
        fv_fronts=fv_fronts,
        particle_seconds=t_particle,
        fv_seconds=t_fv,
        field=res.field,
    )

