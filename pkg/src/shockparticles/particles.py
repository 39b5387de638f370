"""Shock particles and the ordinary differential equation they obey.

A shock particle (x, u-, u+) is a discontinuity that moves with the
Rankine-Hugoniot speed while its two states change exactly so that the
similarity interpolant to either side keeps evolving as the true solution.
A particle with u- == u+ is an ordinary characteristic particle.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, IntegrationAccuracyError, PendingMerge
from .flux import FluxFunction
from .interpolant import Segment, segment_average

#: Position gap below which approaching particles are merged.
MERGE_GAP = 1e-9
#: Largest inner-state mismatch accepted when merging non-characteristic pairs.
MERGE_CHECK = 1e-6
#: How many gap widths a merged particle may be shifted to keep the area exact.
MERGE_SHIFT = 8.0


@dataclass(frozen=True)
class ShockParticle:
    x: float
    u_minus: float
    u_plus: float

    @property
    def characteristic(self) -> bool:
        return self.u_minus == self.u_plus


@dataclass
class ParticleField:
    """Ordered particles plus the flux they are transported by.

    ``ids`` are stable integer labels that survive insertions and merges
    (a merged particle keeps the label of its left parent). ``sonic`` flags
    the marker particles used by the reaction extension.
    """

    x: np.ndarray
    um: np.ndarray
    up: np.ndarray
    flux: FluxFunction
    time: float = 0.0
    ids: np.ndarray | None = None
    sonic: np.ndarray | None = None
    next_id: int = dc_field(default=-1, repr=False)

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float).reshape(-1)
        self.um = np.array(self.um, dtype=float).reshape(-1)
        self.up = np.array(self.up, dtype=float).reshape(-1)
        n = len(self.x)
        if len(self.um) != n or len(self.up) != n:
            raise ValueError("x, um and up must have equal length")
        if n == 0:
            raise ValueError("a particle field needs at least one particle")
        self.ids = np.arange(n) if self.ids is None else np.array(self.ids, dtype=int)
        self.sonic = np.zeros(n, dtype=bool) if self.sonic is None else np.array(self.sonic, dtype=bool)
        if self.next_id < 0:
            self.next_id = int(self.ids.max()) + 1 if n else 0

    @classmethod
    def from_particles(cls, particles: Iterable, flux: FluxFunction, time: float = 0.0) -> "ParticleField":
        """Build from ShockParticles, (x, u) pairs or (x, u-, u+) triples."""
        rows = []
        for p in particles:
            if isinstance(p, ShockParticle):
                rows.append((p.x, p.u_minus, p.u_plus))
            elif len(p) == 2:
                rows.append((p[0], p[1], p[1]))
            else:
                rows.append(tuple(p))
        arr = np.array(rows, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], flux, time)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def particles(self) -> list[ShockParticle]:
        return [ShockParticle(float(a), float(b), float(c)) for a, b, c in zip(self.x, self.um, self.up)]

    @property
    def characteristic(self) -> np.ndarray:
        return self.um == self.up

    def segment(self, i: int) -> Segment:
        return Segment(float(self.x[i]), float(self.x[i + 1]), float(self.up[i]), float(self.um[i + 1]), self.flux)

    def segments(self) -> list[Segment]:
        return [self.segment(i) for i in range(len(self) - 1)]

    def copy(self) -> "ParticleField":
        return ParticleField(self.x.copy(), self.um.copy(), self.up.copy(), self.flux, self.time,
                             self.ids.copy(), self.sonic.copy(), self.next_id)

    def state(self) -> np.ndarray:
        return np.concatenate([self.x, self.um, self.up])

    def with_state(self, y: np.ndarray, time: float) -> "ParticleField":
        n = len(self)
        return ParticleField(y[:n].copy(), y[n:2 * n].copy(), y[2 * n:].copy(), self.flux, time,
                             self.ids.copy(), self.sonic.copy(), self.next_id)

    def index_of(self, pid: int) -> int | None:
        hits = np.flatnonzero(self.ids == pid)
        return int(hits[0]) if len(hits) else None

    def insert(self, pos: int, x: float, um: float, up: float, sonic: bool = False) -> tuple["ParticleField", int]:
        """Insert a particle before index ``pos``; returns the new field and its id."""
        pid = self.next_id
        out = ParticleField(
            np.insert(self.x, pos, x), np.insert(self.um, pos, um), np.insert(self.up, pos, up),
            self.flux, self.time, np.insert(self.ids, pos, pid), np.insert(self.sonic, pos, sonic),
            self.next_id + 1,
        )
        return out, pid


def normalize(field: ParticleField) -> ParticleField:
    """Split entropy-violating particles and sort by position.

    A particle with f'(u-) < f'(u+) becomes two characteristic particles at
    the same position, which then separate as a rarefaction fan.
    """
    flux = field.flux
    flux.check_range(field.um, field.up)
    bad = flux.deriv(field.um) < flux.deriv(field.up)
    if np.any(bad):
        x, um, up, ids, sonic = [], [], [], [], []
        next_id = field.next_id
        for i in range(len(field)):
            if bad[i]:
                x += [field.x[i], field.x[i]]
                um += [field.um[i], field.up[i]]
                up += [field.um[i], field.up[i]]
                ids += [field.ids[i], next_id]
                sonic += [False, False]
                next_id += 1
            else:
                x.append(field.x[i])
                um.append(field.um[i])
                up.append(field.up[i])
                ids.append(field.ids[i])
                sonic.append(field.sonic[i])
        field = ParticleField(x, um, up, flux, field.time, ids, sonic, next_id)
    else:
        field = field.copy()
    order = np.argsort(field.x, kind="stable")
    if np.any(order != np.arange(len(field))):
        field.x, field.um, field.up = field.x[order], field.um[order], field.up[order]
        field.ids, field.sonic = field.ids[order], field.sonic[order]
    return field


def motion(x: np.ndarray, um: np.ndarray, up: np.ndarray, flux: FluxFunction):
    """Time derivatives (dx, dum, dup) of a particle state, vectorized.

    The outermost particles see a flat far field, so their outward state
    does not change. Terms whose relative speed s - f'(u) vanishes are set
    to zero even when the neighbouring gap is zero; a zero gap next to a
    moving state yields a non-finite entry.
    """
    s = flux.shock_speed(um, up)
    dm = flux.deriv(um)
    dp = flux.deriv(up)
    dum = np.zeros_like(x)
    dup = np.zeros_like(x)
    if len(x) > 1:
        gap = x[1:] - x[:-1]
        dw = dm[1:] - dp[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            # slope of f'(U) across each segment
            slope = np.where(dw == 0.0, 0.0, dw / gap)
            rel_m = s[1:] - dm[1:]
            rel_p = s[:-1] - dp[:-1]
            dum[1:] = np.where(rel_m == 0.0, 0.0, rel_m * slope / flux.deriv2(um[1:]))
            dup[:-1] = np.where(rel_p == 0.0, 0.0, rel_p * slope / flux.deriv2(up[:-1]))
    return np.atleast_1d(s).astype(float), dum, dup


def state_rhs(flux: FluxFunction):
    """Right-hand side on the packed state vector [x, u-, u+]."""

    def f(y):
        n = len(y) // 3
        dx, dum, dup = motion(y[:n], y[n:2 * n], y[2 * n:], flux)
        return np.concatenate([dx, dum, dup])

    return f


def rhs(field: ParticleField):
    """Derivatives (dx, du-, du+) of every particle.

    Raises PendingMerge when two particles coincide while one of them has a
    state that would need the infinite slope between them.
    """
    dx, dum, dup = motion(field.x, field.um, field.up, field.flux)
    bad = ~np.isfinite(dum[1:]) | ~np.isfinite(dup[:-1])
    if np.any(bad):
        raise PendingMerge(np.flatnonzero(bad))
    return dx, dum, dup


def characteristic_collision_time(field: ParticleField) -> float | None:
    """Exact first collision time of an all-characteristic field."""
    if not np.all(field.characteristic):
        raise DomainError("characteristic_collision_time needs characteristic particles only")
    return _first_positive(np.diff(field.x), np.diff(field.flux.deriv(field.um)))


def estimate_next_collision(field: ParticleField) -> float | None:
    """Collision estimate from the particle velocities alone."""
    s = np.atleast_1d(field.flux.shock_speed(field.um, field.up))
    return _first_positive(np.diff(field.x), np.diff(s))


def _first_positive(gap: np.ndarray, dv: np.ndarray) -> float | None:
    closing = dv < 0
    if not np.any(closing):
        return None
    times = -gap[closing] / dv[closing]
    times = times[times >= 0]
    return float(times.min()) if len(times) else None


def merge_residual(field: ParticleField, i: int) -> float:
    return abs(float(field.up[i] - field.um[i + 1]))


def _merge_position(field: ParticleField, i: int) -> float:
    """Position near [x_i, x_{i+1}] where the merged particle leaves the area unchanged.

    Every segment's area is its width times the nonlinear average of its end
    states, so the area after the merge is linear in the merged position.
    """
    x0, x1 = field.x[i], field.x[i + 1]
    if x1 <= x0:
        return float(x0)
    flux = field.flux
    a_left = field.um[i] if i == 0 else segment_average(flux, field.up[i - 1], field.um[i])
    a_mid = segment_average(flux, field.up[i], field.um[i + 1])
    a_right = field.up[i + 1] if i + 2 == len(field) else segment_average(flux, field.up[i + 1], field.um[i + 2])
    if a_left == a_right:
        return float(x0)
    theta = (a_mid - a_right) / (a_left - a_right)
    # the shift stays within a few gap widths and between the outer neighbours
    theta = min(max(theta, -MERGE_SHIFT), 1.0 + MERGE_SHIFT)
    lo = field.x[i - 1] if i > 0 else -np.inf
    hi = field.x[i + 2] if i + 2 < len(field) else np.inf
    return float(min(max(x0 + (x1 - x0) * theta, lo), hi))


def merge(field: ParticleField, i: int, *, gap_tol: float = MERGE_GAP, check_tol: float = MERGE_CHECK) -> ParticleField:
    """Replace particles i and i+1 by (x, u-_i, u+_{i+1}).

    At exact contact x = x_i. A pair merged slightly before contact is
    placed inside its gap so that the area under the interpolant is kept.
    When at least one of the two carries a jump, their inner states must
    agree at contact; a larger mismatch means the collision was resolved
    too late and IntegrationAccuracyError is raised.
    """
    n = len(field)
    if not 0 <= i < n - 1:
        raise IndexError(f"no pair ({i}, {i + 1}) in a field of {n} particles")
    gap = field.x[i + 1] - field.x[i]
    if gap > gap_tol:
        raise DomainError(f"particles {i} and {i + 1} are {gap:.3e} apart, more than {gap_tol:.1e}")
    both_char = field.um[i] == field.up[i] and field.um[i + 1] == field.up[i + 1]
    residual = merge_residual(field, i)
    if not both_char and residual > check_tol:
        raise IntegrationAccuracyError(
            f"inner states of pair ({i}, {i + 1}) differ by {residual:.3e} > {check_tol:.1e} at contact"
        )
    keep = np.ones(n, dtype=bool)
    keep[i + 1] = False
    x = field.x.copy()
    x[i] = _merge_position(field, i)
    up = field.up.copy()
    up[i] = field.up[i + 1]
    sonic = field.sonic.copy()
    sonic[i] = False
    out = ParticleField(x[keep], field.um[keep], up[keep], field.flux, field.time,
                        field.ids[keep], sonic[keep], field.next_id)
    return normalize(out)


def merge_pairs(field: ParticleField, pairs: Sequence[int], **kw) -> ParticleField:
    """Merge several pairs (left indices, ascending) from left to right."""
    removed = 0
    for i in sorted(pairs):
        j = i - removed
        if j < len(field) - 1:
            field = merge(field, j, **kw)
            removed += 1
    return field
