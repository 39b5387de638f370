"""Explicit Runge-Kutta time stepping of particle fields with collision events.

Between collisions the particle state obeys a smooth ODE, so the solution
error is the ODE solver's error. Collisions are located on a cubic Hermite
dense output, refined on the actual sub-step map, and resolved by merging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, Iterable

import numpy as np
from scipy.optimize import brentq

from .errors import SolverError, StepRejected
from .particles import (
    ParticleField,
    merge,
    merge_residual,
    normalize,
    state_rhs,
)

log = logging.getLogger(__name__)

RhsProvider = Callable[[ParticleField], Callable[[np.ndarray], np.ndarray]]


@dataclass
class StepRecord:
    """One accepted RK step, with cubic Hermite interpolation in between."""

    t0: float
    t1: float
    y0: np.ndarray
    y1: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    stages: list = dc_field(default_factory=list)

    def dense(self, t: float) -> np.ndarray:
        h = self.t1 - self.t0
        s = (t - self.t0) / h
        s2, s3 = s * s, s * s * s
        return ((2 * s3 - 3 * s2 + 1) * self.y0 + (s3 - 2 * s2 + s) * h * self.f0
                + (3 * s2 - 2 * s3) * self.y1 + (s3 - s2) * h * self.f1)


@dataclass
class EvolveOptions:
    order: int = 4
    dt: float | None = 1.0 / 64  # None selects adaptive step doubling
    t_end: float = 1.0
    event_tol: float = 1e-10
    atol: float = 1e-10
    rtol: float = 1e-8
    max_dt: float | None = None
    merge_gap: float | None = None  # defaults to 10 * event_tol
    merge_check: float = 1e-6
    min_dt: float = 1e-14
    # steps are capped at collision_cap times the estimated collision time of
    # regular pairs (not below collision_floor times the nominal step), and at
    # singular_cap times the estimated time to the merge gap of other pairs
    collision_cap: float = 1.5
    collision_floor: float = 1e-3
    singular_cap: float = 0.5

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ValueError(f"order must be 2 or 4, got {self.order}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.event_tol > 0 and self.atol > 0 and self.rtol > 0):
            raise ValueError("tolerances must be positive")
        if self.merge_gap is None:
            self.merge_gap = 10.0 * self.event_tol

    @property
    def adaptive(self) -> bool:
        return self.dt is None


@dataclass
class MergeEvent:
    time: float
    index: int
    ids: tuple[int, int]
    residual: float
    characteristic: bool  # both parents were characteristic (a new shock forms)
    degenerate: bool = False  # contact reached the position floor before the states matched


@dataclass
class EvolveResult:
    field: ParticleField
    events: list[MergeEvent]
    snapshots: dict[float, ParticleField]
    steps: int = 0
    rejected: int = 0


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise StepRejected(f"non-finite {what}")


def rk_step(y, rhs: Callable, dt: float, order: int = 4, f0=None, t0: float = 0.0):
    """Classical RK2 (midpoint) or RK4 step; returns (y1, StepRecord)."""
    y = np.asarray(y, dtype=float)
    k1 = rhs(y) if f0 is None else f0
    _check_finite(k1, "rhs at step start")
    if order == 2:
        k2 = rhs(y + 0.5 * dt * k1)
        _check_finite(k2, "rhs at stage 2")
        y1 = y + dt * k2
        stages = [k1, k2]
    elif order == 4:
        k2 = rhs(y + 0.5 * dt * k1)
        _check_finite(k2, "rhs at stage 2")
        k3 = rhs(y + 0.5 * dt * k2)
        _check_finite(k3, "rhs at stage 3")
        k4 = rhs(y + dt * k3)
        _check_finite(k4, "rhs at stage 4")
        y1 = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        stages = [k1, k2, k3, k4]
    else:
        raise ValueError(f"order must be 2 or 4, got {order}")
    f1 = rhs(y1)
    _check_finite(f1, "rhs at step end")
    return y1, StepRecord(t0, t0 + dt, y, y1, k1, f1, stages)


def locate_event(record: StepRecord, gap: Callable, threshold: float = 0.0,
                 tol: float = 1e-10, samples: int = 16) -> float | None:
    """Earliest time in the step at which some gap falls to ``threshold``.

    ``gap`` maps a state to one value or an array of values (one per pair).
    Only downward crossings count: a gap that starts at or below the
    threshold is ignored until it has risen above it. The crossing is
    bracketed on the dense output and bisected until the bracket is shorter
    than ``tol``; the returned time is the bracket's right end.
    """
    if isinstance(gap, PairGaps):
        bracket = _cubic_bracket(record, gap, threshold)
        if bracket is None:
            return None
        t_prev, t, crossing = bracket
    else:
        t_prev = record.t0
        g_prev = np.atleast_1d(gap(record.y0)) - threshold
        for t in np.linspace(record.t0, record.t1, samples + 1)[1:]:
            g = np.atleast_1d(gap(record.dense(t))) - threshold
            crossing = (g_prev > 0) & (g <= 0)
            if np.any(crossing):
                break
            t_prev, g_prev = t, g
        else:
            return None

    phi = lambda s: np.min(np.atleast_1d(gap(record.dense(s)))[crossing] - threshold)
    a, b = t_prev, t
    while b - a > tol:
        m = 0.5 * (a + b)
        if phi(m) <= 0:
            b = m
        else:
            a = m
    return b


class PairGaps:
    """Gaps between neighbouring particle positions minus per-pair thresholds.

    Being linear in the state, its composition with the Hermite dense output
    is a cubic per pair, which lets ``locate_event`` find dips exactly.
    """

    def __init__(self, n: int, thresholds):
        self.n = n
        self.thresholds = np.asarray(thresholds, dtype=float)

    def linear(self, y):
        return y[1:self.n] - y[:self.n - 1]

    def __call__(self, y):
        return self.linear(y) - self.thresholds


def _cubic_bracket(record: StepRecord, gap: PairGaps, threshold: float):
    """(t_a, t_b, pairs) such that the gaps of ``pairs`` cross zero once in [t_a, t_b]."""
    h = record.t1 - record.t0
    g0 = gap(record.y0) - threshold
    g1 = gap(record.y1) - threshold
    d0 = h * gap.linear(record.f0)
    d1 = h * gap.linear(record.f1)
    # Hermite cubic p(s) = a s^3 + b s^2 + c s + g0 on s in [0, 1]
    a = 2 * g0 + d0 - 2 * g1 + d1
    b = -3 * g0 - 2 * d0 + 3 * g1 - d1
    c = d0
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - 3 * a * c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        cubic = a != 0
        r1 = np.where(cubic, (-b - sq) / (3 * a), -c / (2 * b))
        r2 = np.where(cubic, (-b + sq) / (3 * a), np.nan)
    inside = lambda r: np.where(np.isfinite(r) & (r > 0) & (r < 1), r, np.nan)
    knots = np.vstack([np.zeros_like(g0), np.sort(np.vstack([inside(r1), inside(r2)]), axis=0),
                       np.ones_like(g0)])
    vals = ((a * knots + b) * knots + c) * knots + g0
    vals[0] = g0
    vals[-1] = g1
    dips = np.isfinite(knots) & (vals <= 0)
    dips[0] = False
    dips[:, g0 <= 0] = False
    if not np.any(dips):
        return None

    # first knot per pair at which p <= 0
    first = np.argmax(dips, axis=0)
    has = dips.any(axis=0)
    s_hi = np.where(has, knots[first, np.arange(len(g0))], np.inf)
    s_best = s_hi.min()
    pairs = has & (s_hi == s_best)
    # each selected gap is positive before its root and monotone up to s_best
    s_lo = min(float(np.nanmax(knots[:first[i], i])) for i in np.flatnonzero(pairs))
    return record.t0 + s_lo * h, record.t0 + s_best * h, pairs


def merge_thresholds(field: ParticleField, merge_gap: float) -> np.ndarray:
    """Per-pair contact gap: zero where the pair's motion stays regular, else at most ``merge_gap``.

    Two characteristic particles, or any pair separated by a constant
    segment, have a bounded right-hand side up to contact and are run into
    each other exactly. Other pairs are merged slightly early because the
    interpolant slope between them is a ratio of two vanishing quantities.
    """
    char = field.characteristic
    regular = (char[:-1] & char[1:]) | (field.up[:-1] == field.um[1:])
    # near contact the inner mismatch shrinks like K * gap; scaling the gap by 1/K
    # keeps the mismatch left at merge time near merge_gap whatever K is
    gap = np.diff(field.x)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.abs(field.up[:-1] - field.um[1:]) / gap
    k = np.where(np.isfinite(k), np.maximum(k, 1.0), 1.0)
    return np.where(regular, 0.0, np.maximum(merge_gap / k, contact_floor(field)))


def contact_floor(field: ParticleField) -> np.ndarray:
    """Smallest contact gap per pair that positions can still resolve."""
    return 64 * np.finfo(float).eps * np.maximum(1.0, np.abs(field.x[1:]))


def _collision_estimates(field: ParticleField, thresholds: np.ndarray):
    """Velocity-based time to contact, split into regular and singular pairs."""
    s = np.atleast_1d(field.flux.shock_speed(field.um, field.up))
    dv = np.diff(s)
    gap = np.diff(field.x) - thresholds
    regular = thresholds == 0
    out = []
    for mask in (regular, ~regular):
        sel = mask & (dv < 0) & (gap > 0)
        with np.errstate(over="ignore"):
            out.append(float(np.min(-gap[sel] / dv[sel])) if np.any(sel) else None)
    return tuple(out)


def _closing_speeds(field: ParticleField, f) -> np.ndarray:
    with np.errstate(all="ignore"):
        v = f(field.state())[: len(field)]
    return np.diff(v)


def _merge_contacts(field: ParticleField, f, thresholds, opts, events) -> ParticleField:
    """Merge every approaching pair that would reach its contact gap within ``4 event_tol``."""
    if len(field) < 2:
        return field
    gap = np.diff(field.x) - thresholds
    dv = _closing_speeds(field, f)
    slack = 4.0 * opts.event_tol * np.abs(dv)
    # singular pairs must not be merged much beyond their own (possibly tiny) threshold
    slack = np.where(thresholds > 0, np.minimum(slack, 0.5 * thresholds), slack) + 1e-15
    contact = (gap <= slack) & (dv < 0)
    if not np.any(contact):
        return field
    # a weak shock meeting a steep compression only matches states at gaps below the
    # floor; such contacts are merged anyway, their area error is at most floor * jump
    degenerate = (thresholds > 0) & (thresholds <= contact_floor(field))
    removed = 0
    for i in np.flatnonzero(contact):
        j = i - removed
        if j >= len(field) - 1:
            break
        both_char = bool(field.um[j] == field.up[j] and field.um[j + 1] == field.up[j + 1])
        ev = MergeEvent(field.time, int(j), (int(field.ids[j]), int(field.ids[j + 1])),
                        merge_residual(field, j), both_char, bool(degenerate[i]))
        check = np.inf if degenerate[i] else opts.merge_check
        field = merge(field, j, gap_tol=np.inf, check_tol=check)
        events.append(ev)
        removed += 1
        log.debug("merge at t=%.15g pair %d ids %s residual %.3e", ev.time, j, ev.ids, ev.residual)
    return field


def _adaptive_step(y0, f, h, opts, t):
    """Step doubling; returns (y1, record, h_used, h_next, rejections)."""
    p = opts.order
    rejected = 0
    f0 = f(y0)
    while True:
        if h < opts.min_dt:
            raise SolverError(f"step size underflow (h={h:.3e}) at t={t:.15g}")
        try:
            y_full, _ = rk_step(y0, f, h, p, f0=f0, t0=t)
            y_half, _ = rk_step(y0, f, 0.5 * h, p, f0=f0, t0=t)
            y_two, rec2 = rk_step(y_half, f, 0.5 * h, p, t0=t + 0.5 * h)
        except StepRejected:
            rejected += 1
            h *= 0.25
            continue
        err = np.abs(y_two - y_full) / (2 ** p - 1)
        scale = opts.atol + opts.rtol * np.maximum(np.abs(y0), np.abs(y_two))
        ratio = float(np.max(err / scale)) if len(err) else 0.0
        factor = 0.9 * ratio ** (-1.0 / (p + 1)) if ratio > 0 else 5.0
        if ratio <= 1.0:
            rec = StepRecord(t, t + h, y0, y_two, f0, rec2.f1)
            return y_two, rec, h, h * min(5.0, factor), rejected
        rejected += 1
        h *= max(0.2, factor)


def _refine_event(y0, f, f0, t, h_guess, h_full, active, gapfn, opts):
    """Root of the active pair gaps on the true sub-step map y0 -> y(h)."""

    def G(h):
        if h == 0.0:
            return float(np.min(gapfn(y0)[active]))
        y, _ = rk_step(y0, f, h, opts.order, f0=f0, t0=t)
        return float(np.min(gapfn(y)[active]))

    lo, hi = 0.0, h_guess
    g_hi = G(hi)
    if g_hi > 0:
        lo, hi = hi, h_full
        g_hi = G(hi)
        if g_hi > 0:
            return None
    if G(lo) <= 0:
        return lo
    # the sub-step map is cheap, so refine well below event_tol
    return brentq(G, lo, hi, xtol=1e-6 * opts.event_tol, rtol=4 * np.finfo(float).eps)


def evolve(field: ParticleField, opts: EvolveOptions, rhs_provider: RhsProvider | None = None, *,
           snapshots: Iterable[float] = (), pre_step: Callable | None = None,
           observer: Callable | None = None) -> EvolveResult:
    """Integrate a particle field to ``opts.t_end``, merging on collisions.

    ``rhs_provider`` builds the state right-hand side for the current set of
    particles (it is rebuilt after every topology change). ``pre_step`` may
    edit the field between steps, ``observer`` sees every accepted state.
    Fixed-step runs keep the step grid t0 + k dt; steps are only shortened,
    to hit snapshot times, events or the collision-estimate cap.
    """
    provider = rhs_provider or (lambda fld: state_rhs(fld.flux))
    field = normalize(field)
    t0 = t = float(field.time)
    t_end = float(opts.t_end)
    eps_t = 1e-13 * max(1.0, abs(t_end))
    events: list[MergeEvent] = []
    snap_times = sorted(float(s) for s in snapshots)
    snaps: dict[float, ParticleField] = {}
    for s in snap_times:
        if abs(s - t) <= eps_t:
            snaps[s] = field.copy()
    pending = [s for s in snap_times if s > t + eps_t]
    result = EvolveResult(field, events, snaps)

    grid_k = 1
    h_adapt = min(0.01, t_end - t) if opts.adaptive else None
    stalled = 0

    while t < t_end - eps_t:
        if pre_step is not None:
            field = pre_step(field)
        f = provider(field)
        n = len(field)
        if n == 1:
            # a lone particle only translates; its states see flat far fields
            v = f(field.state())[0]
            field.x = field.x + v * (t_end - t)
            for s in pending:
                snap = field.copy()
                snap.x = snap.x - v * (t_end - s)
                snap.time = s
                snaps[s] = snap
            field.time = t = t_end
            break

        thresholds = merge_thresholds(field, opts.merge_gap)
        field = _merge_contacts(field, f, thresholds, opts, events)
        if len(field) != n:
            field = normalize(field)
            continue

        # step target
        if opts.adaptive:
            h = min(h_adapt, t_end - t)
        else:
            while t0 + grid_k * opts.dt <= t + eps_t:
                grid_k += 1
            h = min(t0 + grid_k * opts.dt, t_end) - t
        if pending:
            h = min(h, pending[0] - t)
        if opts.max_dt is not None:
            h = min(h, opts.max_dt)
        t_reg, t_sing = _collision_estimates(field, thresholds)
        if t_reg is not None:
            floor = opts.collision_floor * (opts.dt if opts.dt else h)
            h = min(h, max(opts.collision_cap * t_reg, floor))
        if t_sing is not None:
            # near contact the slope term is a ratio of two small quantities,
            # so these pairs are approached geometrically
            h = min(h, max(opts.singular_cap * t_sing, opts.min_dt))

        y0 = field.state()
        f0 = f(y0)
        if opts.adaptive:
            y1, rec, h, h_adapt, rej = _adaptive_step(y0, f, h, opts, t)
            result.rejected += rej
        else:
            try:
                y1, rec = rk_step(y0, f, h, opts.order, f0=f0, t0=t)
            except StepRejected:
                if h <= opts.min_dt:
                    raise SolverError(f"step size underflow at t={t:.15g}") from None
                # shrink towards the collision that produced the blow-up
                result.rejected += 1
                h_try = 0.5 * h
                while True:
                    try:
                        y1, rec = rk_step(y0, f, h_try, opts.order, f0=f0, t0=t)
                        h = h_try
                        break
                    except StepRejected:
                        h_try *= 0.5
                        if h_try < opts.min_dt:
                            raise SolverError(f"step size underflow at t={t:.15g}") from None

        gapfn = PairGaps(n, thresholds)
        t_ev = locate_event(rec, gapfn, 0.0, opts.event_tol)
        if t_ev is None:
            t_new, y_new = t + h, y1
            stalled = 0
        else:
            g_start = gapfn(y0)
            g_ev = gapfn(rec.dense(t_ev))
            active = (g_start > 0) & (g_ev <= 1e-12 + 1e-6 * np.abs(g_start))
            if not np.any(active):
                active = g_start > 0
            h_ev = _refine_event(y0, f, f0, t, t_ev - t, h, active, gapfn, opts)
            if h_ev is None:
                t_new, y_new = t + h, y1
                stalled = 0
            else:
                if h_ev > 0:
                    y_new, _ = rk_step(y0, f, h_ev, opts.order, f0=f0, t0=t)
                else:
                    y_new = y0
                t_new = t + h_ev
                if h_ev <= opts.min_dt:
                    stalled += 1
                    if stalled > 10:
                        raise SolverError(f"event localization stalled at t={t:.15g}")
                else:
                    stalled = 0

        # land exactly on targets
        for target in (t_end, *pending[:1]):
            if abs(t_new - target) <= eps_t:
                t_new = target
        field = field.with_state(y_new, t_new)
        t = t_new
        result.steps += 1

        if t_ev is not None:
            field = _merge_contacts(field, f, merge_thresholds(field, opts.merge_gap), opts, events)
        field = normalize(field)

        if observer is not None:
            observer(field)
        while pending and pending[0] <= t + eps_t:
            snaps[pending.pop(0)] = field.copy()

    result.field = field
    return result
