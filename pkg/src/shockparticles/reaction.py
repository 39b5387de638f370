"""Particles for the stiff balance law u_t + f(u)_x = psi(u) with a bistable source.

Particle states additionally follow the source. Stiff sources drive every
particle to the stable roots 0 and 1, where psi vanishes, so traveling
detonation waves would stall. A sonic particle pinned at the unstable root
beta, together with a drift on its two neighbours that restores the area
lost to the reaction on the neighbouring segments, carries the wave at the
speed f'(beta) with a width of order tau.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Iterable

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import ConfigError, DomainError
from .flux import FluxFunction
from .integrator import EvolveOptions, EvolveResult, evolve
from .interpolant import Segment
from .particles import ParticleField, motion, normalize

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)

#: Jumps below this make a sonic neighbour "nearly constant" (moved, not copied).
NEAR_CONSTANT = 1e-3
#: A new sonic particle is not placed within this many equilibrium gaps of another.
SONIC_HYSTERESIS = 2.0


@dataclass(frozen=True)
class BistableSource:
    """psi(u) = u (1 - u) (u - beta) / tau with stable roots 0, 1 and unstable root beta."""

    tau: float
    beta: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")

    def psi(self, u):
        u = np.asarray(u, dtype=float)
        out = u * (1.0 - u) * (u - self.beta) / self.tau
        return out if out.ndim else float(out)

    def dpsi(self, u):
        u = np.asarray(u, dtype=float)
        b = self.beta
        out = (-3.0 * u * u + 2.0 * (1.0 + b) * u - b) / self.tau
        return out if out.ndim else float(out)

    def _g(self, u):
        # antiderivative of tau / (u (1-u) (u-beta)), by partial fractions
        b = self.beta
        return -np.log(u) / b - np.log1p(-u) / (1.0 - b) + np.log(np.abs(u - b)) / (b * (1.0 - b))

    def flow(self, u, h: float):
        """Exact solution of du/dt = psi(u) after time h >= 0, vectorized.

        Solves G(u1) - G(u0) = h / tau by bisection inside the basin of the
        root that u0 is attracted to. The roots 0, beta and 1 are fixed
        exactly; values outside [0, 1] are rejected.
        """
        u = np.asarray(u, dtype=float)
        if np.any((u < 0) | (u > 1)):
            raise DomainError("the bistable flow is only defined on [0, 1]")
        out = u.copy()
        if h == 0 or np.isinf(self.tau):
            return out if out.ndim else float(out)
        b = self.beta
        target = h / self.tau
        lower = (u > 0) & (u < b)
        upper = (u > b) & (u < 1)
        # below beta the solution decays to 0: bisect on log(u);
        # above beta it grows to 1: bisect on log(1 - u)
        for mask, to_u, to_z in ((lower, np.exp, np.log), (upper, lambda z: -np.expm1(z), lambda v: np.log1p(-v))):
            if not np.any(mask):
                continue
            u0 = u[mask]
            g_goal = self._g(u0) + target
            # smaller z means further along the flow, where G is larger
            z_hi = to_z(u0)
            z_lo = np.full_like(z_hi, -745.0)
            with np.errstate(divide="ignore"):
                for _ in range(64):
                    zm = 0.5 * (z_lo + z_hi)
                    ahead = self._g(to_u(zm)) >= g_goal
                    z_lo = np.where(ahead, zm, z_lo)
                    z_hi = np.where(ahead, z_hi, zm)
            out[mask] = to_u(0.5 * (z_lo + z_hi))
        return out if out.ndim else float(out)


def _integral(flux: FluxFunction, fn, v: float, w: float) -> float:
    """Integral of fn over [v, w]: Gauss-Legendre for polynomial fluxes, quad otherwise."""
    if v == w:
        return 0.0
    if flux.polynomial:
        mid, half = 0.5 * (v + w), 0.5 * (w - v)
        u = mid + half * _GL_NODES
        return float(half * np.sum(_GL_WEIGHTS * fn(u)))
    val, _ = quad(fn, v, w, epsabs=1e-12, epsrel=1e-12, limit=200)
    return float(val)


def source_weighted_integral(flux: FluxFunction, source: BistableSource, v: float, w: float) -> float:
    """Integral of psi(u) f''(u) du from v to w."""
    return _integral(flux, lambda u: source.psi(u) * flux.deriv2(u), float(v), float(w))


def correction_coefficient(flux: FluxFunction, source: BistableSource, v: float, w: float | None = None) -> float:
    """c(v, w): source integral over the span divided by the area-change factor.

    The denominator f'(w)(w - v) - (f(w) - f(v)) is evaluated as the
    integral of f''(s)(s - v) over [v, w], which avoids cancellation when
    v and w are close. Returns 0 for v == w.
    """
    w = source.beta if w is None else float(w)
    v = float(v)
    flux.check_range(v, w)
    if v == w:
        return 0.0
    num = source_weighted_integral(flux, source, v, w)
    den = _integral(flux, lambda s: flux.deriv2(s) * (s - v), v, w)
    return num / den


def reaction_segment_integral(seg: Segment, source: BistableSource) -> float:
    """Integral of psi(U(x)) over a segment of the similarity interpolant.

    Substituting u for x gives width times the f''-weighted mean of psi over
    [u_left, u_right]. The weight's integral f'(u_right) - f'(u_left) is taken
    by the same quadrature, so nearly equal states do not cancel.
    """
    if seg.empty:
        return 0.0
    if seg.u_left == seg.u_right:
        return seg.width * float(source.psi(seg.u_left))
    flux = seg.flux
    weight = _integral(flux, flux.deriv2, seg.u_left, seg.u_right)
    return seg.width * source_weighted_integral(flux, source, seg.u_left, seg.u_right) / weight


def equilibrium_gap(flux: FluxFunction, source: BistableSource, u: float) -> float:
    """Distance at which a nearly constant neighbour with state u settles."""
    c = abs(correction_coefficient(flux, source, u))
    if c == 0:
        return np.inf
    return abs(float(flux.deriv(source.beta) - flux.deriv(u))) / c


@dataclass
class SonicMarker:
    index: int
    id: int
    x: float
    left_gap: float | None
    right_gap: float | None


def sonic_markers(field: ParticleField) -> list[SonicMarker]:
    out = []
    for i in np.flatnonzero(field.sonic):
        lg = float(field.x[i] - field.x[i - 1]) if i > 0 else None
        rg = float(field.x[i + 1] - field.x[i]) if i < len(field) - 1 else None
        out.append(SonicMarker(int(i), int(field.ids[i]), float(field.x[i]), lg, rg))
    return out


def _near_constant(field: ParticleField, j: int, side: int) -> bool:
    """Particle j has a small jump and a small jump to its outer neighbour."""
    if abs(field.up[j] - field.um[j]) >= NEAR_CONSTANT:
        return False
    k = j + side  # outer neighbour, away from the sonic particle
    if not 0 <= k < len(field):
        return True
    outer = field.up[k] if side < 0 else field.um[k]
    inner = field.um[j] if side < 0 else field.up[j]
    return abs(outer - inner) < NEAR_CONSTANT


def sonic_maintenance(field: ParticleField, source: BistableSource) -> ParticleField:
    """Insert, demote and prepare sonic particles.

    Every upward crossing of beta inside a segment gets a sonic particle at
    the point where the interpolant equals beta, unless an existing sonic
    particle is closer than the hysteresis distance. A characteristic
    particle sitting exactly at beta between straddling neighbours is
    promoted. Sonic particles whose neighbours no longer straddle beta are
    demoted. A neighbour that is not nearly constant is copied, as a
    characteristic particle with its inner state at its own position, so
    that the copy can take the corrective drift.
    """
    flux = field.flux
    b = source.beta
    field = field.copy()
    n = len(field)

    # demotion
    for i in np.flatnonzero(field.sonic):
        ok = 0 < i < n - 1 and field.up[i - 1] < b < field.um[i + 1] and field.um[i] == field.up[i] == b
        if not ok:
            field.sonic[i] = False

    # promotion of particles already at beta
    for i in range(1, n - 1):
        if (not field.sonic[i] and field.um[i] == field.up[i] == b
                and field.up[i - 1] < b < field.um[i + 1]):
            field.sonic[i] = True

    # insertion inside upward-crossing segments
    existing = list(field.x[field.sonic])
    i = 0
    while i < len(field) - 1:
        ul, ur = field.up[i], field.um[i + 1]
        if ul < b < ur and field.x[i + 1] > field.x[i]:
            x_b = float(field.segment(i).inverse(b))
            guard = SONIC_HYSTERESIS * max(equilibrium_gap(flux, source, ul), equilibrium_gap(flux, source, ur))
            if all(abs(x_b - xs) > guard for xs in existing):
                field, _ = field.insert(i + 1, x_b, b, b, sonic=True)
                existing.append(x_b)
                i += 1
        i += 1

    # copies for neighbours that are not nearly constant; a neighbouring shock gets
    # none, since by the entropy condition it would absorb the copy at once
    i = 0
    while i < len(field):
        if field.sonic[i]:
            j = i - 1
            if j >= 0 and _copyable(field, j) and not _near_constant(field, j, -1):
                u = field.up[j]
                field, _ = field.insert(i, field.x[j], u, u)
                i += 1
            j = i + 1
            if j < len(field) and _copyable(field, j) and not _near_constant(field, j, +1):
                u = field.um[j]
                field, _ = field.insert(j, field.x[j], u, u)
        i += 1
    return field


def _copyable(field: ParticleField, j: int) -> bool:
    return not field.sonic[j] and abs(field.up[j] - field.um[j]) < NEAR_CONSTANT


def neighbor_drifts(field: ParticleField, source: BistableSource) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(indices, coefficients, partners) of the corrective drift, one row per sonic neighbour.

    The drift on neighbour j is coef * (x_sonic - x_j): a left neighbour
    moves towards the sonic particle at rate |c| times the gap, a right
    neighbour likewise. Both gaps then relax to (|f'(beta) - f'(u)|) / |c|.
    Neighbouring shocks keep their Rankine-Hugoniot speed and get no drift.
    """
    flux = field.flux
    idx, coef, partner = [], [], []
    for i in np.flatnonzero(field.sonic):
        for j, u in ((i - 1, field.up[i - 1] if i > 0 else None), (i + 1, field.um[i + 1] if i < len(field) - 1 else None)):
            if u is None or field.sonic[j] or abs(field.up[j] - field.um[j]) >= NEAR_CONSTANT:
                continue
            idx.append(j)
            partner.append(i)
            coef.append(abs(correction_coefficient(flux, source, float(u))))
    return np.array(idx, dtype=int), np.array(coef), np.array(partner, dtype=int)


def corrected_neighbor_rhs(field: ParticleField, source: BistableSource) -> np.ndarray:
    """Velocity adjustments of every particle due to the sonic correction."""
    idx, coef, partner = neighbor_drifts(field, source)
    out = np.zeros(len(field))
    if len(idx):
        np.add.at(out, idx, coef * (field.x[partner] - field.x[idx]))
    return out


def balance_rhs(flux: FluxFunction, source: BistableSource, drift=None):
    """Packed right-hand side with source terms and an optional frozen drift table.

    ``drift`` is (indices, coefficients, partners) from ``neighbor_drifts``;
    coefficients are frozen per step since neighbour states change slowly
    compared with the gaps.
    """

    def f(y):
        n = len(y) // 3
        x, um, up = y[:n], y[n:2 * n], y[2 * n:]
        dx, dum, dup = motion(x, um, up, flux)
        dum = dum + source.psi(um)
        dup = dup + source.psi(up)
        if drift is not None and len(drift[0]):
            idx, coef, partner = drift
            dx = dx.copy()
            np.add.at(dx, idx, coef * (x[partner] - x[idx]))
        return np.concatenate([dx, dum, dup])

    return f


def rhs_balance(field: ParticleField, source: BistableSource):
    """(dx, du-, du+) for the balance law, without the sonic correction."""
    y = balance_rhs(field.flux, source)(field.state())
    n = len(field)
    return y[:n], y[n:2 * n], y[2 * n:]


def traveling_wave_profile(source: BistableSource, flux: FluxFunction, span: tuple[float, float] = (-20.0, 20.0),
                           n: int = 401, tau_scaled: bool = False):
    """Traveling-wave profile v(xi) through the sonic point, with v(0) = beta.

    Integrates v' = v (1 - v)(v - beta) / (f'(v) - f'(beta)) outward from
    the sonic point in both directions; at v = beta the right-hand side is
    replaced by its limit beta (1 - beta) / f''(beta). With ``tau_scaled``
    the abscissa is returned in units of x, i.e. multiplied by tau.
    """
    if flux.convexity != "convex":
        raise DomainError("traveling waves through the sonic point need a convex flux")
    b = source.beta
    r = float(flux.deriv(b))
    slope_b = b * (1.0 - b) / float(flux.deriv2(b))

    def rhs(_, v):
        v = float(v[0])
        den = float(flux.deriv(v)) - r
        if abs(v - b) < 1e-9:
            return [slope_b]
        if den == 0.0:
            raise DomainError(f"non-removable singularity at v={v}")
        return [v * (1.0 - v) * (v - b) / den]

    lo, hi = span
    if not lo < 0 < hi:
        raise ValueError("span must contain 0")
    xi_r = np.linspace(0.0, hi, n // 2 + 1)
    xi_l = np.linspace(0.0, lo, n // 2 + 1)
    kw = dict(method="DOP853", rtol=1e-11, atol=1e-13)
    right = solve_ivp(rhs, (0.0, hi), [b], t_eval=xi_r, **kw)
    left = solve_ivp(rhs, (0.0, lo), [b], t_eval=xi_l, **kw)
    xi = np.concatenate([left.t[::-1], right.t[1:]])
    v = np.concatenate([left.y[0][::-1], right.y[0][1:]])
    if tau_scaled:
        xi = xi * source.tau
    return xi, v


@dataclass
class ReactionOptions:
    """Stepping options for the balance law; ``evolve`` options plus source handling."""

    evolve: EvolveOptions = dc_field(default_factory=EvolveOptions)
    sonic: bool = True
    implicit: bool = False  # trapezoidal source substep instead of explicit source terms
    dt_fraction: float = 0.1  # explicit steps are capped at dt_fraction * tau
    newton_tol: float = 1e-10


@dataclass
class ReactionResult:
    result: EvolveResult
    marker_history: list[tuple[float, int, float]]  # (time, marker id, position)
    gap_history: list[tuple[float, float | None, float | None]]

    @property
    def field(self) -> ParticleField:
        return self.result.field


def trapezoid_source(u: np.ndarray, source: BistableSource, h: float, tol: float = 1e-10) -> np.ndarray:
    """One trapezoidal step of du/dt = psi(u), solved by scalar Newton per entry."""
    u = np.asarray(u, dtype=float)
    rhs0 = u + 0.5 * h * source.psi(u)
    v = u.copy()
    for _ in range(50):
        g = v - 0.5 * h * source.psi(v) - rhs0
        dg = 1.0 - 0.5 * h * source.dpsi(v)
        step = g / dg
        v = v - step
        if np.max(np.abs(step), initial=0.0) < tol:
            break
    return np.clip(v, 0.0, 1.0)


def evolve_reaction(field: ParticleField, source: BistableSource, opts: ReactionOptions | None = None, *,
                    snapshots: Iterable[float] = ()) -> ReactionResult:
    """Integrate the balance law with sonic particles and the neighbour correction.

    Explicit mode adds the source to the particle equations and caps the
    step at ``dt_fraction * tau``. Implicit mode advances the transport part
    explicitly and applies a trapezoidal source step after every accepted
    step (first-order splitting), which stays stable for any tau.
    """
    opts = opts or ReactionOptions()
    eo = opts.evolve
    flux = field.flux
    markers: list[tuple[float, int, float]] = []
    gaps: list[tuple[float, float | None, float | None]] = []
    last_time = [float(field.time)]

    if not opts.implicit:
        eo = replace(eo, max_dt=min(opts.dt_fraction * source.tau, eo.max_dt or np.inf))

    def pre_step(fld):
        if opts.sonic:
            fld = sonic_maintenance(fld, source)
        return fld

    def provider(fld):
        drift = neighbor_drifts(fld, source) if opts.sonic else None
        if opts.implicit:
            return _transport_rhs(flux, drift)
        return balance_rhs(flux, source, drift)

    def observer(fld):
        if opts.implicit:
            h = fld.time - last_time[0]
            if h > 0:
                fld.um[:] = trapezoid_source(fld.um, source, h, opts.newton_tol)
                fld.up[:] = trapezoid_source(fld.up, source, h, opts.newton_tol)
        last_time[0] = fld.time
        for m in sonic_markers(fld):
            markers.append((fld.time, m.id, m.x))
            gaps.append((fld.time, m.left_gap, m.right_gap))

    field = pre_step(normalize(field))
    for m in sonic_markers(field):
        markers.append((field.time, m.id, m.x))
        gaps.append((field.time, m.left_gap, m.right_gap))
    res = evolve(field, eo, provider, snapshots=snapshots, pre_step=pre_step, observer=observer)
    return ReactionResult(res, markers, gaps)


def _transport_rhs(flux: FluxFunction, drift):
    def f(y):
        n = len(y) // 3
        x = y[:n]
        dx, dum, dup = motion(x, y[n:2 * n], y[2 * n:], flux)
        if drift is not None and len(drift[0]):
            idx, coef, partner = drift
            dx = dx.copy()
            np.add.at(dx, idx, coef * (x[partner] - x[idx]))
        return np.concatenate([dx, dum, dup])

    return f
