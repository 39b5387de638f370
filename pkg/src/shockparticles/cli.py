"""Command-line entry point: ``run`` a configured solve or ``converge`` a sweep.

Configs are JSON files. A run writes one CSV per snapshot plus a metadata
JSON whose ``config`` entry is the fully resolved config, so the metadata
file can be fed back in as a config. Exit codes: 0 success, 2 config
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, SolverError
from .flux import builtin_flux
from .fvref import FvGrid, fv_solve
from .integrator import EvolveOptions, evolve
from .interpolant import cell_averages, l1_error, sample_initial_condition
from .particles import ParticleField
from .problems import fit_order, hump, local_orders
from .reaction import BistableSource, ReactionOptions, evolve_reaction

log = logging.getLogger("shockparticles")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
CONFIG_DIR = Path(__file__).parent / "configs"


def _number(value, key: str) -> float:
    """Numbers may be given as JSON numbers or as fraction strings such as "1/64"."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"{key}: expected a number, got {value!r}")


@dataclass
class InitialSpec:
    """A named analytic initial function sampled onto particles."""

    name: str = "hump"
    params: dict = field(default_factory=dict)
    domain: list = field(default_factory=lambda: [0.0, 1.0])
    discontinuities: list = field(default_factory=list)
    spacing: float | None = 0.02
    tol: float | None = None
    max_particles: int = 2000


@dataclass
class SourceSpec:
    tau: float
    beta: float = 0.8


@dataclass
class ProblemConfig:
    flux: str = "quartic"
    particles: list | None = None
    initial: InitialSpec | None = None
    source: SourceSpec | None = None


@dataclass
class SolverConfig:
    method: str = "particle"
    order: int = 4
    dt: float | None = 1.0 / 64
    t_end: float = 1.0
    event_tol: float = 1e-10
    atol: float = 1e-10
    rtol: float = 1e-8
    cfl: float = 0.8
    fv_cells: int = 400
    sonic: bool = True
    implicit: bool = False


@dataclass
class OutputConfig:
    window: list = field(default_factory=lambda: [0.0, 1.0])
    snapshots: list = field(default_factory=list)
    cells: int = 1000


@dataclass
class SweepConfig:
    dts: list = field(default_factory=lambda: [2.0 ** -k for k in range(3, 10)])
    cells: list = field(default_factory=lambda: [25, 50, 100, 200, 400])
    reference_factor: float = 100.0
    jobs: int = 1


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        return asdict(self)


INITIAL_FUNCTIONS = {
    "hump": hump,
    "step": lambda x, left=1.0, right=0.0, at=0.5: np.where(np.asarray(x) < at, left, right),
    "constant": lambda x, value=0.5: np.full(np.shape(x), float(value)),
}

_NUMERIC = {
    ("solver", "dt"), ("solver", "t_end"), ("solver", "event_tol"), ("solver", "atol"), ("solver", "rtol"),
    ("solver", "cfl"), ("source", "tau"), ("source", "beta"), ("initial", "spacing"), ("initial", "tol"),
    ("sweep", "reference_factor"),
}


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown key (allowed: {', '.join(known)})")
    kwargs = {}
    section = path.rsplit(".", 1)[-1]
    for name, value in data.items():
        key = f"{path}.{name}" if path else name
        nested = _NESTED.get((cls, name))
        if nested is not None and value is not None:
            value = _build(nested, value, key)
        elif (section, name) in _NUMERIC and value is not None:
            value = _number(value, key)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


_NESTED = {
    (RunConfig, "problem"): ProblemConfig,
    (RunConfig, "solver"): SolverConfig,
    (RunConfig, "output"): OutputConfig,
    (RunConfig, "sweep"): SweepConfig,
    (ProblemConfig, "initial"): InitialSpec,
    (ProblemConfig, "source"): SourceSpec,
}


def config_from_dict(data: dict) -> RunConfig:
    """Validate and build a RunConfig; a run-metadata dict is accepted as well."""
    if isinstance(data, dict) and "config" in data and "events" in data:
        data = data["config"]
    cfg = _build(RunConfig, data, "")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    p, s, o = cfg.problem, cfg.solver, cfg.output
    try:
        builtin_flux(p.flux)
    except ConfigError as exc:
        raise ConfigError(f"problem.flux: {exc}") from None
    if (p.particles is None) == (p.initial is None):
        raise ConfigError("problem: give exactly one of 'particles' or 'initial'")
    if p.initial is not None and p.initial.name not in INITIAL_FUNCTIONS:
        raise ConfigError(f"problem.initial.name: unknown function {p.initial.name!r} "
                          f"(choose from {', '.join(sorted(INITIAL_FUNCTIONS))})")
    if p.particles is not None:
        for k, row in enumerate(p.particles):
            if not isinstance(row, (list, tuple)) or len(row) not in (2, 3):
                raise ConfigError(f"problem.particles[{k}]: expected [x, u] or [x, u_minus, u_plus]")
    if s.method not in ("particle", "fv"):
        raise ConfigError(f"solver.method: expected 'particle' or 'fv', got {s.method!r}")
    if s.method == "particle" and s.order not in (2, 4):
        raise ConfigError(f"solver.order: particle solver supports 2 or 4, got {s.order}")
    if s.method == "fv" and s.order not in (1, 2):
        raise ConfigError(f"solver.order: fv solver supports 1 or 2, got {s.order}")
    if s.dt is not None and not s.dt > 0:
        raise ConfigError("solver.dt: must be positive (or null for adaptive stepping)")
    if not s.t_end > 0:
        raise ConfigError("solver.t_end: must be positive")
    if not 0 < s.cfl < 1:
        raise ConfigError(f"solver.cfl: must lie in (0, 1), got {s.cfl}")
    snaps = [_number(t, f"output.snapshots[{k}]") for k, t in enumerate(o.snapshots)]
    if snaps != sorted(snaps):
        raise ConfigError("output.snapshots: times must be sorted")
    if any(t < 0 or t > s.t_end for t in snaps):
        raise ConfigError(f"output.snapshots: times must lie in [0, {s.t_end}]")
    o.snapshots = snaps
    if len(o.window) != 2 or not o.window[0] < o.window[1]:
        raise ConfigError("output.window: expected [x_min, x_max] with x_min < x_max")
    if p.source is not None:
        BistableSource(p.source.tau, p.source.beta)
    # resolving the initial field catches out-of-range values early
    initial_field(cfg)


def load_config(path: str | Path, overrides: list[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if isinstance(data, dict) and "config" in data and "events" in data:
        data = data["config"]
    for item in overrides:
        apply_override(data, item)
    return config_from_dict(data)


def apply_override(data: dict, item: str) -> None:
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"--override {item!r}: expected key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def initial_field(cfg: RunConfig) -> ParticleField:
    p = cfg.problem
    flux = builtin_flux(p.flux)
    if p.particles is not None:
        try:
            return ParticleField.from_particles(p.particles, flux)
        except (DomainError, ValueError) as exc:
            raise ConfigError(f"problem.particles: {exc}") from None
    spec = p.initial
    fn = INITIAL_FUNCTIONS[spec.name]
    try:
        u0 = lambda x: fn(x, **spec.params)
        u0(np.array([spec.domain[0]]))
    except TypeError as exc:
        raise ConfigError(f"problem.initial.params: {exc}") from None
    try:
        return sample_initial_condition(u0, flux, tuple(spec.domain), discontinuities=spec.discontinuities,
                                        spacing=spec.spacing, max_particles=spec.max_particles,
                                        tol=spec.tol).field
    except DomainError as exc:
        raise ConfigError(f"problem.initial: {exc}") from None


def _evolve_options(cfg: RunConfig, **changes) -> EvolveOptions:
    s = cfg.solver
    kw = dict(order=s.order, dt=s.dt, t_end=s.t_end, event_tol=s.event_tol, atol=s.atol, rtol=s.rtol)
    kw.update(changes)
    return EvolveOptions(**kw)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, header: list[str], columns) -> None:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _snapshot_name(t: float) -> str:
    return f"snapshot_t{t:.6f}.csv"


def solve(cfg: RunConfig):
    """Run the configured solver; returns (snapshots dict, events list, particle counts)."""
    s, o, p = cfg.solver, cfg.output, cfg.problem
    field0 = initial_field(cfg)
    snaps = o.snapshots
    if s.method == "fv":
        source = BistableSource(p.source.tau, p.source.beta) if p.source else None
        lo, hi = o.window
        if p.initial is not None:
            fn = INITIAL_FUNCTIONS[p.initial.name]
            grid = FvGrid.from_function(lambda x: fn(x, **p.initial.params), lo, hi, s.fv_cells)
        else:
            grid = FvGrid.from_field(field0, lo, hi, s.fv_cells)
        res = fv_solve(grid, field0.flux, s.t_end, order=s.order, cfl=s.cfl, source=source, snapshots=snaps)
        return res.snapshots, [], {}
    if p.source is not None:
        source = BistableSource(p.source.tau, p.source.beta)
        ropts = ReactionOptions(evolve=_evolve_options(cfg), sonic=s.sonic, implicit=s.implicit)
        rres = evolve_reaction(field0, source, ropts, snapshots=snaps)
        result = rres.result
    else:
        result = evolve(field0, _evolve_options(cfg), snapshots=snaps)
    events = [{"time": e.time, "index": e.index, "ids": list(e.ids), "residual": e.residual,
               "characteristic": e.characteristic} for e in result.events]
    counts = {_fmt(t): len(f) for t, f in result.snapshots.items()}
    counts["final"] = len(result.field)
    return result.snapshots, events, counts


def command_run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    snaps, events, counts = solve(cfg)
    files = []
    for t in sorted(snaps):
        snap = snaps[t]
        name = _snapshot_name(t)
        if cfg.solver.method == "fv":
            write_csv(out / name, ["x_center", "u_avg"], [snap.centers, snap.averages])
        else:
            write_csv(out / name, ["x", "u_minus", "u_plus"], [snap.x, snap.um, snap.up])
        files.append(name)
    meta = {
        "command": "run",
        "config": cfg.to_dict(),
        "events": events,
        "particle_counts": counts,
        "snapshots": files,
        "wall_time": time.perf_counter() - t0,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    log.info("wrote %d snapshot(s) to %s", len(files), out)
    return EXIT_OK


def _sweep_particle_entry(args):
    cfg_dict, dt = args
    cfg = config_from_dict(cfg_dict)
    lo, hi = cfg.output.window
    sol = evolve(initial_field(cfg), _evolve_options(cfg, dt=dt)).field
    return cell_averages(sol, lo, hi, cfg.output.cells)


def _sweep_fv_entry(args):
    cfg_dict, n = args
    cfg = config_from_dict(cfg_dict)
    lo, hi = cfg.output.window
    field0 = initial_field(cfg)
    grid = FvGrid.from_field(field0, lo, hi, n)
    return fv_solve(grid, field0.flux, cfg.solver.t_end, order=cfg.solver.order, cfl=cfg.solver.cfl).grid.averages


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def command_converge(cfg: RunConfig, out: Path) -> int:
    """Error table against a particle reference at dt = min(dts) / reference_factor."""
    if cfg.problem.source is not None:
        raise ConfigError("converge: sources are not supported (no exact reference)")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sw, lo, hi = cfg.sweep, *cfg.output.window
    dts = [_number(d, f"sweep.dts[{k}]") for k, d in enumerate(sw.dts)]
    ref_dt = min(dts) / sw.reference_factor
    ref_opts = _evolve_options(cfg, order=4, dt=ref_dt)
    ref_field = evolve(initial_field(cfg), ref_opts).field
    cfg_dict = cfg.to_dict()

    if cfg.solver.method == "particle":
        resolutions = dts
        ref = cell_averages(ref_field, lo, hi, cfg.output.cells)
        dx = (hi - lo) / cfg.output.cells
        sols = _map(_sweep_particle_entry, [(cfg_dict, dt) for dt in dts], sw.jobs)
        errors = [l1_error(a, ref, dx) for a in sols]
        label = "dt"
    else:
        cells = [int(n) for n in sw.cells]
        resolutions = [(hi - lo) / n for n in cells]
        sols = _map(_sweep_fv_entry, [(cfg_dict, n) for n in cells], sw.jobs)
        errors = [l1_error(a, cell_averages(ref_field, lo, hi, n), (hi - lo) / n) for a, n in zip(sols, cells)]
        label = "dx"

    orders = local_orders(resolutions, errors)
    write_csv(out / "convergence.csv", [label, "l1_error", "local_order"],
              [resolutions, errors, [np.nan if q is None else q for q in orders]])
    try:
        fitted = fit_order(resolutions, errors)
    except ValueError:
        fitted = None
    meta = {
        "command": "converge",
        "config": cfg_dict,
        "events": [],
        "reference_dt": ref_dt,
        "fitted_order": fitted,
        "rows": [{label: r, "l1_error": e, "local_order": q} for r, e, q in zip(resolutions, errors, orders)],
        "wall_time": time.perf_counter() - t0,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    print(f"fitted order: {fitted}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shockparticles", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "solve one configured problem"), ("converge", "run a resolution sweep")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True,
                       help="JSON config path, or the name of a bundled config (e.g. quartic_fig2)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. solver.dt=1/128 (repeatable)")
    return parser


def resolve_config_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = CONFIG_DIR / (name if name.endswith(".json") else name + ".json")
    return bundled if bundled.exists() else path


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(resolve_config_path(args.config), args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    command = command_run if args.command == "run" else command_converge
    try:
        return command(cfg, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, DomainError, FloatingPointError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
