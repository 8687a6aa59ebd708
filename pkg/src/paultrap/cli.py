"""Command-line front end.

Every subcommand is described by a dataclass whose fields are its parameters.
Values resolve as: field default, then ``key = value`` lines from ``--config``,
then command-line flags. The resolved configuration is echoed to a manifest
written next to the data file (``<out>.manifest.json``), or to stderr when the
data go to stdout.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import crystal, hagedorn, hill, oracle, records, states
from .rk import IntegrationError

__version__ = "0.1.0"

class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


def _param(default, help: str, kind=None):
    return dataclasses.field(default=default, metadata={"help": help, "kind": kind})


# --------------------------------------------------------------------------- configs


@dataclass
class StabilityConfig:
    a: str = _param("0:0.5:200", "a range lo:hi:count", "range")
    qm: str = _param("0:1:400", "q_M range lo:hi:count", "range")
    omega: float = _param(2.0, "drive frequency Omega")
    tol: float = _param(hill.DEFAULT_TOL, "integrator relative tolerance")
    format: str = _param("csv", "csv or pgm (csv runs also write a .pgm raster)")


@dataclass
class FloquetConfig:
    a: float = _param(0.0, "Mathieu a")
    qm: float = _param(0.0, "Mathieu q_M")
    omega: float = _param(2.0, "drive frequency Omega")
    lam: str = _param("", "generalized mode: comma-separated lambda samples over one period", "floats")
    c: str = _param("", "generalized mode: comma-separated c samples over one period", "floats")
    tol: float = _param(hill.DEFAULT_TOL, "integrator relative tolerance")
    format: str = _param("jsonl", "jsonl")


@dataclass
class WavefunctionConfig:
    a: float = _param(0.0, "Mathieu a")
    qm: float = _param(0.4, "Mathieu q_M")
    omega: float = _param(2.0, "drive frequency Omega")
    n: int = _param(0, "quasienergy level")
    t: str = _param("0", "time, or range lo:hi:count", "times")
    m: float = _param(1.0, "mass")
    hbar: float = _param(1.0, "reduced Planck constant")
    points: int = _param(1024, "grid points")
    widths: float = _param(12.0, "grid half-width in state widths")
    tol: float = _param(hill.DEFAULT_TOL, "integrator relative tolerance")
    format: str = _param("csv", "csv (single time) or jsonl")


@dataclass
class OverlapConfig:
    a: float = _param(0.0, "Mathieu a")
    qm: float = _param(0.4, "Mathieu q_M")
    omega: float = _param(2.0, "drive frequency Omega")
    n_max: int = _param(3, "highest level")
    t: str = _param("0:3.141592653589793:16", "time, or range lo:hi:count", "times")
    m: float = _param(1.0, "mass")
    hbar: float = _param(1.0, "reduced Planck constant")
    points: int = _param(1024, "grid points")
    widths: float = _param(12.0, "grid half-width in state widths")
    tol: float = _param(hill.DEFAULT_TOL, "integrator relative tolerance")
    format: str = _param("csv", "csv or jsonl")


@dataclass
class PropagateConfig:
    potential: str = _param("harmonic", "harmonic, free, paul or anharmonic")
    freq: float = _param(1.0, "oscillator frequency (harmonic, anharmonic)")
    quartic: float = _param(0.1, "quartic coefficient (anharmonic)")
    a: float = _param(0.0, "Mathieu a (paul)")
    qm: float = _param(0.3, "Mathieu q_M (paul)")
    omega: float = _param(2.0, "drive frequency Omega (paul)")
    q0: float = _param(1.0, "initial position")
    p0: float = _param(0.0, "initial momentum")
    k: int = _param(0, "Hermite index")
    width: float = _param(1.0, "initial width (A = width, B = 1/width)")
    m: float = _param(1.0, "mass")
    hbar: float = _param(1.0, "reduced Planck constant")
    t_end: float = _param(10.0, "final time")
    samples: int = _param(11, "output times (including start and end)")
    tol: float = _param(hagedorn.HAGEDORN_RTOL, "integrator relative tolerance")
    grid: str = _param("-5:5:256", "evaluation grid for csv output, lo:hi:count", "range")
    format: str = _param("jsonl", "jsonl (trace) or csv (final packet on the grid)")


@dataclass
class CrystalConfig:
    model: str = _param("coulomb", "coulomb, calogero or calogero-printed")
    n: int = _param(3, "number of ions")
    d: int = _param(1, "spatial dimension")
    b: float = _param(1.0, "harmonic coefficient")
    ac: float = _param(1.0, "interaction strength")
    g: float = _param(1.0, "Calogero coupling")
    seed: int = _param(0, "random seed for initial configurations")
    starts: int = _param(1, "number of random initial configurations")
    scale: float = _param(2.0, "initial configurations drawn from [-scale, scale]")
    tol: float = _param(1e-10, "residual tolerance")
    format: str = _param("jsonl", "jsonl or csv (1-D chains)")


@dataclass
class OracleCheckConfig:
    a: float = _param(0.0, "Mathieu a")
    qm: float = _param(0.3, "Mathieu q_M")
    omega: float = _param(2.0, "drive frequency Omega")
    n_max: int = _param(3, "highest level checked")
    periods: int = _param(2, "drive periods evolved")
    steps: int = _param(4096, "split-step steps per period")
    m: float = _param(1.0, "mass")
    hbar: float = _param(1.0, "reduced Planck constant")
    points: int = _param(1024, "grid points (power of two)")
    widths: float = _param(12.0, "grid half-width in state widths")
    tol: float = _param(hill.DEFAULT_TOL, "integrator relative tolerance")
    format: str = _param("jsonl", "jsonl")


COMMANDS = {
    "stability": StabilityConfig,
    "floquet": FloquetConfig,
    "wavefunction": WavefunctionConfig,
    "overlap": OverlapConfig,
    "propagate": PropagateConfig,
    "crystal": CrystalConfig,
    "oracle-check": OracleCheckConfig,
}

# ------------------------------------------------------------------------- parsing


def parse_range(text: str, name: str) -> tuple[float, float, int]:
    parts = str(text).split(":")
    try:
        if len(parts) != 3:
            raise ValueError
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"--{name}: expected lo:hi:count, got {text!r}") from None
    if count < 1:
        raise UsageError(f"--{name}: count must be at least 1")
    return lo, hi, count


def parse_times(text: str, name: str) -> np.ndarray:
    if ":" in str(text):
        lo, hi, count = parse_range(text, name)
        return np.linspace(lo, hi, count)
    try:
        return np.array([float(text)])
    except ValueError:
        raise UsageError(f"--{name}: expected a number or lo:hi:count, got {text!r}") from None


def parse_floats(text: str, name: str) -> Optional[np.ndarray]:
    if not str(text).strip():
        return None
    try:
        return np.array([float(v) for v in str(text).split(",")])
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


def _convert(cls, key: str, raw):
    f = {f.name: f for f in fields(cls)}[key]
    typ = f.type if isinstance(f.type, type) else {"float": float, "int": int, "str": str}[f.type]
    try:
        if typ is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return typ(raw)
    except (TypeError, ValueError):
        raise UsageError(f"--{key}: expected {typ.__name__}, got {raw!r}") from None


def read_config_file(path: str, cls) -> dict:
    known = {f.name for f in fields(cls)}
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} (accepted: {', '.join(sorted(known))})")
        out[key] = _convert(cls, key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="paultrap", description="Paul-trap Floquet, quasienergy-state and ion-crystal tools")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, cls in COMMANDS.items():
        p = sub.add_parser(name, help=cls.__name__.replace("Config", "").lower())
        p.add_argument("--config", default=None, help="plain-text file of key = value lines")
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        for f in fields(cls):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, default=argparse.SUPPRESS, help=f"{f.metadata['help']} (default {f.default})")
    return parser


def resolve(argv) -> tuple[str, object, Optional[str]]:
    args = vars(build_parser().parse_args(argv))
    name = args.pop("command")
    cls = COMMANDS[name]
    config_path = args.pop("config")
    out = args.pop("out")
    values = {}
    if config_path:
        values.update(read_config_file(config_path, cls))
    for key, raw in args.items():
        values[key] = _convert(cls, key, raw)
    cfg = cls(**values)
    allowed = {
        StabilityConfig: ("csv", "pgm"),
        WavefunctionConfig: ("csv", "jsonl"),
        OverlapConfig: ("csv", "jsonl"),
        PropagateConfig: ("csv", "jsonl"),
        CrystalConfig: ("csv", "jsonl"),
    }.get(cls, ("jsonl",))
    if cfg.format not in allowed:
        raise UsageError(f"--format: {name} accepts {', '.join(allowed)}, got {cfg.format!r}")
    return name, cfg, out


def worker_count() -> int:
    cap = os.environ.get("PAULTRAP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"PAULTRAP_THREADS must be an integer, got {cap!r}") from None
    return n


# ------------------------------------------------------------------------- commands


def _hill_params(cfg) -> hill.HillParameters:
    return hill.HillParameters(a=cfg.a, q_m=cfg.qm, Omega=cfg.omega)


def _stable_context(cfg, t_end: float):
    params = _hill_params(cfg)
    res = hill.monodromy(params, cfg.tol)
    if res.stability is not hill.Stability.STABLE:
        raise DomainError(f"operating point (a={cfg.a}, q_M={cfg.qm}) is {res.stability.value}")
    omega = hill.floquet_omega(res)
    trace = hill.integrate_hill(params, omega, max(t_end, res.period), tol=cfg.tol, dense=True)
    return params, res, states.OscillatorContext(cfg.m, cfg.hbar, omega, trace)


def run_stability(cfg: StabilityConfig) -> list:
    a0, a1, na = parse_range(cfg.a, "a")
    q0, q1, nq = parse_range(cfg.qm, "qm")
    grid = hill.stability_scan(a0, a1, q0, q1, na, nq, hill.HillParameters(Omega=cfg.omega),
                               cfg.tol, workers=worker_count())
    if cfg.format == "pgm":
        return [("", records.stability_pgm(grid))]
    return [("", records.stability_csv(grid)), (".pgm", records.stability_pgm(grid))]


def run_floquet(cfg: FloquetConfig) -> list:
    lam = parse_floats(cfg.lam, "lam")
    c = parse_floats(cfg.c, "c")
    if (lam is None) != (c is None):
        raise UsageError("--lam and --c must be given together")
    if lam is not None:
        params = hill.HillParameters(Omega=cfg.omega, lam=lam, c=c)
    else:
        params = _hill_params(cfg)
    res = hill.monodromy(params, cfg.tol)
    return [("", records.jsonl_text([res.to_dict()]))]


def run_wavefunction(cfg: WavefunctionConfig) -> list:
    times = parse_times(cfg.t, "t")
    if cfg.format == "csv" and len(times) != 1:
        raise UsageError("--format csv takes a single time; use jsonl for several")
    _, _, ctx = _stable_context(cfg, float(times.max()))
    grid = states.default_grid(ctx, cfg.points, cfg.widths)
    samples = [states.sample_state(cfg.n, float(t), ctx, grid) for t in times]
    if cfg.format == "csv":
        return [("", samples[0].to_csv())]
    return [("", records.jsonl_text(s.to_record() for s in samples))]


def run_overlap(cfg: OverlapConfig) -> list:
    times = parse_times(cfg.t, "t")
    _, res, ctx = _stable_context(cfg, float(times.max()))
    grid = states.default_grid(ctx, cfg.points, cfg.widths)
    pseudo = states.pseudopotential_states(cfg.n_max, ctx, res, grid)
    rows = []
    for t in times:
        for n in range(cfg.n_max + 1):
            f = states.overlap_fn(n, float(t), ctx, pseudo)
            rows.append((float(t), n, f.real, f.imag, abs(f)))
    header = ("t", "n", "re", "im", "abs")
    if cfg.format == "csv":
        return [("", records.csv_text(header, rows))]
    return [("", records.jsonl_text(dict(zip(header, r)) for r in rows))]


def _potential(cfg: PropagateConfig) -> hagedorn.PotentialModel:
    if cfg.potential == "harmonic":
        return hagedorn.harmonic_potential(cfg.freq, cfg.m)
    if cfg.potential == "free":
        return hagedorn.free_potential()
    if cfg.potential == "paul":
        return hagedorn.paul_potential(hill.HillParameters(cfg.a, cfg.qm, cfg.omega), cfg.m)
    if cfg.potential == "anharmonic":
        return hagedorn.anharmonic_potential(cfg.freq, cfg.quartic, cfg.m)
    raise UsageError(f"--potential: expected harmonic, free, paul or anharmonic, got {cfg.potential!r}")


def run_propagate(cfg: PropagateConfig) -> list:
    V = _potential(cfg)
    hagedorn.check_potential(V)
    if cfg.samples < 2:
        raise UsageError("--samples must be at least 2")
    state = hagedorn.PacketState.standard(cfg.q0, cfg.p0, cfg.hbar, (cfg.k,), cfg.m, cfg.width)
    times = np.linspace(0.0, cfg.t_end, cfg.samples)
    trace = hagedorn.propagate_packet(V, state, cfg.t_end, tol=cfg.tol, t_eval=times)
    if cfg.format == "jsonl":
        return [("", trace.to_jsonl())]
    lo, hi, count = parse_range(cfg.grid, "grid")
    x = np.linspace(lo, hi, count)
    psi = hagedorn.packet_wavefunction(trace.final, x[:, None])
    return [("", records.csv_text(("x", "re", "im"), zip(x, psi.real, psi.imag)))]


def run_crystal(cfg: CrystalConfig) -> list:
    if cfg.model == "coulomb":
        params = crystal.coulomb_parameters(cfg.n, cfg.d, cfg.b, cfg.ac)
    elif cfg.model in ("calogero", "calogero-printed"):
        if cfg.d != 1:
            raise UsageError("--d: Calogero chains are one-dimensional")
        params = crystal.calogero_parameters(cfg.n, cfg.b, cfg.ac, cfg.g, cfg.model == "calogero-printed")
    else:
        raise UsageError(f"--model: expected coulomb, calogero or calogero-printed, got {cfg.model!r}")
    if cfg.model == "coulomb":
        if cfg.starts < 1:
            raise UsageError("--starts must be at least 1")
        configs = crystal.multistart(params, cfg.starts, cfg.seed, cfg.scale, cfg.tol, worker_count())
        best = configs[min(range(len(configs)), key=lambda i: (configs[i].energy, i))]
        record = best.to_dict()
        record["starts"] = cfg.starts
        record["start_energies"] = [c.energy for c in configs]
        cfg_out = best
    else:
        result = crystal.calogero_equilibrium(params)
        if not result.consistent:
            print(f"warning: {result.message}", file=sys.stderr)
        record = result.to_dict()
        cfg_out = result.configuration
    if cfg.format == "csv":
        if cfg.d != 1:
            raise UsageError("--format csv is defined for d = 1 chains")
        return [("", cfg_out.to_csv())]
    return [("", records.jsonl_text([record]))]


def run_oracle_check(cfg: OracleCheckConfig) -> list:
    if cfg.periods < 1 or cfg.steps < 1:
        raise UsageError("--periods and --steps must be positive")
    params = _hill_params(cfg)
    T = params.period
    _, res, ctx = _stable_context(cfg, cfg.periods * T)
    grid_x = states.default_grid(ctx, cfg.points, cfg.widths)
    try:
        spec = oracle.GridSpec(cfg.points, float(-grid_x[0]))
    except ValueError as exc:
        raise UsageError(f"--points: {exc}") from None
    V = lambda t, X: 0.5 * cfg.m * hill.hill_coefficient(t, params) * X[..., 0] ** 2
    times = [k * T for k in range(1, cfg.periods + 1)]
    recs, overlaps = [], []
    for n in range(cfg.n_max + 1):
        psi0 = oracle.EvolvedState(spec, states.phin(n, grid_x, 0.0, ctx).astype(complex), 0.0)
        evolved = oracle.evolve_to(V, psi0, times, T / cfg.steps, cfg.m, cfg.hbar)
        for t, st in zip(times, evolved):
            exact = oracle.EvolvedState(spec, states.phin(n, grid_x, t, ctx), t)
            ov = oracle.overlap(psi0, st)
            recs.append({"n": n, "t": t, "l2_error": oracle.l2_distance(st, exact),
                         "overlap_re": ov.real, "overlap_im": ov.imag})
        overlaps.append(oracle.overlap(psi0, evolved[0]))
    E0, per_n = hill.fit_ground_coefficient(overlaps, list(range(cfg.n_max + 1)), res.mu, T, cfg.hbar)
    recs.append({"summary": True, "E0": E0, "E0_per_n": [float(v) for v in per_n],
                 "max_l2_error": max(r["l2_error"] for r in recs), "floquet_mu": res.mu})
    return [("", records.jsonl_text(recs))]


RUNNERS = {
    "stability": run_stability,
    "floquet": run_floquet,
    "wavefunction": run_wavefunction,
    "overlap": run_overlap,
    "propagate": run_propagate,
    "crystal": run_crystal,
    "oracle-check": run_oracle_check,
}

DOMAIN_ERRORS = (
    DomainError,
    IntegrationError,
    hill.BranchError,
    states.NodeCollapseError,
    states.ResolutionError,
    states.NoPseudopotentialError,
    oracle.BoxTooSmallError,
    hagedorn.AccuracyError,
    hagedorn.InvariantError,
    hagedorn.DecompositionError,
    crystal.SingularityError,
    crystal.ConvergenceError,
    ValueError,
)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        name, cfg, out = resolve(argv)
        outputs = RUNNERS[name](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    resolved = dataclasses.asdict(cfg)
    resolved["threads"] = worker_count() if name in ("stability", "crystal") else 1
    if out is None:
        for suffix, data in outputs:
            if suffix == "":
                if isinstance(data, bytes):
                    sys.stdout.buffer.write(data)
                else:
                    sys.stdout.write(data)
        sys.stderr.write(records.manifest_text(name, resolved, ["<stdout>"], __version__))
        return 0
    base = Path(out)
    written = []
    for suffix, data in outputs:
        path = base if suffix == "" else base.with_suffix(suffix)
        records.write_output(path, data)
        written.append(path.name)
    manifest = base.with_name(base.name + ".manifest.json")
    records.write_output(manifest, records.manifest_text(name, resolved, written, __version__))
    return 0


if __name__ == "__main__":
    sys.exit(main())
