"""Command-line front end.

Configuration is an INI file with sections ``[problem]``, ``[grid]``,
``[solver]`` and ``[output]``::

    [problem]
    s = 0.9
    p = 3
    lambda = 1
    coupling = 1
    potential = constant      ; constant | paper_example | table
    v_inf = 1
    ; table = potential.csv
    poisson_mode = torus

    [grid]
    n = 32
    L = 30

    [solver]
    seed = 0
    max_iters = 2000
    ; continuation = true     ; or a comma separated increasing lambda grid

    [output]
    dir = out
    run_name = demo

Exit codes: 0 success, 1 configuration or I/O error, 2 collapse,
3 non-convergence, 4 failed verification or probe inconsistent with
nonexistence.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

from . import __version__
from .fibering import NoProjectionError, ProjectionRangeError, scan_fiber
from .functionals import ProblemSpec, RegimeError, critical_exponent, evaluate, energy, residual_report
from .gridfield import FieldFormatError, GridSpec, boundary_mass_fraction, read_field, write_field
from .potentials import PotentialSpec, constant, load_radial_table, paper_example
from .solver import DEFAULT_LAMBDAS, GroundStateResult, SolverConfig, continuation, minimize_on_manifold
from . import verify

EXIT_OK, EXIT_CONFIG, EXIT_COLLAPSE, EXIT_NOCONV, EXIT_CHECK = 0, 1, 2, 3, 4

SECTIONS = ("problem", "grid", "solver", "output")
_PROBLEM_KEYS = {"s", "p", "lambda", "coupling", "potential", "v_inf", "table", "poisson_mode"}
_GRID_KEYS = {"n", "l"}
_OUTPUT_KEYS = {"dir", "run_name"}
_SOLVER_SKIP = {"init", "init_field"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} - _SOLVER_SKIP | {"continuation"}


class ConfigError(ValueError):
    """Raised with the offending key path, e.g. ``problem.s``."""


class Run:
    def __init__(self, ps: ProblemSpec, cfg: SolverConfig, out_dir: Path, run_name: str,
                 cont, config_hash: str):
        self.ps = ps
        self.cfg = cfg
        self.out_dir = out_dir
        self.run_name = run_name
        self.continuation = cont
        self.config_hash = config_hash

    @property
    def run_dir(self) -> Path:
        return self.out_dir / self.run_name


def _get(sec, key, conv, path, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"missing required key {path}.{key}")
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {path}.{key}: {raw!r} ({exc})") from None


def _bool(raw: str) -> bool:
    v = raw.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _optional_float(raw: str):
    return None if raw.lower() in ("", "none") else float(raw)


def load_config(path, seed_override=None, out_override=None) -> Run:
    path = Path(path)
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    for name in ("problem", "grid"):
        if not cp.has_section(name):
            raise ConfigError(f"missing section [{name}]")
    for name, allowed in (("problem", _PROBLEM_KEYS), ("grid", _GRID_KEYS),
                          ("solver", _SOLVER_KEYS), ("output", _OUTPUT_KEYS)):
        if cp.has_section(name):
            for key in cp[name]:
                if key not in allowed:
                    raise ConfigError(f"unknown key {name}.{key}")

    pr, gr = cp["problem"], cp["grid"]
    n = _get(gr, "n", int, "grid", required=True)
    L = _get(gr, "l", float, "grid", required=True)
    try:
        grid = GridSpec(n, L)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None

    s = _get(pr, "s", float, "problem", required=True)
    p = _get(pr, "p", lambda raw: raw if raw == "crit" else float(raw), "problem", required=True)
    lam = _get(pr, "lambda", float, "problem", 1.0)
    coupling = _get(pr, "coupling", float, "problem", 1.0)
    kind = _get(pr, "potential", str, "problem", "constant")
    mode = _get(pr, "poisson_mode", str, "problem", "torus")
    if kind == "constant":
        pot = constant(_get(pr, "v_inf", float, "problem", 1.0))
    elif kind == "paper_example":
        pot = paper_example(s)
    elif kind == "table":
        tpath = _get(pr, "table", str, "problem", required=True)
        tpath = (path.parent / tpath) if not Path(tpath).is_absolute() else Path(tpath)
        try:
            pot = load_radial_table(tpath, _get(pr, "v_inf", float, "problem"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"problem.table: {exc}") from None
    else:
        raise ConfigError(f"invalid value for problem.potential: {kind!r}")
    if p == "crit":
        # Exact critical exponent, which a decimal value would miss.
        p = critical_exponent(s)
    try:
        ps = ProblemSpec(s, p, lam, pot, grid, poisson_mode=mode, coupling=coupling)
    except (RegimeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from None

    kw = {}
    cont = None
    if cp.has_section("solver"):
        sv = cp["solver"]
        types = {f.name: f.type for f in fields(SolverConfig)}
        for key in sv:
            if key == "continuation":
                raw = sv[key].strip()
                try:
                    cont = True if _bool(raw) else None
                except ValueError:
                    try:
                        cont = [float(x) for x in raw.split(",") if x.strip()]
                    except ValueError:
                        raise ConfigError(f"invalid value for solver.continuation: {raw!r}") from None
                continue
            t = str(types[key])
            if "bool" in t:
                conv = _bool
            elif "None" in t:
                conv = _optional_float
            elif "int" in t:
                conv = int
            elif "float" in t:
                conv = float
            else:
                conv = str
            kw[key] = _get(sv, key, conv, "solver")
    if seed_override is not None:
        kw["seed"] = int(seed_override)
    # Outside the constraint-set regime the run is a plain descent probe.
    if p <= 2 and "manifold" not in kw:
        kw["manifold"] = "none"
    try:
        cfg = SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from None
    if cont is True:
        cont = list(DEFAULT_LAMBDAS)

    out = cp["output"] if cp.has_section("output") else {}
    out_dir = Path(out_override) if out_override else Path(out.get("dir", "out"))
    run_name = out.get("run_name", path.stem)
    normal = json.dumps({k: dict(cp[k]) for k in cp.sections()}, sort_keys=True)
    if seed_override is not None:
        normal += f"|seed={int(seed_override)}"
    digest = hashlib.sha256(normal.encode()).hexdigest()
    return Run(ps, cfg, out_dir, run_name, cont, digest)


def problem_to_dict(ps: ProblemSpec) -> dict:
    pot = ps.potential
    return {"s": ps.s, "p": ps.p, "lambda": ps.lam, "coupling": ps.coupling,
            "poisson_mode": ps.poisson_mode,
            "potential": {"kind": pot.kind, "v_inf": pot.v_inf, "radii": list(pot.radii),
                          "values": list(pot.values),
                          "derivatives": None if pot.derivatives is None else list(pot.derivatives)},
            "grid": {"n": ps.grid.n, "L": ps.grid.L}}


def problem_from_dict(d: dict, grid: GridSpec | None = None) -> ProblemSpec:
    pd = d["potential"]
    pot = PotentialSpec(pd["kind"], pd["v_inf"], s=d["s"] if pd["kind"] == "paper_example" else None,
                        radii=tuple(pd.get("radii", ())), values=tuple(pd.get("values", ())),
                        derivatives=None if pd.get("derivatives") is None else tuple(pd["derivatives"]))
    g = grid or GridSpec(d["grid"]["n"], d["grid"]["L"])
    return ProblemSpec(d["s"], d["p"], d["lambda"], pot, g, poisson_mode=d["poisson_mode"],
                       coupling=d["coupling"])


def _status_code(status: str) -> int:
    return {"converged": EXIT_OK, "collapsed": EXIT_COLLAPSE}.get(status, EXIT_NOCONV)


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _write_run(run: Run, result, extra: dict | None = None):
    d = run.run_dir
    d.mkdir(parents=True, exist_ok=True)
    write_field(result.field, d / "field.fspg")
    body = result.to_json_dict("field.fspg")
    body["problem"] = problem_to_dict(run.ps.with_(lam=result.lam))
    if extra:
        body.update(extra)
    (d / "result.json").write_text(json.dumps(body, indent=2, sort_keys=True))
    result.write_trace(d / "trace.csv")
    u = result.field
    manifest = {
        "config_hash": run.config_hash,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "grid": {"n": u.grid.n, "L": u.grid.L, "h": u.grid.h,
                 "initial_L": run.ps.grid.L,
                 "boundary_mass_fraction": 0.0 if u.is_zero() else boundary_mass_fraction(u),
                 "max_abs": u.max_abs()},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def cmd_solve(args) -> int:
    run = load_config(args.config, args.seed, args.out)
    if run.continuation is not None:
        cr = continuation(run.ps, run.cfg, run.continuation)
        result = cr.final
        if result is None:
            print(f"error: continuation produced no result: {cr.errors}", file=sys.stderr)
            return EXIT_NOCONV
        extra = {"continuation": {"lambdas": cr.lambdas, "levels": cr.levels,
                                  "errors": {str(k): v for k, v in cr.errors.items()}}}
    else:
        result = minimize_on_manifold(run.ps, run.cfg)
        extra = None
    _write_run(run, result, extra)
    _say(args, f"{result.status}: level {result.level:.12g} after {result.iterations} iterations "
               f"-> {run.run_dir}")
    return _status_code(result.status)


def cmd_fiber_scan(args) -> int:
    run = load_config(args.config, None, args.out)
    u = read_field(args.field)
    ps = run.ps
    if u.is_zero():
        print("error: zero field has no dilation fiber", file=sys.stderr)
        return EXIT_CONFIG
    scan = scan_fiber(u, ps, count=args.count)
    target = Path(args.csv) if args.csv else run.run_dir / "fiber.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    scan.to_csv(target)
    _say(args, f"unique_root={str(scan.unique_root).lower()} theta_star={scan.theta_star!r} -> {target}")
    return EXIT_OK


def _verify_result(body: dict, base: Path) -> dict:
    u = read_field(base / body["field_path"])
    ps = problem_from_dict(body["problem"], u.grid)
    ev = evaluate(u, ps, need_gradient=True)
    rr = residual_report(u, ps, ev)
    level = energy(ev.quartet, ps)
    scale = rr.scale or 1.0
    checks = {
        "level_matches": abs(level - body["level"]) <= 1e-10 * max(abs(level), 1.0),
        "constraint": abs(rr.constraint_g) <= 1e-8 * scale,
        "pohozaev": abs(rr.pohozaev) <= 1e-3 * scale,
        "mu_fit": abs(rr.mu_fit) <= 1e-4,
    }
    ident = verify.identity_report(ev.quartet, ps)
    checks["identities"] = ident["passed"]
    young = verify.young_inequality_check(u, ps) if ps.poisson_mode == "torus" else None
    if young is not None:
        checks["young"] = young["passed"]

    stored = GroundStateResult(u, level, ev.quartet, rr, int(body.get("iterations", 0)), [], ps.lam)
    lev = verify.level_report([stored], ps)
    checks["levels"] = lev.passed
    return {"checks": checks, "passed": all(checks.values()), "residuals": rr.to_dict(),
            "identities": ident, "young": young, "levels": lev.to_dict(), "recomputed_level": level}


def cmd_verify(args) -> int:
    path = Path(args.result)
    if path.is_dir():
        path = path / "result.json"
    body = json.loads(path.read_text())
    if body.get("status") != "converged":
        print(f"error: stored result has status {body.get('status')!r}", file=sys.stderr)
        return EXIT_CHECK
    report = _verify_result(body, path.parent)
    (path.parent / "verify.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=float))
    for k, v in report["checks"].items():
        _say(args, f"{'PASS' if v else 'FAIL'} {k}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_probe(args) -> int:
    run = load_config(args.config, args.seed, args.out)
    ps = run.ps
    if ps.p <= 2:
        seeds = [run.cfg.seed + i for i in range(3)]
        cfg = run.cfg
        rep = verify.subcritical_probe(ps, seeds, cfg)
    elif ps.is_critical:
        cfg = run.cfg if run.cfg.max_iters >= 5000 else replace(run.cfg, max_iters=5000)
        rep = verify.critical_probe(ps, [run.cfg.seed], cfg)
    else:
        raise RegimeError(f"no nonexistence probe applies to p={ps.p}: need p <= 2 "
                          f"or p = {critical_exponent(ps.s):.12g}")
    d = run.run_dir
    d.mkdir(parents=True, exist_ok=True)
    (d / "probe.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    _say(args, rep.message)
    return EXIT_OK if rep.consistent else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fspg", description="Ground states of the fractional "
                                 "Schrodinger-Poisson system and checks of their properties.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [output] dir)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="compute a ground state")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, metavar="U64")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("fiber-scan", parents=[common], help="tabulate the dilation fiber of a field")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--field", required=True, metavar="PATH")
    p.add_argument("--csv", metavar="PATH", help="CSV target (default <run dir>/fiber.csv)")
    p.add_argument("--count", type=int, default=201)
    p.set_defaults(func=cmd_fiber_scan)

    p = sub.add_parser("verify", parents=[common], help="recheck a stored result")
    p.add_argument("result", metavar="RESULT", help="result.json or its run directory")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("probe", parents=[common], help="run a nonexistence probe")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, metavar="U64")
    p.set_defaults(func=cmd_probe)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
    except (OSError, FieldFormatError, json.JSONDecodeError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
    except (NoProjectionError, ProjectionRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
