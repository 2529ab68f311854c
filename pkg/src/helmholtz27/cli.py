"""Command-line driver: weight tables, procedural models, FDFD solves,
reference fields, field comparison and dispersion curves.

Every command writes its outputs next to a run manifest
(``<output>.manifest.json``) holding the fully resolved configuration, its
hash, package versions, the weight-table digest, timings and solver
statistics.  Each output file names its manifest.

Options may also come from a TOML file (``--config``); keys are option
names with underscores, either at top level or under a table named after
the command.  Flags given on the command line win.

Exit codes: 0 success, 2 usage, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import tomli
from threadpoolctl import threadpool_limits

from .assembly import MASS_MODES, SOURCE_SCALINGS, AssemblyError, StencilVariant, assemble, dump_matrix_market
from .dispersion import (
    WeightTable,
    dispersion_curves,
    solve_weights_adaptive,
    solve_weights_joint,
    solve_weights_single,
    write_dispersion_csv,
)
from .linsolve import METHODS, ConvergenceError, SolverBreakdown, SolverConfig, write_residual_history
from .metrics import error_metric, line_profile, write_line_profile
from .model import (
    ModelFileError,
    NonFiniteError,
    SourceSpec,
    homogeneous_model,
    linear_gradient_model,
    load_field,
    load_model,
    salt_body_model,
    save_field,
    save_model,
)
from .reference import CbsConfig, CbsNotConverged, analytic_homogeneous, cbs_solve
from .simulation import SimulationConfig, config_hash, run_fdfd

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class UsageError(ValueError):
    pass


# -- argument types ----------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _triple(kind):
    def parse(text: str):
        vals = _floats(text)
        if len(vals) != 3:
            raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
        return tuple(kind(v) for v in vals)
    return parse


def _g_range(text: str) -> tuple[float, float]:
    """``lo..hi`` or a single value."""
    lo, sep, hi = str(text).partition("..")
    try:
        a = float(lo)
        b = float(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected G or Gmin..Gmax, got {text!r}") from None
    if not 0 < a <= b:
        raise argparse.ArgumentTypeError(f"need 0 < Gmin <= Gmax, got {text!r}")
    return a, b


def _variant(text: str) -> str:
    canon = {t.lower(): t for t in StencilVariant.TAGS}.get(str(text).lower())
    if canon is None:
        raise argparse.ArgumentTypeError(f"unknown variant {text!r}; choose from {', '.join(StencilVariant.TAGS)}")
    return canon


# -- parser --------------------------------------------------------------------------


def _add_solver_flags(p):
    p.add_argument("--method", choices=METHODS, default="gmres")
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--restart", type=int, default=30)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="helmholtz27", allow_abbrev=False, description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", type=Path, help="TOML file with option defaults")
    ap.add_argument("--threads", type=int, default=None, help="BLAS/FFT worker threads")
    ap.add_argument("--deterministic", action="store_true", help="serial reductions and FFTs")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="fit stencil weights and write a weight table")
    p.add_argument("--mode", choices=("single", "joint", "adaptive"), required=True)
    p.add_argument("--g", type=float, help="G for --mode single")
    p.add_argument("--gs", type=_floats, help="comma-separated G values for --mode joint")
    p.add_argument("--step", type=float, default=1e-3, help="1/G spacing for --mode adaptive")
    p.add_argument("--inv-g-max", type=float, default=0.4, help="largest 1/G for --mode adaptive")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="smoothing weight (default: automatic)")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("make-model", help="write a procedural velocity model")
    p.add_argument("--kind", choices=("homogeneous", "gradient", "salt"), required=True)
    p.add_argument("--shape", type=_triple(int), required=True)
    p.add_argument("--h", type=float, required=True, help="grid spacing in metres")
    p.add_argument("--c", type=float, default=1500.0, help="wavespeed of a homogeneous model")
    p.add_argument("--c-start", type=float, default=1500.0)
    p.add_argument("--c-end", type=float, default=4500.0)
    p.add_argument("--axis", type=int, choices=(0, 1, 2), default=1)
    p.add_argument("--c-body", type=float, default=4482.0)
    p.add_argument("--roughness", type=float, default=0.15)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("solve", help="assemble and solve the FDFD system")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--freq", type=float, required=True)
    p.add_argument("--source", type=_triple(float), required=True, help="x,y,z in metres")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--variant", type=_variant, default="GA")
    p.add_argument("--weights", type=Path, help="weight table CSV for GA/GAm")
    p.add_argument("--npml", type=int, default=12)
    p.add_argument("--r-coeff", type=float, default=1e-3)
    p.add_argument("--mass-mode", choices=MASS_MODES, default="heterogeneous_kappa")
    p.add_argument("--source-scaling", choices=SOURCE_SCALINGS, default="nodal")
    _add_solver_flags(p)
    p.add_argument("--residuals", type=Path, help="write the residual history CSV here")
    p.add_argument("--matrix", type=Path, help="also dump the matrix (Matrix Market)")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("reference", help="analytic or CBS reference field")
    p.add_argument("kind", choices=("analytic", "cbs"))
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--freq", type=float, required=True)
    p.add_argument("--source", type=_triple(float), required=True, help="x,y,z in metres")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--npml", type=int, default=12, help="pad cells to match an FDFD field layout")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iters", type=int, default=50000)
    p.add_argument("--pad", type=int, default=None, help="CBS absorbing pad in cells")
    p.add_argument("--pad-wavelengths", type=float, default=4.0)
    p.add_argument("--refine", type=int, default=1)
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("compare", help="gain-weighted error of a field against a reference")
    p.add_argument("reference_field", type=Path)
    p.add_argument("test_field", type=Path)
    p.add_argument("--source", type=_triple(float), required=True, help="x,y,z in metres")
    p.add_argument("--ball", type=float, default=2.0, help="masked source radius in cells")
    p.add_argument("--profile-axis", type=int, choices=(0, 1, 2), default=None,
                   help="also write line profiles through the source along this axis")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("dispersion", help="normalised phase-velocity curves")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--weights", type=Path, help="weight table CSV (one row or adaptive)")
    grp.add_argument("--variant", type=_variant, help="built-in weights (GA/GAm use the default table)")
    p.add_argument("--g", type=_g_range, default=(4.0, 10.0), help="Gmin..Gmax")
    p.add_argument("--n", type=int, default=61, help="number of 1/G samples")
    p.add_argument("-o", "--output", type=Path, required=True)
    return ap


# -- config file ---------------------------------------------------------------------


def _config_path(argv) -> Path | None:
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    return known.config


def _subparser(ap, name):
    for action in ap._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config(ap, argv, path: Path):
    """Install defaults from the TOML file before ``argv`` is parsed."""
    try:
        data = tomli.loads(path.read_text())
    except OSError as exc:
        raise ModelFileError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    pre.add_argument("--threads")
    pre.add_argument("--deterministic", action="store_true")
    _, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if a in HANDLERS), None)
    if command is None:
        return
    sp = _subparser(ap, command)
    dests = {a.dest: a for a in sp._actions if a.dest != "help"}
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(command, {}))
    defaults = {}
    for key, val in merged.items():
        dest = "lam" if key == "lambda" else key.replace("-", "_")
        if dest in ("threads", "deterministic"):
            ap.set_defaults(**{dest: val})
            continue
        if dest not in dests:
            raise UsageError(f"config key {key!r} is not an option of {command!r}")
        action = dests[dest]
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        if action.type is not None and not isinstance(val, bool):
            try:
                val = action.type(str(val))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from exc
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"config key {key!r}: {val!r} not in {list(action.choices)}")
        defaults[dest] = val
    sp.set_defaults(**defaults)
    # required options supplied by the file are no longer demanded on the command line
    for action in sp._actions:
        if action.dest in defaults:
            action.required = False


# -- manifest ------------------------------------------------------------------------


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def _manifest_path(output: Path) -> Path:
    return output.with_name(output.name.split(".")[0] + ".manifest.json")


class Run:
    """Collects what the manifest records while a command executes."""

    def __init__(self, args):
        self.args = args
        skip = {"config", "output", "handler"}
        self.config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}
        self.manifest = _manifest_path(args.output)
        self.timings: dict[str, float] = {}
        self.stats: dict = {}
        self.table_id: str | None = None
        self.outputs: list[Path] = []
        self._t0 = time.perf_counter()

    @property
    def hash(self) -> str:
        return config_hash(self.config)

    @property
    def ref(self) -> dict:
        return {"manifest": self.manifest.name, "config_hash": self.hash}

    def time(self, key: str, t_start: float):
        self.timings[key] = time.perf_counter() - t_start

    def finish(self, status: str = "ok"):
        self.timings["total_s"] = time.perf_counter() - self._t0
        doc = {
            "command": self.args.command,
            "status": status,
            "argv": sys.argv[1:],
            "config": self.config,
            "config_hash": self.hash,
            "versions": _versions(),
            "weight_table_sha256": self.table_id,
            "timings": self.timings,
            "stats": self.stats,
            "outputs": {p.name: _sha256(p) for p in self.outputs if p.exists()},
        }
        try:
            self.manifest.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        except OSError as exc:
            raise ModelFileError(f"cannot write manifest {self.manifest}: {exc}") from exc


def _table_digest(table: WeightTable) -> str:
    return hashlib.sha256(table.to_csv().encode()).hexdigest()


def _load_table(path: Path) -> WeightTable:
    try:
        return WeightTable.from_csv(Path(path).read_text())
    except OSError as exc:
        raise ModelFileError(f"cannot read weight table {path}: {exc}") from exc
    except ValueError as exc:
        raise ModelFileError(f"malformed weight table {path}: {exc}") from exc


# -- commands ------------------------------------------------------------------------


def cmd_weights(args, run: Run):
    t0 = time.perf_counter()
    if args.mode == "single":
        if args.g is None:
            raise UsageError("--mode single needs --g")
        w = solve_weights_single(args.g)
        table = WeightTable(1.0 / args.g, 1.0 / args.g, 1.0, w.as_array()[None, :])
    elif args.mode == "joint":
        if not args.gs:
            raise UsageError("--mode joint needs --gs")
        w = solve_weights_joint(args.gs)
        x = 1.0 / max(args.gs)
        table = WeightTable(x, x, 1.0, w.as_array()[None, :])
    else:
        if not (args.step > 0 and args.inv_g_max >= args.step):
            raise UsageError("--step and --inv-g-max must be positive with inv-g-max >= step")
        n = int(round(args.inv_g_max / args.step))
        grid = np.round(np.arange(1, n + 1) * args.step, 12)
        table = solve_weights_adaptive(grid, lam=args.lam)
    run.time("fit_s", t0)
    meta = {"mode": args.mode, **{f"run_{k}": v for k, v in run.ref.items()}}
    if args.mode == "joint":
        meta["fit_g"] = ",".join(f"{g:g}" for g in args.gs)
    table.to_csv(args.output, meta=meta)
    run.table_id = _table_digest(table)
    run.outputs.append(args.output)
    run.stats = {"rows": len(table), "lambda": table.lam}
    return f"wrote {len(table)} row(s) to {args.output}"


def cmd_make_model(args, run: Run):
    if args.kind == "homogeneous":
        model = homogeneous_model(args.shape, args.h, args.c)
    elif args.kind == "gradient":
        model = linear_gradient_model(args.shape, args.h, args.c_start, args.c_end, args.axis)
    else:
        model = salt_body_model(args.shape, args.h, args.c, args.c_body, roughness=args.roughness)
    raw, side = save_model(model, args.output, provenance=run.ref)
    run.outputs += [raw, side]
    return f"wrote model {model.shape} to {raw}"


def _variant_for(args, run: Run) -> StencilVariant:
    table = _load_table(args.weights) if args.weights else None
    variant = StencilVariant.from_tag(args.variant, table=table)
    if variant.table is not None:
        run.table_id = _table_digest(variant.table)
    return variant


def cmd_solve(args, run: Run):
    model = load_model(args.model)
    run.config["model_sha256"] = _sha256(args.model.with_suffix(".f32raw"))
    source = SourceSpec(args.source, args.amplitude)
    solver = SolverConfig(args.method, args.rel_tol, args.max_iter, args.restart)
    cfg = SimulationConfig(args.freq, source, args.variant, args.npml, args.r_coeff, args.mass_mode,
                           args.source_scaling, solver)
    run.config["resolved"] = cfg.as_dict()
    variant = _variant_for(args, run)
    if args.matrix:
        t0 = time.perf_counter()
        dump_matrix_market(assemble(model, cfg.freq, cfg.pml, variant, cfg.mass_mode), args.matrix,
                           comment=f"manifest={run.manifest.name}")
        run.time("matrix_dump_s", t0)
        run.outputs.append(args.matrix)
    try:
        res = run_fdfd(model, cfg, table=variant.table)
    except ConvergenceError as exc:
        run.stats = exc.stats.as_dict()
        if args.residuals:
            write_residual_history(exc.stats, args.residuals)
        raise
    run.timings["assembly_s"] = res.assembly_time
    run.timings["solve_s"] = res.stats.wall_time
    run.stats = {**res.stats.as_dict(), "nnz": res.nnz, "unknowns": int(np.prod(res.field.shape))}
    raw, side = save_field(res.field, args.output, provenance=run.ref)
    run.outputs += [raw, side]
    if args.residuals:
        write_residual_history(res.stats, args.residuals)
        run.outputs.append(args.residuals)
    return (f"{cfg.variant}: {res.stats.iterations} iterations, residual {res.stats.residual:.2e}, "
            f"wrote {raw}")


def cmd_reference(args, run: Run):
    model = load_model(args.model)
    run.config["model_sha256"] = _sha256(args.model.with_suffix(".f32raw"))
    source = SourceSpec(args.source, args.amplitude)
    t0 = time.perf_counter()
    if args.kind == "analytic":
        if not model.is_homogeneous:
            raise UsageError("the analytic reference needs a homogeneous model")
        fld = analytic_homogeneous(model.shape, model.h, float(model.c.flat[0]), args.freq, source, args.npml)
    else:
        workers = 1 if args.deterministic else args.threads
        cfg = CbsConfig(tol=args.tol, max_iters=args.max_iters, pad=args.pad,
                        pad_wavelengths=args.pad_wavelengths, refine=args.refine, workers=workers)
        try:
            res = cbs_solve(model, args.freq, source, cfg, npml=args.npml)
        except CbsNotConverged as exc:
            run.stats = exc.result.as_dict()
            raise
        fld = res.field
        run.stats = res.as_dict()
    run.time("reference_s", t0)
    raw, side = save_field(fld, args.output, provenance=run.ref)
    run.outputs += [raw, side]
    return f"wrote {args.kind} reference to {raw}"


def cmd_compare(args, run: Run):
    ref = load_field(args.reference_field)
    test = load_field(args.test_field)
    run.config["inputs_sha256"] = {
        "reference": _sha256(args.reference_field.with_suffix(".f32raw")),
        "test": _sha256(args.test_field.with_suffix(".f32raw")),
    }
    source = SourceSpec(args.source)
    rep = error_metric(ref, test, source, ball_cells=args.ball)
    run.stats = json.loads(rep.to_json())
    rep.to_json(args.output, **run.ref)
    run.outputs.append(args.output)
    if args.profile_axis is not None:
        stem = args.output.with_suffix("")
        for tag, fld in (("reference", ref), ("test", test)):
            path = stem.with_name(f"{stem.name}.profile_{tag}.csv")
            write_line_profile(line_profile(fld, source, args.profile_axis), path)
            run.outputs.append(path)
    return f"err = {rep.err:.6g} (real {rep.real_part:.4g}, imag {rep.imag_part:.4g})"


def cmd_dispersion(args, run: Run):
    if args.weights:
        table = _load_table(args.weights)
        run.table_id = _table_digest(table)
        weights = table.row(0) if len(table) == 1 else table
    else:
        variant = StencilVariant.from_tag(args.variant)
        weights = variant.weights if variant.weights is not None else variant.table
        if variant.table is not None:
            run.table_id = _table_digest(variant.table)
    if args.n < 1:
        raise UsageError("--n must be positive")
    g_lo, g_hi = args.g
    inv_g = np.linspace(1.0 / g_hi, 1.0 / g_lo, args.n)
    curves = dispersion_curves(weights, inv_g)
    write_dispersion_csv(curves, args.output)
    run.outputs.append(args.output)
    dev = np.abs(curves["v_norm"] - 1.0)
    run.stats = {"max_abs_deviation": float(dev.max()), "min_v": float(curves["v_norm"].min()),
                 "max_v": float(curves["v_norm"].max())}
    return f"max |v - 1| = {dev.max():.3e} over G in [{g_lo:g}, {g_hi:g}]"


HANDLERS = {
    "weights": cmd_weights,
    "make-model": cmd_make_model,
    "solve": cmd_solve,
    "reference": cmd_reference,
    "compare": cmd_compare,
    "dispersion": cmd_dispersion,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        config = _config_path(argv)
        if config is not None:
            _apply_config(ap, argv, config)
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    limit = 1 if args.deterministic else args.threads
    run = None
    try:
        with threadpool_limits(limits=limit):
            run = Run(args)
            msg = HANDLERS[args.command](args, run)
            run.finish()
    except (ConvergenceError, SolverBreakdown, CbsNotConverged, AssemblyError, NonFiniteError,
            ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if run is not None:
            try:
                run.finish(status=f"numerical failure: {exc}")
            except OSError:
                pass
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(msg)
    return EXIT_OK
